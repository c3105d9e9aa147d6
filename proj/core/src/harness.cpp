#include "tforge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

void SynthSpec::validate() const {
    if (n_object_classes < 1) throw std::invalid_argument("n_object_classes must be >= 1");
    if (n_predicates < 3) throw std::invalid_argument("n_predicates must be >= 3");
    if (tail_exponent <= 0.0) throw std::invalid_argument("tail_exponent must be positive");
    if (pairs_per_predicate < 1) throw std::invalid_argument("pairs_per_predicate must be >= 1");
    const long long all_pairs =
        static_cast<long long>(n_object_classes) * n_object_classes;
    if (pairs_per_predicate > all_pairs)
        throw std::invalid_argument("pairs_per_predicate exceeds available class pairs");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
    if (feature_noise < 0.0) throw std::invalid_argument("feature_noise must be >= 0");
    if (box_noise < 0.0) throw std::invalid_argument("box_noise must be >= 0");
    if (n_train_triplets < 1) throw std::invalid_argument("n_train_triplets must be >= 1");
    if (n_test_per_predicate < 1) throw std::invalid_argument("n_test_per_predicate must be >= 1");
    if (triplets_per_image < 1) throw std::invalid_argument("triplets_per_image must be >= 1");
    if (negatives_per_image < 0) throw std::invalid_argument("negatives_per_image must be >= 0");
    for (const ConfusionPair& c : confusions) {
        if (c.general < 1 || c.general > n_predicates || c.informative < 1 ||
            c.informative > n_predicates)
            throw std::invalid_argument("confusion predicate out of range");
        if (c.general == c.informative)
            throw std::invalid_argument("confusion pair must name two predicates");
        if (c.rate < 0.0 || c.rate > 1.0)
            throw std::invalid_argument("confusion rate must lie in [0, 1]");
    }
}

SynthSpec default_synth_spec() {
    SynthSpec spec;
    // mid-frequency generals absorbing tail informatives: keeps the
    // mislabeled share of each general pool large enough for the
    // parent-child affinity to clear its threshold
    spec.confusions = {{4, 7, 0.5}, {5, 8, 0.5}, {6, 9, 0.5}};
    return spec;
}

void HarnessConfig::validate() const {
    for (double k : {k_i, k_e, k_s})
        if (k < 0.0 || k > 100.0) throw std::invalid_argument("percentile must lie in [0, 100]");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (batch_images < 1) throw std::invalid_argument("batch_images must be >= 1");
    if (head_hidden < 1) throw std::invalid_argument("head_hidden must be >= 1");
    if (eval_ks.empty()) throw std::invalid_argument("eval_ks must not be empty");
    for (int k : eval_ks)
        if (k < 1) throw std::invalid_argument("eval_ks entries must be >= 1");
    if (resample_n < 0) throw std::invalid_argument("resample_n must be >= 0");
    fsta.validate();
    gan.validate();
}

HarnessConfig default_harness_config() {
    HarnessConfig cfg;
    // Train the head close to convergence: softened body-class labels need
    // the extra passes before their margins survive tail-directed
    // augmentation pressure. The light alpha keeps the artificial-triplet
    // loss a regularizer rather than a bias of its own.
    cfg.epochs = 20;
    cfg.fsta.alpha = 0.03;
    cfg.gan.d_z = 32;
    cfg.gan.feature_dim = 16;
    cfg.gan.cond_dim = 8;
    cfg.gan.hidden = 64;
    cfg.gan.lr = 1e-3;
    cfg.gan.batch = 64;
    cfg.gan.d_train_iter = 5;
    cfg.gan.max_iter = 400;
    cfg.gan.pretrain_epochs = 40;
    cfg.gan.pretrain_lr = 0.1;
    cfg.gan.eval_every = 100;
    cfg.gan.eval_per_class = 8;
    return cfg;
}

Variant parse_variant(const std::string& name) {
    if (name == "raw") return Variant::raw;
    if (name == "ietrans") return Variant::ietrans;
    if (name == "soft") return Variant::soft;
    if (name == "fsta") return Variant::fsta;
    if (name == "full") return Variant::full;
    if (name == "resample") return Variant::resample;
    throw std::invalid_argument("unknown variant: " + name);
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::raw: return "raw";
        case Variant::ietrans: return "ietrans";
        case Variant::soft: return "soft";
        case Variant::fsta: return "fsta";
        case Variant::full: return "full";
        case Variant::resample: return "resample";
    }
    throw std::invalid_argument("bad variant");
}

Vector geometry_descriptor(const BBox& s, const BBox& o) {
    const double sw = s.x2 - s.x1, sh = s.y2 - s.y1;
    const double ow = o.x2 - o.x1, oh = o.y2 - o.y1;
    const double scx = 0.5 * (s.x1 + s.x2), scy = 0.5 * (s.y1 + s.y2);
    const double ocx = 0.5 * (o.x1 + o.x2), ocy = 0.5 * (o.y1 + o.y2);
    const double size = std::sqrt(sw * sh);
    Vector g(8);
    g(0) = (ocx - scx) / size;
    g(1) = (ocy - scy) / size;
    g(2) = std::log(ow / sw);
    g(3) = std::log(oh / sh);
    g(4) = std::log(sw / sh);
    g(5) = std::log(ow / oh);
    g(6) = iou(s, o);
    g(7) = std::sqrt(g(0) * g(0) + g(1) * g(1));
    return g;
}

namespace {

struct GeomPattern {
    double angle = 0.0;
    double dist = 0.0;
    double scale = 1.0;
};

std::pair<BBox, BBox> make_box_pair(const GeomPattern& pat, double box_noise, Rng& rng) {
    const double cx = 0.25 + 0.5 * rng.uniform();
    const double cy = 0.25 + 0.5 * rng.uniform();
    const double hw = 0.06 + 0.04 * rng.uniform();
    const double hh = 0.06 + 0.04 * rng.uniform();
    const double ocx = cx + pat.dist * std::cos(pat.angle) + box_noise * rng.normal();
    const double ocy = cy + pat.dist * std::sin(pat.angle) + box_noise * rng.normal();
    const double ohw = std::max(0.015, hw * pat.scale * (1.0 + 0.1 * rng.normal()));
    const double ohh = std::max(0.015, hh * pat.scale * (1.0 + 0.1 * rng.normal()));
    return {BBox{cx - hw, cy - hh, cx + hw, cy + hh},
            BBox{ocx - ohw, ocy - ohh, ocx + ohw, ocy + ohh}};
}

// Latent predicate frequencies ~ 1/rank^exponent over 1..P.
std::vector<double> latent_cdf(int n_predicates, double exponent) {
    std::vector<double> w(static_cast<std::size_t>(n_predicates));
    double total = 0.0;
    for (int p = 1; p <= n_predicates; ++p) {
        w[static_cast<std::size_t>(p - 1)] = std::pow(static_cast<double>(p), -exponent);
        total += w[static_cast<std::size_t>(p - 1)];
    }
    double acc = 0.0;
    for (double& x : w) {
        acc += x / total;
        x = acc;
    }
    w.back() = 1.0;
    return w;
}

ClassId draw_latent(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform();
    for (std::size_t i = 0; i < cdf.size(); ++i)
        if (u < cdf[i]) return static_cast<ClassId>(i + 1);
    return static_cast<ClassId>(cdf.size());
}

struct WorldTables {
    std::vector<GeomPattern> pattern;                      // by predicate, index 0 unused
    std::vector<std::vector<std::pair<ClassId, ClassId>>> pairs;  // allowed (s, o) per predicate
    std::map<ClassId, std::pair<ClassId, double>> confused;       // informative -> (general, rate)
    Matrix means;  // feature_dim x n_object_classes
};

WorldTables build_world_tables(const SynthSpec& spec) {
    WorldTables t;
    const int P = spec.n_predicates;
    for (const ConfusionPair& c : spec.confusions) t.confused[c.informative] = {c.general, c.rate};

    // Every predicate keeps a distinct geometry archetype; confusion is pure
    // label noise. The biased model then splits its mass between general and
    // informative on mislabeled instances, which is the signal the
    // parent-child recovery and the transfer ranking both live on.
    t.pattern.resize(static_cast<std::size_t>(P) + 1);
    for (int p = 1; p <= P; ++p) {
        GeomPattern& g = t.pattern[static_cast<std::size_t>(p)];
        g.angle = 2.0 * M_PI * (p - 1) / P;
        g.dist = 0.20 + 0.025 * ((p - 1) % 3);
        g.scale = 0.7 + (P > 1 ? 0.6 * (p - 1) / (P - 1) : 0.0);
    }

    Rng rng_world = Rng::substream(spec.seed, "synth.world");
    t.pairs.resize(static_cast<std::size_t>(P) + 1);
    const auto draw_pair = [&](std::vector<std::pair<ClassId, ClassId>>& dst) {
        while (true) {
            std::pair<ClassId, ClassId> cand{
                static_cast<ClassId>(rng_world.below(static_cast<std::uint64_t>(spec.n_object_classes))),
                static_cast<ClassId>(rng_world.below(static_cast<std::uint64_t>(spec.n_object_classes)))};
            if (std::find(dst.begin(), dst.end(), cand) == dst.end()) {
                dst.push_back(cand);
                return;
            }
        }
    };
    for (int p = 1; p <= P; ++p) {
        auto& dst = t.pairs[static_cast<std::size_t>(p)];
        // Half the pair list is shared with the general partner: the overlap
        // carries the confusion, the exclusive half carries the signal the
        // transfer passes need to find the mislabeled instances.
        auto it = t.confused.find(p);
        if (it != t.confused.end() && it->second.first < p) {
            const auto& src = t.pairs[static_cast<std::size_t>(it->second.first)];
            const std::size_t shared =
                std::min(src.size(), static_cast<std::size_t>(spec.pairs_per_predicate) / 2);
            dst.assign(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(shared));
        }
        while (dst.size() < static_cast<std::size_t>(spec.pairs_per_predicate)) draw_pair(dst);
    }

    Rng rng_means = Rng::substream(spec.seed, "synth.means");
    t.means = Matrix(spec.feature_dim, spec.n_object_classes);
    for (int c = 0; c < spec.n_object_classes; ++c)
        for (int r = 0; r < spec.feature_dim; ++r) t.means(r, c) = rng_means.normal();
    return t;
}

struct RawTriplet {
    ClassId latent = 0;
    ClassId observed = 0;
    ClassId c_s = 0;
    ClassId c_o = 0;
    BBox s_box, o_box;
};

RawTriplet make_triplet(const SynthSpec& spec, const WorldTables& tables, ClassId latent,
                        Rng& rng_struct) {
    RawTriplet t;
    t.latent = latent;
    t.observed = latent;
    const auto& pool = tables.pairs[static_cast<std::size_t>(latent)];
    const auto pick = pool[rng_struct.below(pool.size())];
    t.c_s = pick.first;
    t.c_o = pick.second;
    std::tie(t.s_box, t.o_box) =
        make_box_pair(tables.pattern[static_cast<std::size_t>(latent)], spec.box_noise, rng_struct);
    return t;
}

// Ordered instance pairs of the image that are not annotated. Instances are
// borrowed round-robin from neighboring triplets.
std::vector<std::pair<Entity, Entity>> negative_candidates(
    const std::vector<TripletRecord>& recs) {
    std::vector<std::pair<Entity, Entity>> out;
    const std::size_t n = recs.size();
    if (n == 0) return out;
    if (n == 1) {
        out.emplace_back(recs[0].object, recs[0].subject);
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(recs[i].subject, recs[(i + 1) % n].object);
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(recs[i].object, recs[(i + 1) % n].subject);
    return out;
}

struct SplitBuild {
    Dataset data;
    FeatureStore features;
    std::map<std::int64_t, std::pair<std::uint64_t, std::uint64_t>> negative_rows;
};

// Rows 2*tid / 2*tid+1 hold the subject/object instance features; negatives
// reuse the rows of the instances they borrow.
SplitBuild build_split(const SynthSpec& spec, const WorldTables& tables,
                       const std::vector<std::pair<TripletId, RawTriplet>>& triplets,
                       ImageId image_base, Rng& rng_feat) {
    SplitBuild out;
    out.features.dim = static_cast<std::uint32_t>(spec.feature_dim);

    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& [tid, t] = triplets[i];
        const ImageId img = image_base + static_cast<ImageId>(i) / spec.triplets_per_image;
        TripletRecord rec;
        rec.triplet_id = tid;
        rec.image_id = img;
        rec.subject = {t.c_s, t.s_box};
        rec.object = {t.c_o, t.o_box};
        rec.predicate_label = SoftLabel::one_hot(t.observed);
        out.data.images[img].push_back(rec);

        for (int side = 0; side < 2; ++side) {
            const Entity& e = side == 0 ? rec.subject : rec.object;
            const std::uint64_t row =
                2 * static_cast<std::uint64_t>(tid) + static_cast<std::uint64_t>(side);
            FeatureRow fr;
            fr.cls = e.cls;
            fr.vec.resize(static_cast<std::size_t>(spec.feature_dim));
            for (int r = 0; r < spec.feature_dim; ++r)
                fr.vec[static_cast<std::size_t>(r)] = static_cast<float>(
                    tables.means(r, e.cls) + spec.feature_noise * rng_feat.normal());
            out.features.rows[row] = std::move(fr);
        }
    }

    // negatives: pick unannotated cross pairs, ids ascend image then order
    std::int64_t next_neg = 0;
    for (auto& [img, recs] : out.data.images) {
        std::set<std::pair<BBox, BBox>> annotated;
        std::map<BBox, std::uint64_t> row_of_box;
        for (const TripletRecord& r : recs) {
            annotated.insert({r.subject.box, r.object.box});
            row_of_box[r.subject.box] =
                2 * static_cast<std::uint64_t>(r.triplet_id);
            row_of_box[r.object.box] =
                2 * static_cast<std::uint64_t>(r.triplet_id) + 1;
        }
        std::set<std::pair<BBox, BBox>> used;
        int taken = 0;
        for (const auto& [s, o] : negative_candidates(recs)) {
            if (taken >= spec.negatives_per_image) break;
            const std::pair<BBox, BBox> key{s.box, o.box};
            if (annotated.count(key) || used.count(key)) continue;
            used.insert(key);
            NegativePair np;
            np.negative_id = next_neg++;
            np.image_id = img;
            np.subject = s;
            np.object = o;
            out.data.negatives[img].push_back(np);
            out.negative_rows[np.negative_id] = {row_of_box.at(s.box), row_of_box.at(o.box)};
            ++taken;
        }
    }
    return out;
}

LabelSpace make_label_space(const SynthSpec& spec, const Dataset& train) {
    LabelSpace space;
    for (int c = 0; c < spec.n_object_classes; ++c)
        space.object_classes.push_back("obj_" + std::to_string(c));
    space.predicate_classes.push_back("__background__");
    for (int p = 1; p <= spec.n_predicates; ++p)
        space.predicate_classes.push_back("pred_" + std::to_string(p));
    for (const TripletRecord* r : train.all_triplets())
        space.valid_triples.insert(
            {r->subject.cls, r->predicate_label.hard_class(), r->object.cls});
    return space;
}

}  // namespace

SynthWorld synth_generate(const SynthSpec& spec) {
    spec.validate();
    SynthWorld world;
    world.spec = spec;

    const WorldTables tables = build_world_tables(spec);
    const std::vector<double> cdf = latent_cdf(spec.n_predicates, spec.tail_exponent);

    Rng rng_struct = Rng::substream(spec.seed, "synth.struct");
    Rng rng_conf = Rng::substream(spec.seed, "synth.confuse");
    Rng rng_feat = Rng::substream(spec.seed, "synth.feat");

    std::vector<std::pair<TripletId, RawTriplet>> train_triplets;
    train_triplets.reserve(static_cast<std::size_t>(spec.n_train_triplets));
    for (int i = 0; i < spec.n_train_triplets; ++i) {
        const ClassId latent = draw_latent(cdf, rng_struct);
        RawTriplet t = make_triplet(spec, tables, latent, rng_struct);
        auto conf = tables.confused.find(latent);
        if (conf != tables.confused.end() && rng_conf.uniform() < conf->second.second)
            t.observed = conf->second.first;
        train_triplets.emplace_back(static_cast<TripletId>(i), t);
    }

    SplitBuild train_build = build_split(spec, tables, train_triplets, 0, rng_feat);
    world.train = std::move(train_build.data);
    world.train_features = std::move(train_build.features);
    world.train_negative_rows = std::move(train_build.negative_rows);
    for (const auto& [tid, t] : train_triplets) world.latent_train[tid] = t.latent;

    world.train.label_space = make_label_space(spec, world.train);
    world.train.label_space.groups = group_predicates(world.train.predicate_counts());

    // balanced test split with latent labels and no confusion
    Rng rng_test = Rng::substream(spec.seed, "synth.struct.test");
    Rng rng_feat_test = Rng::substream(spec.seed, "synth.feat.test");
    std::vector<ClassId> test_latents;
    for (int p = 1; p <= spec.n_predicates; ++p)
        for (int i = 0; i < spec.n_test_per_predicate; ++i)
            test_latents.push_back(static_cast<ClassId>(p));
    rng_test.shuffle(test_latents);

    constexpr TripletId kTestBase = 1000000;
    std::vector<std::pair<TripletId, RawTriplet>> test_triplets;
    test_triplets.reserve(test_latents.size());
    for (std::size_t i = 0; i < test_latents.size(); ++i)
        test_triplets.emplace_back(kTestBase + static_cast<TripletId>(i),
                                   make_triplet(spec, tables, test_latents[i], rng_test));

    SplitBuild test_build = build_split(spec, tables, test_triplets, kTestBase, rng_feat_test);
    world.test = std::move(test_build.data);
    world.test_features = std::move(test_build.features);
    world.test_negative_rows = std::move(test_build.negative_rows);
    world.test.label_space = world.train.label_space;

    Rng rng_embed = Rng::substream(spec.seed, "synth.embed");
    world.pred_embed = Matrix(spec.feature_dim, 8);
    const double embed_scale = 1.0 / std::sqrt(8.0);
    for (int c = 0; c < 8; ++c)
        for (int r = 0; r < spec.feature_dim; ++r)
            world.pred_embed(r, c) = embed_scale * rng_embed.normal();

    world.train.validate();
    world.test.validate();
    return world;
}

Mlp make_relation_head(int feature_dim, int hidden, int n_predicates, std::uint64_t seed) {
    Mlp net;
    net.layers.push_back({Matrix::Zero(hidden, 3 * feature_dim), Vector::Zero(hidden),
                          Activation::leaky_relu, 0.2});
    net.layers.push_back({Matrix::Zero(n_predicates, hidden), Vector::Zero(n_predicates),
                          Activation::softmax, 0.2});
    Rng rng(seed);
    init_mlp_params(net, rng);
    return net;
}

namespace {

Vector row_vector(const FeatureStore& store, std::uint64_t row_id) {
    auto it = store.rows.find(row_id);
    if (it == store.rows.end())
        throw std::runtime_error("missing feature row " + std::to_string(row_id));
    Vector v(static_cast<Eigen::Index>(store.dim));
    for (std::uint32_t i = 0; i < store.dim; ++i)
        v(static_cast<Eigen::Index>(i)) = static_cast<double>(it->second.vec[i]);
    return v;
}

// Resolves instance feature rows through the duplicate->source map and the
// external-triplet row table.
struct FeatureView {
    const SynthWorld* world = nullptr;
    const std::map<TripletId, TripletId>* origin = nullptr;
    const std::map<TripletId, std::pair<std::uint64_t, std::uint64_t>>* extra_rows = nullptr;

    std::pair<std::uint64_t, std::uint64_t> rows_of(TripletId tid) const {
        TripletId src = tid;
        if (origin != nullptr) {
            auto it = origin->find(tid);
            if (it != origin->end()) src = it->second;
        }
        if (extra_rows != nullptr) {
            auto it = extra_rows->find(src);
            if (it != extra_rows->end()) return it->second;
        }
        const std::uint64_t base = 2 * static_cast<std::uint64_t>(src);
        return {base, base + 1};
    }

    Vector subject_of(TripletId tid) const {
        return row_vector(world->train_features, rows_of(tid).first);
    }
    Vector object_of(TripletId tid) const {
        return row_vector(world->train_features, rows_of(tid).second);
    }
};

Vector pair_column(const SynthWorld& world, const Vector& f_s, const BBox& s_box,
                   const Vector& f_o, const BBox& o_box) {
    const Eigen::Index d = f_s.size();
    Vector col(3 * d);
    col.segment(0, d) = f_s;
    col.segment(d, d) = world.pred_embed * geometry_descriptor(s_box, o_box);
    col.segment(2 * d, d) = f_o;
    return col;
}

struct TrainSet {
    Matrix x;  // 3d x m
    std::vector<SoftLabel> targets;
    std::vector<TripletId> triplet_ids;       // -1 for negative samples
    std::vector<std::int64_t> negative_ids;   // -1 for triplet samples
    std::vector<ImageId> image_ids;           // ascending
    std::vector<std::vector<Eigen::Index>> image_cols;  // parallel to image_ids
};

// Annotated triplets plus unannotated negative pairs (background targets).
TrainSet build_train_set(const SynthWorld& world, const VariantData& vd) {
    const FeatureView view{&world, &vd.origin, &vd.extra_rows};
    TrainSet ts;
    std::vector<Vector> cols;

    for (const auto& [img, recs] : vd.data.images) {
        ts.image_ids.push_back(img);
        std::vector<Eigen::Index>& idx = ts.image_cols.emplace_back();
        std::set<std::pair<BBox, BBox>> annotated;
        for (const TripletRecord& r : recs) {
            annotated.insert({r.subject.box, r.object.box});
            cols.push_back(pair_column(world, view.subject_of(r.triplet_id), r.subject.box,
                                       view.object_of(r.triplet_id), r.object.box));
            ts.targets.push_back(r.predicate_label);
            ts.triplet_ids.push_back(r.triplet_id);
            ts.negative_ids.push_back(-1);
            idx.push_back(static_cast<Eigen::Index>(cols.size()) - 1);
        }
        auto nit = vd.data.negatives.find(img);
        if (nit == vd.data.negatives.end()) continue;
        for (const NegativePair& np : nit->second) {
            if (annotated.count({np.subject.box, np.object.box})) continue;
            const auto rows = world.train_negative_rows.at(np.negative_id);
            cols.push_back(pair_column(world, row_vector(world.train_features, rows.first),
                                       np.subject.box,
                                       row_vector(world.train_features, rows.second),
                                       np.object.box));
            ts.targets.push_back(SoftLabel::one_hot(kBackgroundPredicate));
            ts.triplet_ids.push_back(-1);
            ts.negative_ids.push_back(np.negative_id);
            idx.push_back(static_cast<Eigen::Index>(cols.size()) - 1);
        }
    }

    if (cols.empty()) throw std::runtime_error("empty training set");
    ts.x = Matrix(cols[0].size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) ts.x.col(static_cast<Eigen::Index>(i)) = cols[i];
    return ts;
}

// Soft-label cross entropy with optional per-class weights; gradients go
// through the fused softmax path.
double soft_ce(const Mlp& head, const Matrix& x, const std::vector<const SoftLabel*>& targets,
               const std::map<ClassId, double>* weights, MlpGrads* grads) {
    ForwardCache cache;
    forward(head, x, &cache);
    const Matrix& z = cache.pre.back();
    const Eigen::Index B = x.cols();
    Matrix dz = Matrix::Zero(z.rows(), B);
    double total = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        const Vector zc = z.col(j);
        const double zmax = zc.maxCoeff();
        const double lse = zmax + std::log((zc.array() - zmax).exp().sum());
        const Vector probs = (zc.array() - lse).exp();
        double wsum = 0.0;
        Vector tw = Vector::Zero(z.rows());
        for (const auto& [c, t] : targets[static_cast<std::size_t>(j)]->entries) {
            if (t <= 0.0) continue;
            double w = 1.0;
            if (weights != nullptr) {
                auto wit = weights->find(c);
                if (wit != weights->end()) w = wit->second;
            }
            total += t * w * (lse - zc(c));
            tw(c) += t * w;
            wsum += t * w;
        }
        dz.col(j) = wsum * probs - tw;
    }
    total /= static_cast<double>(B);
    dz /= static_cast<double>(B);
    backward(head, cache, dz, grads, /*grad_is_preactivation=*/true);
    return total;
}

std::map<ClassId, double> class_weights(const TrainSet& ts) {
    std::map<ClassId, double> mass;
    for (const SoftLabel& t : ts.targets)
        for (const auto& [c, p] : t.entries)
            if (p > 0.0) mass[c] += p;
    double total = 0.0;
    for (const auto& [c, m] : mass) total += m;
    std::map<ClassId, double> w;
    const double k = static_cast<double>(mass.size());
    for (const auto& [c, m] : mass) w[c] = total / (k * m);
    return w;
}

// Per-step hook run after the main loss; returns the unscaled extra loss.
using StepHook = std::function<double(const std::vector<std::size_t>& image_idx,
                                      std::int64_t step_index, MlpGrads& grads)>;

std::vector<double> train_head(Mlp& head, const TrainSet& ts, int epochs, double lr,
                               int batch_images, Rng& rng,
                               const std::map<ClassId, double>* weights,
                               const StepHook& hook, double hook_weight) {
    std::vector<double> epoch_losses;
    std::vector<std::size_t> order(ts.image_ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::int64_t step_index = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch_images)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(batch_images));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::vector<Eigen::Index> cols;
            for (std::size_t b : batch)
                cols.insert(cols.end(), ts.image_cols[b].begin(), ts.image_cols[b].end());
            if (cols.empty()) continue;
            Matrix xb(ts.x.rows(), static_cast<Eigen::Index>(cols.size()));
            std::vector<const SoftLabel*> tb(cols.size());
            for (std::size_t i = 0; i < cols.size(); ++i) {
                xb.col(static_cast<Eigen::Index>(i)) = ts.x.col(cols[i]);
                tb[i] = &ts.targets[static_cast<std::size_t>(cols[i])];
            }
            MlpGrads grads(head);
            double loss = soft_ce(head, xb, tb, weights, &grads);
            if (hook) loss += hook_weight * hook(batch, step_index, grads);
            sgd_step(head, grads, lr);
            loss_sum += loss;
            ++steps;
            ++step_index;
        }
        epoch_losses.push_back(steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0);
    }
    return epoch_losses;
}

std::vector<PredTriplet> predict_test(const Mlp& head, const SynthWorld& world) {
    std::vector<Vector> cols;
    std::vector<PredTriplet> preds;
    for (const auto& [img, recs] : world.test.images) {
        for (const TripletRecord& r : recs) {
            const std::uint64_t base = 2 * static_cast<std::uint64_t>(r.triplet_id);
            cols.push_back(pair_column(world, row_vector(world.test_features, base),
                                       r.subject.box, row_vector(world.test_features, base + 1),
                                       r.object.box));
            preds.push_back({img, r.subject, r.object, 0, 0.0});
        }
        auto nit = world.test.negatives.find(img);
        if (nit == world.test.negatives.end()) continue;
        for (const NegativePair& np : nit->second) {
            const auto rows = world.test_negative_rows.at(np.negative_id);
            cols.push_back(pair_column(world, row_vector(world.test_features, rows.first),
                                       np.subject.box,
                                       row_vector(world.test_features, rows.second),
                                       np.object.box));
            preds.push_back({img, np.subject, np.object, 0, 0.0});
        }
    }
    Matrix x(cols[0].size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = cols[i];
    const Matrix y = forward(head, x);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto col = y.col(static_cast<Eigen::Index>(i));
        ClassId best = 1;
        for (Eigen::Index c = 1; c < y.rows(); ++c)
            if (col(c) > col(best)) best = static_cast<ClassId>(c);
        preds[i].predicate = best;
        preds[i].score = col(best);
    }
    return preds;
}

}  // namespace

PredictionDump produce_biased_dump(const SynthWorld& world, const HarnessConfig& cfg,
                                   std::uint64_t seed) {
    const VariantData raw{world.train, {}, {}};
    const TrainSet ts = build_train_set(world, raw);
    Mlp head = make_relation_head(world.spec.feature_dim, cfg.head_hidden,
                                  world.spec.n_predicates + 1,
                                  splitmix64(seed ^ fnv1a64("harness.biased.init")));
    Rng rng = Rng::substream(seed, "harness.biased");
    train_head(head, ts, cfg.epochs, cfg.lr, cfg.batch_images, rng, nullptr, nullptr, 0.0);

    PredictionDump dump;
    dump.n_predicates = world.spec.n_predicates + 1;
    const Matrix y = forward(head, ts.x);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
        std::vector<double> vec(static_cast<std::size_t>(y.rows()));
        for (Eigen::Index c = 0; c < y.rows(); ++c) vec[static_cast<std::size_t>(c)] = y(c, j);
        const std::size_t i = static_cast<std::size_t>(j);
        if (ts.triplet_ids[i] >= 0)
            dump.per_triplet[ts.triplet_ids[i]] = std::move(vec);
        else
            dump.per_negative[ts.negative_ids[i]] = std::move(vec);
    }
    dump.per_combo = aggregate_combos(dump.per_triplet, world.train);
    dump.validate();
    return dump;
}

PreparedRun prepare_run(const SynthSpec& spec, const HarnessConfig& cfg, std::uint64_t seed) {
    spec.validate();
    cfg.validate();
    PreparedRun prep;
    prep.seed = seed;

    SynthSpec sp = spec;
    sp.seed = splitmix64(spec.seed ^ splitmix64(seed));
    prep.world = synth_generate(sp);

    prep.dump = produce_biased_dump(prep.world, cfg, seed);
    prep.parent_child =
        build_parent_child(prep.dump, prep.world.train.predicate_counts(), cfg.tau_aff);
    prep.decisions = internal_transfer(prep.world.train, prep.dump, prep.parent_child, cfg.k_i);
    prep.externals = external_transfer(prep.world.train, prep.dump, cfg.k_e);
    prep.sampler = build_sampler(prep.world.train.label_space, prep.dump);
    prep.gan_ready = false;
    return prep;
}

Dataset resample_tail_images(const Dataset& data, int n_copies, int min_tail,
                             std::map<TripletId, TripletId>* origin) {
    Dataset out = data;
    if (n_copies < 1) return out;
    TripletId next_tid = data.max_triplet_id() + 1;
    ImageId next_img = data.images.empty() ? 0 : data.images.rbegin()->first + 1;
    for (const auto& [img, recs] : data.images) {
        int tail_count = 0;
        for (const TripletRecord& r : recs) {
            const ClassId p = r.predicate_label.hard_class();
            if (p == kBackgroundPredicate) continue;
            if (data.label_space.group_of(p) == Group::tail) ++tail_count;
        }
        if (tail_count < min_tail) continue;
        for (int copy = 0; copy < n_copies; ++copy) {
            const ImageId new_img = next_img++;
            for (const TripletRecord& r : recs) {
                TripletRecord dup = r;
                dup.triplet_id = next_tid++;
                dup.image_id = new_img;
                if (origin != nullptr) (*origin)[dup.triplet_id] = r.triplet_id;
                out.images[new_img].push_back(dup);
            }
        }
    }
    return out;
}

namespace {

// Externally transferred triplets sit on former negative pairs; map each
// one back to that pair's feature rows.
std::map<TripletId, std::pair<std::uint64_t, std::uint64_t>> external_rows(
    const SynthWorld& world, const std::vector<TripletRecord>& externals) {
    std::map<TripletId, std::pair<std::uint64_t, std::uint64_t>> rows;
    for (const TripletRecord& rec : externals) {
        auto nit = world.train.negatives.find(rec.image_id);
        if (nit == world.train.negatives.end())
            throw std::logic_error("external triplet on image without negatives");
        const NegativePair* match = nullptr;
        for (const NegativePair& np : nit->second)
            if (np.subject == rec.subject && np.object == rec.object) {
                match = &np;
                break;
            }
        if (match == nullptr)
            throw std::logic_error("external triplet does not match any negative pair");
        rows[rec.triplet_id] = world.train_negative_rows.at(match->negative_id);
    }
    return rows;
}

}  // namespace

VariantData variant_dataset(const PreparedRun& prep, Variant v, const HarnessConfig& cfg) {
    VariantData vd;
    switch (v) {
        case Variant::raw:
            vd.data = prep.world.train;
            break;
        // fsta layers the augmentation loss on the transferred data, full on
        // the softened data; both keep the external triplets.
        case Variant::ietrans:
        case Variant::fsta:
            vd.data = add_externals(apply_internal(prep.world.train, prep.decisions),
                                    prep.externals);
            vd.extra_rows = external_rows(prep.world, prep.externals);
            break;
        case Variant::soft:
        case Variant::full:
            vd.data = add_externals(
                apply_soft_transfer(prep.world.train, prep.dump, prep.decisions, cfg.k_s,
                                    cfg.q_mode),
                prep.externals);
            vd.extra_rows = external_rows(prep.world, prep.externals);
            break;
        case Variant::resample: {
            const int min_tail = cfg.resample_requires_multiple ? 2 : 1;
            vd.data = resample_tail_images(prep.world.train, cfg.resample_n, min_tail,
                                           &vd.origin);
            break;
        }
    }
    return vd;
}

TrainOutcome train_unbiased(PreparedRun& prep, Variant v, const HarnessConfig& cfg) {
    const VariantData vd = variant_dataset(prep, v, cfg);
    const SynthWorld& world = prep.world;
    const bool use_fsta = (v == Variant::fsta || v == Variant::full) && cfg.fsta.alpha > 0.0;

    if (use_fsta && !prep.gan_ready) {
        Matrix feats;
        std::vector<ClassId> labels;
        store_to_matrix(world.train_features, feats, labels);
        GanConfig gcfg = cfg.gan;
        if (gcfg.feature_dim != world.spec.feature_dim)
            throw std::invalid_argument("gan feature_dim must match the world feature_dim");
        gcfg.seed = prep.seed;
        const Matrix cond =
            synth_cond_table(world.spec.n_object_classes, gcfg.cond_dim,
                             splitmix64(prep.seed ^ fnv1a64("harness.cond")));
        prep.gan = train_gan(feats, labels, cond, gcfg);
        prep.gan_ready = true;
    }

    const TrainSet ts = build_train_set(world, vd);
    std::map<ClassId, double> weights;
    if (cfg.reweight) weights = class_weights(ts);

    Mlp head = make_relation_head(world.spec.feature_dim, cfg.head_hidden,
                                  world.spec.n_predicates + 1,
                                  splitmix64(prep.seed ^ fnv1a64("harness.head.init")));
    Rng rng_train = Rng::substream(prep.seed, "harness.unbiased");
    Rng rng_fsta = Rng::substream(prep.seed, "harness.fsta");
    Rng rng_gen = Rng::substream(prep.seed, "harness.gen");

    std::map<TripletId, const TripletRecord*> record_index;
    for (const TripletRecord* r : vd.data.all_triplets()) record_index[r->triplet_id] = r;
    const FeatureView view{&world, &vd.origin, &vd.extra_rows};

    StepHook hook;
    if (use_fsta) {
        hook = [&](const std::vector<std::size_t>& image_idx, std::int64_t step_index,
                   MlpGrads& grads) -> double {
            std::vector<PlanImage> batch;
            for (std::size_t b : image_idx) {
                PlanImage pi;
                pi.image_id = ts.image_ids[b];
                auto iit = vd.data.images.find(pi.image_id);
                if (iit == vd.data.images.end()) continue;
                pi.ground_truth = iit->second;
                std::set<std::pair<ClassId, BBox>> seen;
                for (const TripletRecord& r : iit->second) {
                    if (seen.insert({r.subject.cls, r.subject.box}).second)
                        pi.proposals.push_back({r.subject.cls, r.subject.box});
                    if (seen.insert({r.object.cls, r.object.box}).second)
                        pi.proposals.push_back({r.object.cls, r.object.box});
                }
                batch.push_back(std::move(pi));
            }
            const AugmentationPlan plan = plan_step(batch, prep.sampler,
                                                    vd.data.label_space, cfg.fsta, rng_fsta,
                                                    step_index);
            if (plan.triplets.empty()) return 0.0;

            std::vector<ClassId> gen_classes;
            for (const ArtificialTriplet& at : plan.triplets)
                if (at.kind == ArtificialKind::spo_prime) gen_classes.push_back(at.object_cls);
            Matrix gen;
            if (!gen_classes.empty()) gen = generate_batch(prep.gan, gen_classes, rng_gen);

            Matrix xa(ts.x.rows(), static_cast<Eigen::Index>(plan.triplets.size()));
            std::vector<ClassId> labels(plan.triplets.size());
            Eigen::Index gi = 0;
            for (std::size_t i = 0; i < plan.triplets.size(); ++i) {
                const ArtificialTriplet& at = plan.triplets[i];
                const TripletRecord* base = record_index.at(at.base_triplet_id);
                Vector f_s, f_o;
                if (at.kind == ArtificialKind::spo_prime) {
                    f_s = view.subject_of(base->triplet_id);
                    f_o = gen.col(gi++);
                } else {
                    f_s = view.subject_of(at.donor_triplet_id);
                    f_o = view.object_of(base->triplet_id);
                }
                xa.col(static_cast<Eigen::Index>(i)) =
                    pair_column(world, f_s, base->subject.box, f_o, base->object.box);
                labels[i] = at.predicate;
            }
            MlpGrads art_grads(head);
            const double art_loss = cls_loss(head, xa, labels, &art_grads);
            grads.add(art_grads, cfg.fsta.alpha);
            return art_loss;
        };
    }

    TrainOutcome out;
    out.epoch_losses =
        train_head(head, ts, cfg.epochs, cfg.lr, cfg.batch_images, rng_train,
                   cfg.reweight ? &weights : nullptr, hook, cfg.fsta.alpha);
    out.head = std::move(head);
    out.report = evaluate(predict_test(out.head, world), world.test, cfg.eval_ks);
    return out;
}

MetricStats mean_sd(const std::vector<double>& values) {
    MetricStats s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    if (values.size() < 2) return s;
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(acc / static_cast<double>(values.size() - 1));
    return s;
}

MatrixResult run_matrix(const SynthSpec& spec, const std::vector<Variant>& variants,
                        const std::vector<std::uint64_t>& seeds, const HarnessConfig& cfg) {
    if (variants.empty()) throw std::invalid_argument("no variants requested");
    if (seeds.empty()) throw std::invalid_argument("no seeds requested");
    MatrixResult res;
    res.variants = variants;
    res.seeds = seeds;
    res.k_values = cfg.eval_ks;
    for (std::uint64_t seed : seeds) {
        PreparedRun prep = prepare_run(spec, cfg, seed);
        for (Variant v : variants) {
            TrainOutcome out = train_unbiased(prep, v, cfg);
            res.reports[variant_name(v)].push_back(std::move(out.report));
        }
    }
    return res;
}

namespace {

std::vector<double> collect(const std::vector<EvalReport>& reports,
                            const std::function<double(const EvalReport&)>& get) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const EvalReport& r : reports) v.push_back(get(r));
    return v;
}

json stats_json(const std::vector<double>& values) {
    const MetricStats s = mean_sd(values);
    return json{{"values", values}, {"mean", s.mean}, {"sd", s.sd}};
}

}  // namespace

void save_matrix_json(const MatrixResult& result, const std::string& path) {
    json root;
    root["variants"] = json::array();
    for (Variant v : result.variants) root["variants"].push_back(variant_name(v));
    root["seeds"] = result.seeds;
    root["k"] = result.k_values;
    json cells = json::object();
    for (const auto& [name, reports] : result.reports) {
        json cell = json::object();
        for (int k : result.k_values) {
            const std::string ks = std::to_string(k);
            cell["R@" + ks] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.recall.at(k); }));
            cell["mR@" + ks] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.mean_recall.at(k).overall; }));
            cell["mR@" + ks + "_head"] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.mean_recall.at(k).head; }));
            cell["mR@" + ks + "_body"] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.mean_recall.at(k).body; }));
            cell["mR@" + ks + "_tail"] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.mean_recall.at(k).tail; }));
            cell["F1@" + ks] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.f1.at(k); }));
            cell["A@" + ks] = stats_json(
                collect(reports, [k](const EvalReport& r) { return r.avg.at(k); }));
        }
        cells[name] = std::move(cell);
    }
    root["cells"] = std::move(cells);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << root.dump(2) << "\n";
}

void save_matrix_markdown(const MatrixResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    const auto fmt = [](const MetricStats& s) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(1);
        os << 100.0 * s.mean << " +- " << 100.0 * s.sd;
        return os.str();
    };
    out << "| variant |";
    for (int k : result.k_values)
        out << " R@" << k << " | mR@" << k << " | mR@" << k << " h/b/t | F1@" << k << " | A@" << k
            << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < result.k_values.size() * 5; ++i) out << "---|";
    out << "\n";
    for (Variant v : result.variants) {
        const std::string name = variant_name(v);
        auto rit = result.reports.find(name);
        if (rit == result.reports.end()) continue;
        const auto& reports = rit->second;
        out << "| " << name << " |";
        for (int k : result.k_values) {
            out << " "
                << fmt(mean_sd(collect(reports,
                                       [k](const EvalReport& r) { return r.recall.at(k); })))
                << " | "
                << fmt(mean_sd(collect(
                       reports, [k](const EvalReport& r) { return r.mean_recall.at(k).overall; })))
                << " | "
                << fmt(mean_sd(collect(
                       reports, [k](const EvalReport& r) { return r.mean_recall.at(k).head; })))
                << " / "
                << fmt(mean_sd(collect(
                       reports, [k](const EvalReport& r) { return r.mean_recall.at(k).body; })))
                << " / "
                << fmt(mean_sd(collect(
                       reports, [k](const EvalReport& r) { return r.mean_recall.at(k).tail; })))
                << " | "
                << fmt(mean_sd(
                       collect(reports, [k](const EvalReport& r) { return r.f1.at(k); })))
                << " | "
                << fmt(mean_sd(
                       collect(reports, [k](const EvalReport& r) { return r.avg.at(k); })))
                << " |";
        }
        out << "\n";
    }
}

}  // namespace tforge
