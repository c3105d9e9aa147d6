#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "tforge/harness.hpp"

using namespace tforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "tforge_test_harness";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// shrunken world: 5 predicates, one body<-tail confusion pair
SynthSpec small_spec() {
    SynthSpec s;
    s.n_object_classes = 6;
    s.n_predicates = 5;
    s.tail_exponent = 1.4;
    s.confusions = {{3, 5, 0.5}};
    s.pairs_per_predicate = 4;
    s.feature_dim = 6;
    s.n_train_triplets = 600;
    s.n_test_per_predicate = 8;
    s.triplets_per_image = 3;
    s.negatives_per_image = 2;
    s.seed = 5;
    return s;
}

HarnessConfig small_cfg() {
    HarnessConfig c;
    c.epochs = 4;
    c.lr = 0.25;
    c.batch_images = 8;
    c.head_hidden = 16;
    c.eval_ks = {3, 5};
    c.gan.d_z = 6;
    c.gan.feature_dim = 6;
    c.gan.cond_dim = 4;
    c.gan.hidden = 12;
    c.gan.lr = 1e-3;
    c.gan.batch = 16;
    c.gan.d_train_iter = 2;
    c.gan.max_iter = 20;
    c.gan.pretrain_epochs = 3;
    c.gan.pretrain_lr = 0.1;
    c.gan.eval_every = 10;
    c.gan.eval_per_class = 2;
    return c;
}

bool nets_equal(const Mlp& a, const Mlp& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const Layer& la = a.layers[i];
        const Layer& lb = b.layers[i];
        if (la.W.rows() != lb.W.rows() || la.W.cols() != lb.W.cols()) return false;
        if ((la.W.array() != lb.W.array()).any()) return false;
        if (la.b.size() != lb.b.size() || (la.b.array() != lb.b.array()).any()) return false;
        if (la.act != lb.act || la.slope != lb.slope) return false;
    }
    return true;
}

void check_reports_equal(const EvalReport& a, const EvalReport& b) {
    CHECK(a.k_values == b.k_values);
    CHECK(a.recall == b.recall);
    CHECK(a.f1 == b.f1);
    CHECK(a.avg == b.avg);
    CHECK(a.per_class_recall == b.per_class_recall);
    for (int k : a.k_values) {
        CHECK(a.mean_recall.at(k).overall == b.mean_recall.at(k).overall);
        CHECK(a.mean_recall.at(k).head == b.mean_recall.at(k).head);
        CHECK(a.mean_recall.at(k).body == b.mean_recall.at(k).body);
        CHECK(a.mean_recall.at(k).tail == b.mean_recall.at(k).tail);
    }
}

}  // namespace

TEST_CASE("synth spec validation") {
    default_synth_spec().validate();
    SynthSpec s = small_spec();
    s.n_predicates = 2;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.confusions = {{1, 1, 0.5}};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.confusions = {{1, 4, 1.5}};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.confusions = {{1, 9, 0.5}};  // beyond n_predicates
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.pairs_per_predicate = 100;  // 6*6 pairs available
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = small_spec();
    s.tail_exponent = 0.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("harness config validation") {
    default_harness_config().validate();
    HarnessConfig c = small_cfg();
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg();
    c.eval_ks.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg();
    c.resample_n = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg();
    c.k_s = 101.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("variant names round trip") {
    for (Variant v : {Variant::raw, Variant::ietrans, Variant::soft, Variant::fsta, Variant::full,
                      Variant::resample})
        CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_AS(parse_variant("bogus"), std::invalid_argument);
}

TEST_CASE("geometry descriptor hand values") {
    Vector g = geometry_descriptor(BBox{0, 0, 1, 1}, BBox{2, 0, 3, 1});
    REQUIRE(g.size() == 8);
    CHECK(g(0) == 2.0);   // center offset x / subject size
    CHECK(g(1) == 0.0);
    CHECK(g(2) == 0.0);   // equal widths
    CHECK(g(3) == 0.0);
    CHECK(g(4) == 0.0);   // square subject
    CHECK(g(5) == 0.0);
    CHECK(g(6) == 0.0);   // disjoint boxes
    CHECK(g(7) == 2.0);   // center distance

    Vector h = geometry_descriptor(BBox{0, 0, 2, 1}, BBox{0.5, 0.25, 1.5, 0.75});
    CHECK(h(0) == 0.0);
    CHECK(h(1) == 0.0);
    CHECK(h(2) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(h(3) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(h(4) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(h(5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(h(6) == 0.25);  // contained box: 0.5 / 2.0
    CHECK(h(7) == 0.0);
}

TEST_CASE("synthetic world is deterministic and well formed") {
    const SynthSpec spec = small_spec();
    SynthWorld w = synth_generate(spec);
    SynthWorld w2 = synth_generate(spec);
    CHECK(w.train == w2.train);
    CHECK(w.test == w2.test);
    CHECK(w.train_features == w2.train_features);
    CHECK(w.latent_train == w2.latent_train);
    CHECK((w.pred_embed.array() == w2.pred_embed.array()).all());

    CHECK(w.train.triplet_count() == spec.n_train_triplets);
    CHECK(w.latent_train.size() == static_cast<std::size_t>(spec.n_train_triplets));
    CHECK(w.train.label_space.object_classes.size() ==
          static_cast<std::size_t>(spec.n_object_classes));
    CHECK(w.train.label_space.predicate_classes.front() == "__background__");
    CHECK(w.train.label_space.predicate_classes.size() ==
          static_cast<std::size_t>(spec.n_predicates) + 1);
    CHECK_FALSE(w.train.label_space.groups.empty());
    CHECK(w.train.label_space.group_of(1) == Group::head);  // most frequent predicate

    // feature rows sit at 2*tid and 2*tid+1 and carry the instance class
    CHECK(w.train_features.dim == static_cast<std::uint32_t>(spec.feature_dim));
    CHECK(w.train_features.rows.size() == 2 * static_cast<std::size_t>(spec.n_train_triplets));
    for (const TripletRecord* r : w.train.all_triplets()) {
        const std::uint64_t base = 2 * static_cast<std::uint64_t>(r->triplet_id);
        REQUIRE(w.train_features.rows.count(base) == 1);
        REQUIRE(w.train_features.rows.count(base + 1) == 1);
        CHECK(w.train_features.rows.at(base).cls == r->subject.cls);
        CHECK(w.train_features.rows.at(base + 1).cls == r->object.cls);
        CHECK(w.train.label_space.valid_triples.count(
                  {r->subject.cls, r->predicate_label.hard_class(), r->object.cls}) == 1);
    }

    // negatives reuse existing instance rows and never duplicate annotations
    std::size_t n_neg = 0;
    for (const auto& [img, pairs] : w.train.negatives) {
        CHECK(pairs.size() <= static_cast<std::size_t>(spec.negatives_per_image));
        std::set<std::pair<BBox, BBox>> annotated;
        for (const TripletRecord& r : w.train.images.at(img))
            annotated.insert({r.subject.box, r.object.box});
        for (const NegativePair& np : pairs) {
            ++n_neg;
            CHECK(annotated.count({np.subject.box, np.object.box}) == 0);
            const auto rows = w.train_negative_rows.at(np.negative_id);
            CHECK(w.train_features.rows.count(rows.first) == 1);
            CHECK(w.train_features.rows.count(rows.second) == 1);
        }
    }
    CHECK(w.train_negative_rows.size() == n_neg);

    // test split: balanced latent labels, ids and images offset past train
    std::map<ClassId, std::int64_t> test_counts = w.test.predicate_counts();
    for (int p = 1; p <= spec.n_predicates; ++p)
        CHECK(test_counts.at(p) == spec.n_test_per_predicate);
    for (const TripletRecord* r : w.test.all_triplets()) {
        CHECK(r->triplet_id >= 1000000);
        CHECK(r->image_id >= 1000000);
    }
    CHECK(w.test.label_space == w.train.label_space);
}

TEST_CASE("confusion relabels about the configured fraction") {
    SynthSpec spec = small_spec();
    SynthWorld w = synth_generate(spec);
    int informative = 0, relabeled = 0;
    for (const auto& [tid, latent] : w.latent_train) {
        const ClassId observed = w.train.find_triplet(tid)->predicate_label.hard_class();
        if (latent == 5) {
            ++informative;
            if (observed == 3) ++relabeled;
            else CHECK(observed == latent);
        } else {
            CHECK(observed == latent);
        }
    }
    REQUIRE(informative > 20);
    const double f = static_cast<double>(relabeled) / informative;
    CHECK(f > 0.2);
    CHECK(f < 0.8);

    spec.confusions[0].rate = 0.0;
    SynthWorld clean = synth_generate(spec);
    for (const auto& [tid, latent] : clean.latent_train)
        CHECK(clean.train.find_triplet(tid)->predicate_label.hard_class() == latent);
}

TEST_CASE("latent frequencies follow the tail exponent") {
    SynthSpec spec = small_spec();
    spec.confusions.clear();
    spec.n_train_triplets = 3000;

    spec.tail_exponent = 2.0;
    std::map<ClassId, std::int64_t> steep = synth_generate(spec).train.predicate_counts();
    CHECK(steep.at(1) > 5 * steep.at(5));
    CHECK(steep.at(1) > steep.at(2));
    CHECK(steep.at(2) > steep.at(3));

    spec.tail_exponent = 0.01;
    std::map<ClassId, std::int64_t> flat = synth_generate(spec).train.predicate_counts();
    const double expect = 3000.0 / 5.0;
    for (int p = 1; p <= 5; ++p) {
        CHECK(flat.at(p) > 0.75 * expect);
        CHECK(flat.at(p) < 1.25 * expect);
    }
}

TEST_CASE("relation head shape and seeding") {
    Mlp head = make_relation_head(6, 16, 6, 11);
    REQUIRE(head.layers.size() == 2);
    CHECK(head.layers[0].W.rows() == 16);
    CHECK(head.layers[0].W.cols() == 18);
    CHECK(head.layers[0].act == Activation::leaky_relu);
    CHECK(head.layers[1].W.rows() == 6);
    CHECK(head.layers[1].act == Activation::softmax);
    CHECK(head.layers[0].b.isZero(0.0));
    CHECK(nets_equal(head, make_relation_head(6, 16, 6, 11)));
    CHECK_FALSE(nets_equal(head, make_relation_head(6, 16, 6, 12)));
}

TEST_CASE("biased dump covers the split and leaks the confusion") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    SynthWorld w = synth_generate(spec);
    PredictionDump dump = produce_biased_dump(w, cfg, 3);
    PredictionDump again = produce_biased_dump(w, cfg, 3);
    CHECK(dump.per_triplet == again.per_triplet);
    CHECK(dump.per_negative == again.per_negative);

    CHECK(dump.n_predicates == spec.n_predicates + 1);
    CHECK(dump.per_triplet.size() == static_cast<std::size_t>(spec.n_train_triplets));
    std::size_t n_neg = 0;
    for (const auto& [img, pairs] : w.train.negatives) n_neg += pairs.size();
    CHECK(dump.per_negative.size() == n_neg);
    for (const auto& [tid, vec] : dump.per_triplet)
        REQUIRE(vec.size() == static_cast<std::size_t>(spec.n_predicates) + 1);

    // the confusion leaks in the direction transfer reads it: inside the
    // observed-parent pool, instances whose latent class is the informative
    // child put far more mass on the child than genuine parent instances do
    double dis_child = 0.0, gen_child = 0.0;
    int n_dis = 0, n_gen = 0;
    for (const auto& [tid, latent] : w.latent_train) {
        const ClassId observed = w.train.find_triplet(tid)->predicate_label.hard_class();
        if (observed != 3) continue;
        const double child_p = dump.per_triplet.at(tid)[5];
        if (latent == 5) {
            dis_child += child_p;
            ++n_dis;
        } else {
            gen_child += child_p;
            ++n_gen;
        }
    }
    REQUIRE(n_dis > 0);
    REQUIRE(n_gen > 0);
    CHECK(dis_child / n_dis > 0.03);
    CHECK(dis_child / n_dis > 3.0 * (gen_child / n_gen));
}

TEST_CASE("prepared runs are deterministic per seed") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    PreparedRun a = prepare_run(spec, cfg, 7);
    PreparedRun b = prepare_run(spec, cfg, 7);
    CHECK(a.world.train == b.world.train);
    CHECK(a.world.test == b.world.test);
    CHECK(a.decisions == b.decisions);
    CHECK(a.externals == b.externals);
    CHECK(a.sampler == b.sampler);
    CHECK_FALSE(a.gan_ready);

    PreparedRun c = prepare_run(spec, cfg, 8);
    CHECK_FALSE(a.world.train == c.world.train);

    // transfer artifacts are coherent with the parent-child map
    CHECK_FALSE(a.decisions.empty());
    CHECK_FALSE(a.sampler.entries.empty());
    for (const TransferDecision& d : a.decisions) {
        CHECK(d.source_class != d.target_class);
        CHECK(a.parent_child.at(d.source_class).count(d.target_class) == 1);
    }
}

TEST_CASE("variant datasets wire the pipeline stages together") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    PreparedRun prep = prepare_run(spec, cfg, 7);

    VariantData raw = variant_dataset(prep, Variant::raw, cfg);
    CHECK(raw.data == prep.world.train);
    CHECK(raw.origin.empty());
    CHECK(raw.extra_rows.empty());

    VariantData ie = variant_dataset(prep, Variant::ietrans, cfg);
    Dataset want_ie =
        add_externals(apply_internal(prep.world.train, prep.decisions), prep.externals);
    CHECK(ie.data == want_ie);
    CHECK(ie.extra_rows.size() == prep.externals.size());
    for (const TripletRecord& rec : prep.externals) {
        const auto rows = ie.extra_rows.at(rec.triplet_id);
        bool found = false;
        for (const NegativePair& np : prep.world.train.negatives.at(rec.image_id)) {
            if (np.subject == rec.subject && np.object == rec.object) {
                CHECK(prep.world.train_negative_rows.at(np.negative_id) == rows);
                found = true;
            }
        }
        CHECK(found);
    }

    VariantData soft = variant_dataset(prep, Variant::soft, cfg);
    Dataset want_soft = add_externals(
        apply_soft_transfer(prep.world.train, prep.dump, prep.decisions, cfg.k_s, cfg.q_mode),
        prep.externals);
    CHECK(soft.data == want_soft);

    // fsta and full reuse the transfer datasets; the difference is the loss
    CHECK(variant_dataset(prep, Variant::fsta, cfg).data == ie.data);
    CHECK(variant_dataset(prep, Variant::full, cfg).data == soft.data);

    HarnessConfig rs_cfg = cfg;
    rs_cfg.resample_n = 1;
    VariantData rs = variant_dataset(prep, Variant::resample, rs_cfg);
    rs.data.validate();
    CHECK(rs.data.triplet_count() >= prep.world.train.triplet_count());
    for (const auto& [dup, src] : rs.origin) {
        const TripletRecord* d = rs.data.find_triplet(dup);
        const TripletRecord* s = rs.data.find_triplet(src);
        REQUIRE(d != nullptr);
        REQUIRE(s != nullptr);
        CHECK(d->subject == s->subject);
        CHECK(d->object == s->object);
        CHECK(d->predicate_label == s->predicate_label);
    }
}

TEST_CASE("tail image resampling hand fixture") {
    Dataset data;
    data.label_space.object_classes = {"a", "b"};
    data.label_space.predicate_classes = {"__background__", "p1", "p2", "p3"};
    data.label_space.groups = {{1, Group::head}, {2, Group::body}, {3, Group::tail}};
    auto rec = [](TripletId tid, ImageId img, ClassId s, ClassId p, ClassId o) {
        TripletRecord r;
        r.triplet_id = tid;
        r.image_id = img;
        const double base = static_cast<double>(tid);
        r.subject = {s, BBox{base, 0, base + 1, 1}};
        r.object = {o, BBox{base, 2, base + 1, 3}};
        r.predicate_label = SoftLabel::one_hot(p);
        return r;
    };
    data.images[0] = {rec(0, 0, 0, 3, 1)};
    data.images[1] = {rec(1, 1, 0, 1, 1)};
    data.images[2] = {rec(2, 2, 0, 3, 0), rec(3, 2, 1, 3, 1)};
    for (const TripletRecord* r : data.all_triplets())
        data.label_space.valid_triples.insert(
            {r->subject.cls, r->predicate_label.hard_class(), r->object.cls});
    data.validate();

    std::map<TripletId, TripletId> origin;
    Dataset out = resample_tail_images(data, 2, 1, &origin);
    out.validate();
    // images 0 and 2 qualify and get two copies each, ids allocated in order
    REQUIRE(out.images.size() == 3 + 4);
    CHECK(out.images.at(3).size() == 1);
    CHECK(out.images.at(4).size() == 1);
    CHECK(out.images.at(5).size() == 2);
    CHECK(out.images.at(6).size() == 2);
    CHECK(origin ==
          std::map<TripletId, TripletId>{{4, 0}, {5, 0}, {6, 2}, {7, 3}, {8, 2}, {9, 3}});
    CHECK(out.images.at(3)[0].subject == data.images.at(0)[0].subject);
    CHECK(out.images.at(6)[1].predicate_label == data.images.at(2)[1].predicate_label);

    std::map<TripletId, TripletId> origin2;
    Dataset strict = resample_tail_images(data, 1, 2, &origin2);
    REQUIRE(strict.images.size() == 4);  // only the two-tail image qualifies
    CHECK(strict.images.count(3) == 1);
    CHECK(origin2 == std::map<TripletId, TripletId>{{4, 2}, {5, 3}});

    CHECK(resample_tail_images(data, 0, 1, nullptr) == data);
}

TEST_CASE("disabled machinery leaves training bit-identical") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    PreparedRun prep = prepare_run(spec, cfg, 3);

    TrainOutcome ie = train_unbiased(prep, Variant::ietrans, cfg);
    CHECK_FALSE(prep.gan_ready);

    // zero augmentation weight: the fsta variant collapses onto ietrans
    HarnessConfig no_alpha = cfg;
    no_alpha.fsta.alpha = 0.0;
    TrainOutcome fsta0 = train_unbiased(prep, Variant::fsta, no_alpha);
    CHECK_FALSE(prep.gan_ready);
    CHECK(ie.epoch_losses == fsta0.epoch_losses);
    CHECK(nets_equal(ie.head, fsta0.head));
    check_reports_equal(ie.report, fsta0.report);

    // zero soft percentile: every decision falls back to a hard one-hot
    HarnessConfig hard = cfg;
    hard.k_s = 0.0;
    TrainOutcome soft0 = train_unbiased(prep, Variant::soft, hard);
    CHECK(ie.epoch_losses == soft0.epoch_losses);
    CHECK(nets_equal(ie.head, soft0.head));

    // the same variant rerun from a fresh prepared run replays exactly
    PreparedRun prep2 = prepare_run(spec, cfg, 3);
    TrainOutcome ie2 = train_unbiased(prep2, Variant::ietrans, cfg);
    CHECK(ie.epoch_losses == ie2.epoch_losses);
    check_reports_equal(ie.report, ie2.report);
}

TEST_CASE("augmentation loss trains the generator once and replays") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    PreparedRun prep = prepare_run(spec, cfg, 3);
    TrainOutcome f1 = train_unbiased(prep, Variant::fsta, cfg);
    CHECK(prep.gan_ready);
    CHECK(prep.gan.n_classes == spec.n_object_classes);
    CHECK(f1.report.recall.count(3) == 1);
    CHECK(f1.report.recall.count(5) == 1);

    PreparedRun prep2 = prepare_run(spec, cfg, 3);
    TrainOutcome f2 = train_unbiased(prep2, Variant::fsta, cfg);
    CHECK(f1.epoch_losses == f2.epoch_losses);
    CHECK(nets_equal(f1.head, f2.head));
    check_reports_equal(f1.report, f2.report);

    // the full variant layers the same hook on the softened data
    TrainOutcome full = train_unbiased(prep, Variant::full, cfg);
    CHECK(full.epoch_losses.size() == static_cast<std::size_t>(cfg.epochs));
    CHECK_FALSE(full.epoch_losses == f1.epoch_losses);
}

TEST_CASE("reweighting changes the training trajectory") {
    const SynthSpec spec = small_spec();
    const HarnessConfig cfg = small_cfg();
    PreparedRun prep = prepare_run(spec, cfg, 3);
    TrainOutcome plain = train_unbiased(prep, Variant::raw, cfg);
    HarnessConfig rw = cfg;
    rw.reweight = true;
    TrainOutcome weighted = train_unbiased(prep, Variant::raw, rw);
    CHECK_FALSE(plain.epoch_losses == weighted.epoch_losses);
}

TEST_CASE("mean and sample deviation") {
    MetricStats s = mean_sd({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    CHECK(mean_sd({}).mean == 0.0);
    CHECK(mean_sd({5.0}).mean == 5.0);
    CHECK(mean_sd({5.0}).sd == 0.0);
}

TEST_CASE("run matrix layout and determinism") {
    SynthSpec spec = small_spec();
    spec.n_train_triplets = 300;
    HarnessConfig cfg = small_cfg();
    cfg.epochs = 2;

    CHECK_THROWS_AS(run_matrix(spec, {}, {1}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(run_matrix(spec, {Variant::raw}, {}, cfg), std::invalid_argument);

    MatrixResult res = run_matrix(spec, {Variant::raw, Variant::raw, Variant::ietrans}, {1, 2},
                                  cfg);
    CHECK(res.k_values == cfg.eval_ks);
    REQUIRE(res.reports.at("raw").size() == 4);  // listed twice, two seeds
    REQUIRE(res.reports.at("ietrans").size() == 2);
    // the duplicate variant entry replays identically within one run
    check_reports_equal(res.reports.at("raw")[0], res.reports.at("raw")[1]);
    check_reports_equal(res.reports.at("raw")[2], res.reports.at("raw")[3]);

    const std::string jpath = (temp_dir() / "matrix.json").string();
    save_matrix_json(res, jpath);
    std::ifstream in(jpath);
    nlohmann::json j;
    in >> j;
    CHECK(j.at("seeds") == std::vector<std::uint64_t>{1, 2});
    CHECK(j.at("k") == std::vector<int>{3, 5});
    const auto& cell = j.at("cells").at("ietrans");
    REQUIRE(cell.at("R@3").at("values").size() == 2);
    const std::vector<double> vals = cell.at("R@3").at("values").get<std::vector<double>>();
    CHECK(cell.at("R@3").at("mean").get<double>() == doctest::Approx(mean_sd(vals).mean));
    CHECK(cell.contains("mR@5_tail"));
    CHECK(cell.contains("F1@5"));

    const std::string mpath = (temp_dir() / "matrix.md").string();
    save_matrix_markdown(res, mpath);
    std::ifstream min(mpath);
    std::string md((std::istreambuf_iterator<char>(min)), std::istreambuf_iterator<char>());
    CHECK(md.find("| variant |") != std::string::npos);
    CHECK(md.find("| raw |") != std::string::npos);
    CHECK(md.find("| ietrans |") != std::string::npos);
    CHECK(md.find("R@3") != std::string::npos);
}
