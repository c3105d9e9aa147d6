#include "tforge/ingest.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail_at(const std::string& path, std::size_t line, const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

json parse_line(const std::string& path, std::size_t line_no, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        fail_at(path, line_no, std::string("JSON parse error: ") + e.what());
    }
}

BBox parse_box(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
    BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid()) throw std::runtime_error("malformed box (needs x1<x2, y1<y2)");
    return b;
}

Entity parse_entity(const json& j) {
    Entity e;
    e.cls = j.at("cls").get<ClassId>();
    if (e.cls < 0) throw std::runtime_error("negative class index");
    e.box = parse_box(j.at("box"));
    return e;
}

json entity_json(const Entity& e) {
    return json{{"cls", e.cls}, {"box", {e.box.x1, e.box.y1, e.box.x2, e.box.y2}}};
}

// Soft-label keys are predicate names when the space is known, else
// stringified indices. All-digit keys parse as indices first.
ClassId parse_predicate_key(const std::string& key, const LabelSpace& space) {
    if (!key.empty() && key.find_first_not_of("0123456789") == std::string::npos)
        return static_cast<ClassId>(std::stol(key));
    for (std::size_t i = 0; i < space.predicate_classes.size(); ++i)
        if (space.predicate_classes[i] == key) return static_cast<ClassId>(i);
    throw std::runtime_error("unknown predicate name: " + key);
}

struct GroupLists {
    std::vector<ClassId> head, body, tail;
};

json groups_json(const std::map<ClassId, Group>& groups) {
    GroupLists g;
    for (const auto& [p, grp] : groups) {
        if (grp == Group::head) g.head.push_back(p);
        else if (grp == Group::body) g.body.push_back(p);
        else g.tail.push_back(p);
    }
    return json{{"head", g.head}, {"body", g.body}, {"tail", g.tail}};
}

std::map<ClassId, Group> parse_groups(const json& j) {
    std::map<ClassId, Group> out;
    for (const auto& [name, grp] :
         {std::pair{"head", Group::head}, {"body", Group::body}, {"tail", Group::tail}}) {
        if (!j.contains(name)) continue;
        for (const auto& p : j.at(name)) out[p.get<ClassId>()] = grp;
    }
    return out;
}

}  // namespace

std::vector<const TripletRecord*> Dataset::all_triplets() const {
    std::vector<const TripletRecord*> out;
    for (const auto& [img, recs] : images)
        for (const auto& r : recs) out.push_back(&r);
    return out;
}

std::vector<const NegativePair*> Dataset::all_negatives() const {
    std::vector<const NegativePair*> out;
    for (const auto& [img, pairs] : negatives)
        for (const auto& p : pairs) out.push_back(&p);
    return out;
}

const TripletRecord* Dataset::find_triplet(TripletId id) const {
    for (const auto& [img, recs] : images)
        for (const auto& r : recs)
            if (r.triplet_id == id) return &r;
    return nullptr;
}

const NegativePair* Dataset::find_negative(std::int64_t id) const {
    for (const auto& [img, pairs] : negatives)
        for (const auto& p : pairs)
            if (p.negative_id == id) return &p;
    return nullptr;
}

std::int64_t Dataset::max_triplet_id() const {
    std::int64_t m = -1;
    for (const auto& [img, recs] : images)
        for (const auto& r : recs) m = std::max(m, r.triplet_id);
    return m;
}

std::size_t Dataset::triplet_count() const {
    std::size_t n = 0;
    for (const auto& [img, recs] : images) n += recs.size();
    return n;
}

std::map<ClassId, std::int64_t> Dataset::predicate_counts() const {
    std::map<ClassId, std::int64_t> counts;
    for (ClassId p = 1; p < label_space.num_predicates(); ++p) counts[p] = 0;
    for (const auto& [img, recs] : images)
        for (const auto& r : recs) {
            const ClassId p = r.predicate_label.hard_class();
            if (p != kBackgroundPredicate) ++counts[p];
        }
    return counts;
}

void Dataset::validate() const {
    const bool has_space =
        !label_space.object_classes.empty() || !label_space.predicate_classes.empty();
    if (has_space) label_space.validate();
    std::set<TripletId> seen;
    for (const auto& [img, recs] : images) {
        for (const auto& r : recs) {
            if (r.image_id != img) throw std::runtime_error("triplet image_id mismatch");
            if (!seen.insert(r.triplet_id).second)
                throw std::runtime_error("duplicate triplet_id: " + std::to_string(r.triplet_id));
            if (!r.subject.box.valid() || !r.object.box.valid())
                throw std::runtime_error("malformed box");
            r.predicate_label.validate();
            if (has_space) {
                if (r.subject.cls >= label_space.num_objects() ||
                    r.object.cls >= label_space.num_objects())
                    throw std::runtime_error("object class out of range");
                for (const auto& [p, prob] : r.predicate_label.entries) {
                    (void)prob;
                    if (p >= label_space.num_predicates())
                        throw std::runtime_error("predicate class out of range");
                }
            }
        }
    }
    std::int64_t expect_neg = 0;
    for (const auto& [img, pairs] : negatives)
        for (const auto& p : pairs) {
            if (p.image_id != img) throw std::runtime_error("negative image_id mismatch");
            if (p.negative_id != expect_neg++)
                throw std::runtime_error("negative ids not dense ascending");
            if (has_space && (p.subject.cls >= label_space.num_objects() ||
                              p.object.cls >= label_space.num_objects()))
                throw std::runtime_error("object class out of range in negative pair");
        }
}

Dataset load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open annotations: " + path);

    Dataset ds;
    bool have_header = false;
    std::map<ClassId, Group> header_groups;

    struct RawLabel {
        // soft entries arrive before the label space is final when keys are
        // indices; names always need the header, which comes first
        SoftLabel label;
    };

    std::string line;
    std::size_t line_no = 0;
    ClassId max_obj = -1, max_pred = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_line(path, line_no, line);
        try {
            if (j.contains("object_classes")) {
                if (have_header || !ds.images.empty())
                    throw std::runtime_error("label-space header must be the first line");
                have_header = true;
                ds.label_space.object_classes =
                    j.at("object_classes").get<std::vector<std::string>>();
                ds.label_space.predicate_classes =
                    j.at("predicate_classes").get<std::vector<std::string>>();
                if (j.contains("groups")) header_groups = parse_groups(j.at("groups"));
                continue;
            }
            const ImageId image_id = j.at("image_id").get<ImageId>();
            if (ds.images.count(image_id))
                throw std::runtime_error("duplicate image_id: " + std::to_string(image_id));
            auto& recs = ds.images[image_id];
            for (const auto& t : j.value("triplets", json::array())) {
                TripletRecord r;
                r.triplet_id = t.at("id").get<TripletId>();
                r.image_id = image_id;
                r.subject = parse_entity(t.at("s"));
                r.object = parse_entity(t.at("o"));
                if (t.contains("p_soft")) {
                    for (const auto& [key, val] : t.at("p_soft").items())
                        r.predicate_label.entries[parse_predicate_key(key, ds.label_space)] =
                            val.get<double>();
                } else {
                    const ClassId p = t.at("p").get<ClassId>();
                    if (p < 0) throw std::runtime_error("negative predicate index");
                    r.predicate_label = SoftLabel::one_hot(p);
                }
                r.predicate_label.validate();
                max_obj = std::max({max_obj, r.subject.cls, r.object.cls});
                max_pred = std::max(max_pred, r.predicate_label.entries.rbegin()->first);
                recs.push_back(std::move(r));
            }
            auto& negs = ds.negatives[image_id];
            for (const auto& n : j.value("negatives", json::array())) {
                NegativePair np;
                np.image_id = image_id;
                np.subject = parse_entity(n.at("s"));
                np.object = parse_entity(n.at("o"));
                max_obj = std::max({max_obj, np.subject.cls, np.object.cls});
                negs.push_back(std::move(np));
            }
            if (negs.empty()) ds.negatives.erase(image_id);
        } catch (const std::runtime_error& e) {
            fail_at(path, line_no, e.what());
        } catch (const json::exception& e) {
            fail_at(path, line_no, e.what());
        }
    }

    if (!have_header && (max_obj >= 0 || max_pred >= 0)) {
        for (ClassId c = 0; c <= max_obj; ++c)
            ds.label_space.object_classes.push_back("obj_" + std::to_string(c));
        for (ClassId p = 0; p <= std::max(max_pred, 1); ++p)
            ds.label_space.predicate_classes.push_back(p == 0 ? "__background__"
                                                              : "pred_" + std::to_string(p));
    }

    // negative ids: ascending image id, then file order
    std::int64_t next_neg = 0;
    for (auto& [img, pairs] : ds.negatives)
        for (auto& p : pairs) p.negative_id = next_neg++;

    for (const auto& [img, recs] : ds.images)
        for (const auto& r : recs) {
            const ClassId p = r.predicate_label.hard_class();
            if (p != kBackgroundPredicate)
                ds.label_space.valid_triples.insert({r.subject.cls, p, r.object.cls});
        }

    if (!header_groups.empty()) {
        ds.label_space.groups = std::move(header_groups);
    } else if (!ds.images.empty()) {
        auto counts = ds.predicate_counts();
        if (!counts.empty()) ds.label_space.groups = group_predicates(counts);
    }

    ds.validate();
    return ds;
}

void save_annotations(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write annotations: " + path);
    const LabelSpace& space = dataset.label_space;
    if (!space.object_classes.empty() || !space.predicate_classes.empty()) {
        json header{{"object_classes", space.object_classes},
                    {"predicate_classes", space.predicate_classes}};
        if (!space.groups.empty()) header["groups"] = groups_json(space.groups);
        out << header.dump() << "\n";
    }
    std::set<ImageId> image_ids;
    for (const auto& [img, recs] : dataset.images) image_ids.insert(img);
    for (const auto& [img, pairs] : dataset.negatives) image_ids.insert(img);
    for (ImageId img : image_ids) {
        json jt = json::array();
        if (auto it = dataset.images.find(img); it != dataset.images.end()) {
            for (const auto& r : it->second) {
                json t{{"id", r.triplet_id},
                       {"s", entity_json(r.subject)},
                       {"o", entity_json(r.object)}};
                if (r.predicate_label.is_one_hot()) {
                    t["p"] = r.predicate_label.hard_class();
                } else {
                    json soft = json::object();
                    for (const auto& [p, prob] : r.predicate_label.entries) {
                        const std::string key = p < space.num_predicates()
                                                    ? space.predicate_classes[p]
                                                    : std::to_string(p);
                        soft[key] = prob;
                    }
                    t["p_soft"] = soft;
                }
                jt.push_back(std::move(t));
            }
        }
        json jn = json::array();
        if (auto it = dataset.negatives.find(img); it != dataset.negatives.end())
            for (const auto& n : it->second)
                jn.push_back(json{{"s", entity_json(n.subject)}, {"o", entity_json(n.object)}});
        json jimg{{"image_id", img}, {"triplets", jt}};
        if (!jn.empty()) jimg["negatives"] = jn;
        out << jimg.dump() << "\n";
    }
}

void PredictionDump::validate() const {
    auto check = [&](const std::vector<double>& v, const char* what) {
        if (static_cast<int>(v.size()) != n_predicates)
            throw std::runtime_error(std::string(what) + ": vector length mismatch");
        double s = 0.0;
        for (double x : v) {
            if (!(x >= 0.0)) throw std::runtime_error(std::string(what) + ": negative entry");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw std::runtime_error(std::string(what) + ": vector does not sum to 1");
    };
    for (const auto& [id, v] : per_triplet) check(v, "per_triplet");
    for (const auto& [id, v] : per_negative) check(v, "per_negative");
    for (const auto& [combo, st] : per_combo) {
        check(st.mean, "per_combo");
        if (st.support <= 0) throw std::runtime_error("per_combo: non-positive support");
    }
}

std::map<Triple, ComboStats> aggregate_combos(
    const std::map<TripletId, std::vector<double>>& per_triplet, const Dataset& dataset) {
    std::map<TripletId, const TripletRecord*> index;
    for (const auto* r : dataset.all_triplets()) index[r->triplet_id] = r;
    std::map<Triple, ComboStats> out;
    for (const auto& [id, vec] : per_triplet) {
        auto it = index.find(id);
        if (it == index.end())
            throw std::runtime_error("prediction for unknown triplet_id: " + std::to_string(id));
        const TripletRecord& r = *it->second;
        const Triple combo{r.subject.cls, r.predicate_label.hard_class(), r.object.cls};
        auto& st = out[combo];
        if (st.mean.empty()) st.mean.assign(vec.size(), 0.0);
        for (std::size_t i = 0; i < vec.size(); ++i) st.mean[i] += vec[i];
        ++st.support;
    }
    for (auto& [combo, st] : out)
        for (double& x : st.mean) x /= static_cast<double>(st.support);
    return out;
}

PredictionDump load_predictions(const std::string& path, const Dataset& dataset) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions: " + path);

    PredictionDump dump;
    dump.n_predicates = dataset.label_space.num_predicates();

    std::set<TripletId> known_triplets;
    for (const auto* r : dataset.all_triplets()) known_triplets.insert(r->triplet_id);
    std::set<std::int64_t> known_negatives;
    for (const auto* n : dataset.all_negatives()) known_negatives.insert(n->negative_id);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_line(path, line_no, line);
        try {
            auto vec = j.at("vector").get<std::vector<double>>();
            if (dump.n_predicates == 0) dump.n_predicates = static_cast<int>(vec.size());
            if (static_cast<int>(vec.size()) != dump.n_predicates)
                throw std::runtime_error("vector length mismatch");
            double s = 0.0;
            for (double x : vec) {
                if (!(x >= 0.0) || !std::isfinite(x))
                    throw std::runtime_error("vector entry negative or non-finite");
                s += x;
            }
            if (std::abs(s - 1.0) > 1e-4)
                throw std::runtime_error("vector sum off from 1 by more than 1e-4");
            // renormalize only genuinely off sums; accumulation noise near 1
            // passes through so save/load round trips are exact
            if (s > 0.0 && std::abs(s - 1.0) > 1e-9)
                for (double& x : vec) x /= s;
            if (j.contains("triplet_id")) {
                const TripletId id = j.at("triplet_id").get<TripletId>();
                if (!known_triplets.count(id))
                    throw std::runtime_error("unknown triplet_id: " + std::to_string(id));
                if (!dump.per_triplet.emplace(id, std::move(vec)).second)
                    throw std::runtime_error("duplicate triplet_id: " + std::to_string(id));
            } else if (j.contains("negative_id")) {
                const std::int64_t id = j.at("negative_id").get<std::int64_t>();
                if (!known_negatives.count(id))
                    throw std::runtime_error("unknown negative_id: " + std::to_string(id));
                if (!dump.per_negative.emplace(id, std::move(vec)).second)
                    throw std::runtime_error("duplicate negative_id: " + std::to_string(id));
            } else {
                throw std::runtime_error("line carries neither triplet_id nor negative_id");
            }
        } catch (const std::runtime_error& e) {
            fail_at(path, line_no, e.what());
        } catch (const json::exception& e) {
            fail_at(path, line_no, e.what());
        }
    }

    dump.per_combo = aggregate_combos(dump.per_triplet, dataset);
    dump.validate();
    return dump;
}

void save_predictions(const PredictionDump& dump, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    for (const auto& [id, vec] : dump.per_triplet)
        out << json{{"triplet_id", id}, {"vector", vec}}.dump() << "\n";
    for (const auto& [id, vec] : dump.per_negative)
        out << json{{"negative_id", id}, {"vector", vec}}.dump() << "\n";
}

namespace {

constexpr char kFeatureMagic[4] = {'T', 'F', 'R', 'G'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw std::runtime_error("truncated feature file: " + path);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace

FeatureStore load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open features: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw std::runtime_error("bad feature-file magic: " + path);
    const auto version = read_le<std::uint32_t>(in, path);
    if (version != kFeatureVersion)
        throw std::runtime_error("unsupported feature-file version " + std::to_string(version));
    FeatureStore store;
    store.dim = read_le<std::uint32_t>(in, path);
    const auto n_rows = read_le<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < n_rows; ++i) {
        const auto id = read_le<std::uint64_t>(in, path);
        FeatureRow row;
        row.cls = static_cast<ClassId>(read_le<std::uint32_t>(in, path));
        row.vec.resize(store.dim);
        for (std::uint32_t d = 0; d < store.dim; ++d) {
            row.vec[d] = read_le<float>(in, path);
            if (!std::isfinite(row.vec[d]))
                throw std::runtime_error("non-finite feature value in " + path);
        }
        if (store.rows.count(id))
            throw std::runtime_error("duplicate feature row id " + std::to_string(id));
        store.rows[id] = std::move(row);
    }
    return store;
}

void save_features(const FeatureStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write features: " + path);
    out.write(kFeatureMagic, 4);
    write_le<std::uint32_t>(out, kFeatureVersion);
    write_le<std::uint32_t>(out, store.dim);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.rows.size()));
    for (const auto& [id, row] : store.rows) {
        write_le<std::uint64_t>(out, id);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(row.cls));
        if (row.vec.size() != store.dim)
            throw std::runtime_error("feature row dim mismatch on save");
        for (float x : row.vec) write_le<float>(out, x);
    }
}

}  // namespace tforge
