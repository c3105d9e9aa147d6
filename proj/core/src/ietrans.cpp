#include "tforge/ietrans.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

double affinity(const PredictionDump& dump, ClassId p, ClassId q) {
    double mass = 0.0;
    std::int64_t support = 0;
    for (const auto& [combo, st] : dump.per_combo) {
        if (combo.predicate != p) continue;
        if (q >= 0 && q < static_cast<ClassId>(st.mean.size()))
            mass += st.mean[static_cast<std::size_t>(q)] * static_cast<double>(st.support);
        support += st.support;
    }
    if (support == 0) return -1.0;
    return mass / static_cast<double>(support);
}

ParentChildMap build_parent_child(const PredictionDump& dump,
                                  const std::map<ClassId, std::int64_t>& counts,
                                  double tau_aff) {
    ParentChildMap out;
    for (const auto& [q, q_count] : counts) {
        if (q == kBackgroundPredicate) continue;
        ClassId best_parent = -1;
        double best_aff = tau_aff;  // strict threshold: keep only affinity > tau_aff
        for (const auto& [p, p_count] : counts) {
            if (p == q || p == kBackgroundPredicate) continue;
            if (p_count <= q_count) continue;  // targets must be strictly rarer
            const double a = affinity(dump, p, q);
            // ascending map order makes strict > keep the lowest p on ties
            if (a > best_aff) {
                best_aff = a;
                best_parent = p;
            }
        }
        if (best_parent >= 0) out[best_parent].insert(q);
    }
    return out;
}

std::vector<TransferDecision> internal_transfer(const Dataset& dataset,
                                                const PredictionDump& dump,
                                                const ParentChildMap& map, double k_i) {
    if (k_i < 0.0 || k_i > 100.0) throw std::invalid_argument("k_i must be in [0, 100]");
    // pools keyed (source, target); each triplet lands in exactly one pool
    std::map<std::pair<ClassId, ClassId>, std::vector<TransferDecision>> pools;
    for (const auto* r : dataset.all_triplets()) {
        const ClassId src = r->predicate_label.hard_class();
        auto mit = map.find(src);
        if (mit == map.end()) continue;
        auto pit = dump.per_triplet.find(r->triplet_id);
        if (pit == dump.per_triplet.end()) continue;
        const std::vector<double>& vec = pit->second;
        ClassId best_q = -1;
        double best_p = -1.0;
        for (ClassId q : mit->second) {
            const double pq = q < static_cast<ClassId>(vec.size()) ? vec[q] : 0.0;
            if (pq > best_p) {  // ties keep the lowest q (set iterates ascending)
                best_p = pq;
                best_q = q;
            }
        }
        if (best_q < 0) continue;
        pools[{src, best_q}].push_back({r->triplet_id, src, best_q, best_p});
    }

    std::vector<TransferDecision> out;
    for (auto& [key, pool] : pools) {
        std::sort(pool.begin(), pool.end(), [](const TransferDecision& a, const TransferDecision& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.triplet_id < b.triplet_id;
        });
        const auto take =
            static_cast<std::size_t>(std::floor(k_i / 100.0 * static_cast<double>(pool.size())));
        out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(out.begin(), out.end(), [](const TransferDecision& a, const TransferDecision& b) {
        return a.triplet_id < b.triplet_id;
    });
    return out;
}

std::vector<TripletRecord> external_transfer(const Dataset& dataset, const PredictionDump& dump,
                                             double k_e) {
    if (k_e < 0.0 || k_e > 100.0) throw std::invalid_argument("k_e must be in [0, 100]");
    struct Ranked {
        const NegativePair* pair;
        ClassId predicate;
        double score;
    };
    std::vector<Ranked> pool;
    for (const auto* n : dataset.all_negatives()) {
        auto it = dump.per_negative.find(n->negative_id);
        if (it == dump.per_negative.end()) continue;
        const std::vector<double>& vec = it->second;
        ClassId argmax = 0;
        for (ClassId c = 1; c < static_cast<ClassId>(vec.size()); ++c)
            if (vec[c] > vec[argmax]) argmax = c;  // ties keep the lowest index
        if (argmax == kBackgroundPredicate) continue;
        double best_nb = 0.0;
        ClassId best_cls = -1;
        for (ClassId c = 1; c < static_cast<ClassId>(vec.size()); ++c)
            if (vec[c] > best_nb) {
                best_nb = vec[c];
                best_cls = c;
            }
        if (best_cls < 0) continue;
        pool.push_back({n, best_cls, best_nb});
    }
    std::sort(pool.begin(), pool.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.pair->negative_id < b.pair->negative_id;
    });
    const auto take =
        static_cast<std::size_t>(std::floor(k_e / 100.0 * static_cast<double>(pool.size())));

    std::vector<TripletRecord> out;
    TripletId next_id = dataset.max_triplet_id() + 1;
    for (std::size_t i = 0; i < take; ++i) {
        const Ranked& r = pool[i];
        TripletRecord rec;
        rec.triplet_id = next_id++;
        rec.image_id = r.pair->image_id;
        rec.subject = r.pair->subject;
        rec.object = r.pair->object;
        rec.predicate_label = SoftLabel::one_hot(r.predicate);
        out.push_back(std::move(rec));
    }
    return out;
}

Dataset apply_internal(const Dataset& dataset, const std::vector<TransferDecision>& decisions) {
    Dataset out = dataset;
    std::map<TripletId, TripletRecord*> index;
    for (auto& [img, recs] : out.images)
        for (auto& r : recs) index[r.triplet_id] = &r;
    for (const auto& d : decisions) {
        auto it = index.find(d.triplet_id);
        if (it == index.end())
            throw std::runtime_error("decision for unknown triplet_id: " +
                                     std::to_string(d.triplet_id));
        it->second->predicate_label = SoftLabel::one_hot(d.target_class);
        out.label_space.valid_triples.insert(
            {it->second->subject.cls, d.target_class, it->second->object.cls});
    }
    return out;
}

Dataset add_externals(const Dataset& dataset, const std::vector<TripletRecord>& externals) {
    Dataset out = dataset;
    for (const auto& rec : externals) {
        out.images[rec.image_id].push_back(rec);
        const ClassId p = rec.predicate_label.hard_class();
        if (p != kBackgroundPredicate)
            out.label_space.valid_triples.insert({rec.subject.cls, p, rec.object.cls});
    }
    out.validate();
    return out;
}

void save_decisions(const std::vector<TransferDecision>& decisions, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write decisions: " + path);
    for (const auto& d : decisions)
        out << json{{"triplet_id", d.triplet_id},
                    {"src", d.source_class},
                    {"tar", d.target_class},
                    {"score", d.score}}
                   .dump()
            << "\n";
}

std::vector<TransferDecision> load_decisions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open decisions: " + path);
    std::vector<TransferDecision> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            TransferDecision d;
            d.triplet_id = j.at("triplet_id").get<TripletId>();
            d.source_class = j.at("src").get<ClassId>();
            d.target_class = j.at("tar").get<ClassId>();
            d.score = j.at("score").get<double>();
            if (d.source_class == d.target_class)
                throw std::runtime_error("decision with source == target");
            out.push_back(d);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace tforge
