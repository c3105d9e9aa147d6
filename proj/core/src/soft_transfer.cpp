#include "tforge/soft_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tforge {

QMode parse_q_mode(const std::string& name) {
    if (name == "one-minus-minmax") return QMode::one_minus_minmax;
    if (name == "minmax") return QMode::minmax;
    if (name == "naive") return QMode::naive;
    throw std::invalid_argument("unknown q-mode: " + name);
}

const char* q_mode_name(QMode mode) {
    switch (mode) {
        case QMode::one_minus_minmax: return "one-minus-minmax";
        case QMode::minmax: return "minmax";
        case QMode::naive: return "naive";
    }
    return "?";
}

double reliability_score(const PredictionDump& dump, const TransferDecision& d) {
    auto it = dump.per_triplet.find(d.triplet_id);
    if (it == dump.per_triplet.end())
        throw std::runtime_error("no prediction vector for triplet " +
                                 std::to_string(d.triplet_id));
    const std::vector<double>& v = it->second;
    auto at = [&](ClassId c) {
        if (c < 0 || c >= static_cast<ClassId>(v.size()))
            throw std::runtime_error("decision class outside prediction vector");
        return v[static_cast<std::size_t>(c)];
    };
    return at(d.target_class) - at(d.source_class);
}

std::vector<double> minmax_scale(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("minmax_scale on empty list");
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(scores.size(), 0.0);
    if (hi == lo) return out;  // degenerate: all zero by convention
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / (hi - lo);
    return out;
}

SoftLabel soft_label(double q_value, ClassId src, ClassId tar) {
    if (!(q_value >= 0.0 && q_value <= 1.0))
        throw std::invalid_argument("Q value outside [0, 1]");
    if (src == tar) throw std::invalid_argument("soft label needs distinct classes");
    SoftLabel l;
    const double tar_p = 1.0 / (1.0 + q_value);
    l.entries[tar] = tar_p;
    l.entries[src] = 1.0 - tar_p;  // exact complement so the mass sums to 1
    return l;
}

ReliabilityRanking rank_decisions(const PredictionDump& dump,
                                  const std::vector<TransferDecision>& decisions, double k_s) {
    if (k_s < 0.0 || k_s > 100.0) throw std::invalid_argument("k_s must be in [0, 100]");
    ReliabilityRanking ranking;
    ranking.k_s = k_s;
    for (const auto& d : decisions)
        ranking.entries.push_back({d.triplet_id, reliability_score(dump, d)});
    std::sort(ranking.entries.begin(), ranking.entries.end(),
              [](const ReliabilityEntry& a, const ReliabilityEntry& b) {
                  if (a.score != b.score) return a.score < b.score;
                  return a.triplet_id < b.triplet_id;
              });
    ranking.selected_count = static_cast<std::size_t>(
        std::floor(k_s / 100.0 * static_cast<double>(ranking.entries.size())));
    return ranking;
}

Dataset apply_soft_transfer(const Dataset& dataset, const PredictionDump& dump,
                            const std::vector<TransferDecision>& decisions, double k_s,
                            QMode mode) {
    std::map<TripletId, const TransferDecision*> by_id;
    for (const auto& d : decisions) {
        if (!by_id.emplace(d.triplet_id, &d).second)
            throw std::runtime_error("duplicate decision for triplet " +
                                     std::to_string(d.triplet_id));
    }

    std::map<TripletId, SoftLabel> new_labels;
    if (mode == QMode::naive) {
        for (const auto& d : decisions) {
            SoftLabel l;
            l.entries[d.target_class] = 0.5;
            l.entries[d.source_class] = 0.5;
            new_labels[d.triplet_id] = std::move(l);
        }
    } else {
        const ReliabilityRanking ranking = rank_decisions(dump, decisions, k_s);
        std::vector<double> selected_scores;
        for (std::size_t i = 0; i < ranking.selected_count; ++i)
            selected_scores.push_back(ranking.entries[i].score);
        std::vector<double> q_prime;
        if (!selected_scores.empty()) q_prime = minmax_scale(selected_scores);
        for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
            const TransferDecision& d = *by_id.at(ranking.entries[i].triplet_id);
            if (i < ranking.selected_count) {
                const double q =
                    mode == QMode::one_minus_minmax ? 1.0 - q_prime[i] : q_prime[i];
                new_labels[d.triplet_id] = soft_label(q, d.source_class, d.target_class);
            } else {
                new_labels[d.triplet_id] = SoftLabel::one_hot(d.target_class);
            }
        }
    }

    Dataset out = dataset;
    std::size_t applied = 0;
    for (auto& [img, recs] : out.images)
        for (auto& r : recs) {
            auto it = new_labels.find(r.triplet_id);
            if (it == new_labels.end()) continue;
            r.predicate_label = it->second;
            const TransferDecision& d = *by_id.at(r.triplet_id);
            out.label_space.valid_triples.insert({r.subject.cls, d.target_class, r.object.cls});
            ++applied;
        }
    if (applied != new_labels.size())
        throw std::runtime_error("decisions reference triplets missing from the dataset");
    return out;
}

}  // namespace tforge
