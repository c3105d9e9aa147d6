#pragma once
// Soften the least-reliable internal-transfer decisions into two-class
// probabilistic labels. Reliability of a decision is the biased model's
// target-class probability minus its source-class probability; the bottom
// slice of that ranking keeps partial source mass instead of flipping
// outright.

#include <string>
#include <vector>

#include "tforge/ietrans.hpp"
#include "tforge/ingest.hpp"

namespace tforge {

// Q mapping from min-max-scaled reliability: the default keeps more source
// mass for less reliable transfers (Q = 1 - Q'); the ablation variant uses
// Q = Q'; naive skips ranking and assigns {0.5, 0.5} everywhere.
enum class QMode { one_minus_minmax, minmax, naive };

QMode parse_q_mode(const std::string& name);
const char* q_mode_name(QMode mode);

struct ReliabilityEntry {
    TripletId triplet_id = 0;
    double score = 0.0;
    bool operator==(const ReliabilityEntry&) const = default;
};

struct ReliabilityRanking {
    std::vector<ReliabilityEntry> entries;  // ascending score, ties ascending id
    double k_s = 0.0;
    std::size_t selected_count = 0;  // floor(k_s% * entries), the softened prefix
};

// target-class probability minus source-class probability, in [-1, 1]
double reliability_score(const PredictionDump& dump, const TransferDecision& d);

// (r - min) / (max - min); all zero when max == min or the list is a
// single element
std::vector<double> minmax_scale(const std::vector<double>& scores);

// target -> 1/(1+Q), source -> Q/(1+Q); sums to 1 exactly
SoftLabel soft_label(double q_value, ClassId src, ClassId tar);

ReliabilityRanking rank_decisions(const PredictionDump& dump,
                                  const std::vector<TransferDecision>& decisions, double k_s);

// Full pass: rank, soften the selected prefix via the chosen Q mapping
// (min-max is computed over the selected prefix only), hard-transfer the
// rest. Labels of undecided triplets are untouched.
Dataset apply_soft_transfer(const Dataset& dataset, const PredictionDump& dump,
                            const std::vector<TransferDecision>& decisions, double k_s,
                            QMode mode);

}  // namespace tforge
