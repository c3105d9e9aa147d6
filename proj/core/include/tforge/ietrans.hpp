#pragma once
// Baseline label-transfer pass: internal transfer moves general predicate
// labels toward rarer, more informative ones; external transfer labels
// no-relation pairs from the biased model's predictions. Both are pure
// deterministic functions of their inputs.

#include <map>
#include <set>
#include <vector>

#include "tforge/ingest.hpp"
#include "tforge/types.hpp"

namespace tforge {

struct TransferDecision {
    TripletId triplet_id = 0;
    ClassId source_class = 0;
    ClassId target_class = 0;
    double score = 0.0;  // biased-model target-class probability used for ranking

    bool operator==(const TransferDecision&) const = default;
};

// general predicate -> informative predicates it may transfer to; every
// child is strictly rarer than its parent and appears under one parent only
using ParentChildMap = std::map<ClassId, std::set<ClassId>>;

// Affinity of p toward q: support-weighted mean probability mass the biased
// model assigns to q across combos whose ground-truth predicate is p.
// Returns a negative value when p has no predicted instances.
double affinity(const PredictionDump& dump, ClassId p, ClassId q);

// For each candidate child q, pick the strictly-more-frequent parent p with
// the highest affinity toward q (ties by ascending p); keep the pair when
// affinity > tau_aff.
ParentChildMap build_parent_child(const PredictionDump& dump,
                                  const std::map<ClassId, std::int64_t>& counts,
                                  double tau_aff);

// Each source-labeled triplet joins exactly one (source, target) pool: the
// mapped target with the highest predicted probability (ties by ascending
// target index). Within a pool, triplets rank by descending target
// probability (ties by ascending triplet_id) and the top floor(k_i% * pool)
// receive a decision. Triplets without a prediction vector are skipped.
std::vector<TransferDecision> internal_transfer(const Dataset& dataset,
                                                const PredictionDump& dump,
                                                const ParentChildMap& map, double k_i);

// Negative pairs whose predicted argmax is non-background rank by
// descending max non-background probability (ties by ascending
// negative_id); the top floor(k_e% * pool) become one-hot triplets labeled
// with that argmax. New triplet ids start above the dataset maximum, in
// rank order.
std::vector<TripletRecord> external_transfer(const Dataset& dataset, const PredictionDump& dump,
                                             double k_e);

// Replace each decided triplet's label with one_hot(target). Decisions for
// unknown triplets are an error.
Dataset apply_internal(const Dataset& dataset, const std::vector<TransferDecision>& decisions);

// Append externally transferred triplets to their images. The consumed
// negative pairs stay listed; downstream passes never re-read them.
Dataset add_externals(const Dataset& dataset, const std::vector<TripletRecord>& externals);

void save_decisions(const std::vector<TransferDecision>& decisions, const std::string& path);
std::vector<TransferDecision> load_decisions(const std::string& path);

}  // namespace tforge
