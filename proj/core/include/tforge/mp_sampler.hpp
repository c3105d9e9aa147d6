#pragma once
// Difficulty-weighted sampler over candidate object classes for a given
// (subject, predicate) pair. Difficulty of a completion is the biased
// model's margin between its top class and the ground-truth predicate on
// that combo's mean prediction; harder combos are drawn more often.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tforge/ingest.hpp"
#include "tforge/rng.hpp"
#include "tforge/types.hpp"

namespace tforge {

struct SamplerEntry {
    std::vector<ClassId> candidates;    // ascending class index
    std::vector<double> difficulty;     // parallel, >= 0
    std::vector<double> probabilities;  // parallel, sums to 1
    bool uniform_fallback = false;      // set when every difficulty is zero

    bool operator==(const SamplerEntry&) const = default;
};

struct SamplerTable {
    std::map<std::pair<ClassId, ClassId>, SamplerEntry> entries;  // keyed (c_s, c_p)

    const SamplerEntry* find(ClassId c_s, ClassId c_p) const;
    bool operator==(const SamplerTable&) const = default;
};

// All c_o completing (c_s, c_p) within valid_triples, ascending; empty is
// an error.
std::vector<ClassId> candidates(const LabelSpace& space, ClassId c_s, ClassId c_p);

// max(mean vector) - mean vector[c_p] for the combo; zero iff the
// ground-truth predicate attains the maximum (ties included). The combo
// must be present in the dump.
double difficulty(const PredictionDump& dump, ClassId c_s, ClassId c_p, ClassId c_o);

// p_i = d_i / sum(d); uniform when sum(d) == 0. Second member of the pair
// reports the fallback.
std::pair<std::vector<double>, bool> probabilities(const std::vector<double>& difficulties);

// Candidates without biased-model support are dropped; (c_s, c_p) pairs
// left with no supported candidate get no entry.
SamplerTable build_sampler(const LabelSpace& space, const PredictionDump& dump);

// Inverse-CDF draw from the stored distribution; missing entry is an error.
ClassId draw(const SamplerTable& table, ClassId c_s, ClassId c_p, Rng& rng);

void save_sampler(const SamplerTable& table, const std::string& path);
SamplerTable load_sampler(const std::string& path);

}  // namespace tforge
