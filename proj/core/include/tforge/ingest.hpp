#pragma once
// Loaders and writers for the three input artifacts: annotation JSON lines,
// biased-model prediction dumps (JSON lines), and binary feature matrices.
// Loaded stores are immutable; loading different files may run in parallel.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tforge/types.hpp"

namespace tforge {

// An annotated-image object pair with no relation label. Ids are assigned
// at load time: ascending image_id, then file order within the image,
// starting at 0. Prediction dumps reference pairs by this id.
struct NegativePair {
    std::int64_t negative_id = 0;
    ImageId image_id = 0;
    Entity subject;
    Entity object;
    bool operator==(const NegativePair&) const = default;
};

struct Dataset {
    LabelSpace label_space;
    std::map<ImageId, std::vector<TripletRecord>> images;
    std::map<ImageId, std::vector<NegativePair>> negatives;

    std::vector<const TripletRecord*> all_triplets() const;  // image order, then file order
    std::vector<const NegativePair*> all_negatives() const;  // ascending negative_id
    const TripletRecord* find_triplet(TripletId id) const;   // nullptr if absent
    const NegativePair* find_negative(std::int64_t id) const;
    std::int64_t max_triplet_id() const;  // -1 when empty
    std::size_t triplet_count() const;
    // Hard-label instance counts per non-background predicate (soft labels
    // count toward their argmax class).
    std::map<ClassId, std::int64_t> predicate_counts() const;

    void validate() const;

    bool operator==(const Dataset&) const = default;
};

// One line per image: {"image_id":N, "triplets":[{"id":N, "s":{"cls":N,
// "box":[x1,y1,x2,y2]}, "o":{...}, "p":N | "p_soft":{name|index: prob}}],
// "negatives":[{"s":{...},"o":{...}}]}. An optional first line carrying
// "object_classes"/"predicate_classes" (and optionally "groups" and
// "valid_triples") declares the label space; without it, class names are
// synthesized from the largest index seen and groups fall back to observed
// hard-label counts.
Dataset load_annotations(const std::string& path);
void save_annotations(const Dataset& dataset, const std::string& path);

struct ComboStats {
    std::vector<double> mean;  // arithmetic mean of member per-triplet vectors
    std::int64_t support = 0;
};

struct PredictionDump {
    int n_predicates = 0;
    std::map<TripletId, std::vector<double>> per_triplet;
    std::map<Triple, ComboStats> per_combo;  // keyed by (c_s, hard c_p, c_o)
    std::map<std::int64_t, std::vector<double>> per_negative;

    void validate() const;  // every vector sums to 1 within 1e-6, entries >= 0
};

// JSON lines of {"triplet_id":N,"vector":[...]} or
// {"negative_id":N,"vector":[...]}. Vectors off from sum 1 by <= 1e-4 are
// renormalized; worse is a hard error. per_combo is aggregated here from
// per_triplet, never stored.
PredictionDump load_predictions(const std::string& path, const Dataset& dataset);
void save_predictions(const PredictionDump& dump, const std::string& path);

// Recompute per-combo means from scratch; shared by the loader and the
// synthetic harness.
std::map<Triple, ComboStats> aggregate_combos(
    const std::map<TripletId, std::vector<double>>& per_triplet, const Dataset& dataset);

struct FeatureRow {
    ClassId cls = 0;
    std::vector<float> vec;
    bool operator==(const FeatureRow&) const = default;
};

struct FeatureStore {
    std::uint32_t dim = 0;
    std::map<std::uint64_t, FeatureRow> rows;

    bool operator==(const FeatureStore&) const = default;
};

// Little-endian binary: magic "TFRG", u32 version (1), u32 dim, u32 row
// count, then per row u64 instance id, u32 class, dim f32 values.
FeatureStore load_features(const std::string& path);
void save_features(const FeatureStore& store, const std::string& path);

}  // namespace tforge
