#pragma once
// Per-step planning of artificial triplets: match region proposals to
// ground-truth triplets, enumerate swapped-subject and generated-object
// combinations, undersample the head group, then draw generated object
// classes. Planning is a pure function of (inputs, rng state).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tforge/ingest.hpp"
#include "tforge/mp_sampler.hpp"
#include "tforge/rng.hpp"
#include "tforge/types.hpp"

namespace tforge {

struct FstaConfig {
    int n_t = 2;          // proposal pairs kept per image
    double s_iou = 0.7;   // overlap threshold against ground truth
    double u_h = 0.2;     // head-group retention probability
    double alpha = 0.1;   // weight of the artificial-triplet loss
    bool tail_only_s_po = true;

    void validate() const;
};

struct Proposal {
    ClassId cls = 0;  // predicted class
    BBox box;
};

struct PlanImage {
    ImageId image_id = 0;
    std::vector<Proposal> proposals;
    std::vector<TripletRecord> ground_truth;
};

// A proposal pair matched to a ground-truth triplet; inherits that
// triplet's predicate. match_score is min(subject IoU, object IoU).
struct CandidateTriplet {
    ImageId image_id = 0;
    TripletId base_triplet_id = 0;
    ClassId subject_cls = 0;
    ClassId object_cls = 0;
    ClassId predicate = 0;
    BBox subject_box;
    BBox object_box;
    double match_score = 0.0;
};

enum class ArtificialKind { spo_prime, s_prime_po };

struct ArtificialTriplet {
    ArtificialKind kind = ArtificialKind::spo_prime;
    ImageId image_id = 0;
    TripletId base_triplet_id = 0;
    ClassId subject_cls = 0;  // base subject (spo') or donor subject (s'po)
    ClassId predicate = 0;    // ground truth of the base triplet
    ClassId object_cls = -1;  // requested class (spo', -1 until drawn) or base object
    TripletId donor_triplet_id = -1;  // s'po only

    bool operator==(const ArtificialTriplet&) const = default;
};

struct GroupCounts {
    std::int64_t head = 0;
    std::int64_t body = 0;
    std::int64_t tail = 0;
    bool operator==(const GroupCounts&) const = default;
};

struct AugmentationPlan {
    std::int64_t step_index = 0;
    std::vector<ArtificialTriplet> triplets;  // spo' entries first, then s'po
    GroupCounts counts;

    bool operator==(const AugmentationPlan&) const = default;
};

// Pool: ordered proposal pairs whose boxes both overlap some ground-truth
// triplet's subject and object with IoU > s_iou; each pair matches the
// single GT with the highest min-IoU (ties by ascending triplet_id). n_t
// pairs are then drawn uniformly without replacement.
std::vector<CandidateTriplet> sample_pairs(const PlanImage& image, const FstaConfig& cfg,
                                           Rng& rng);

// One pending spo' entry (object class undrawn) per candidate whose
// (subject, predicate) has a sampler entry.
std::vector<ArtificialTriplet> enum_spo_prime_pending(
    const std::vector<CandidateTriplet>& candidates, const SamplerTable& sampler);

// Fill requested object classes via the sampler, in list order.
void draw_objects(std::vector<ArtificialTriplet>& pending, const SamplerTable& sampler, Rng& rng);

// Enumerate and draw in one call.
std::vector<ArtificialTriplet> enum_spo_prime(const std::vector<CandidateTriplet>& candidates,
                                              const SamplerTable& sampler, Rng& rng);

// Every (base, donor) candidate pair with distinct base triplets whose
// swapped triple stays valid; tail_only_s_po restricts to tail-group
// predicates.
std::vector<ArtificialTriplet> enum_s_prime_po(const std::vector<CandidateTriplet>& candidates,
                                               const LabelSpace& space, const FstaConfig& cfg);

// Head-group entries survive an independent Bernoulli(u_h) each; body and
// tail pass through. One uniform draw is consumed per head entry.
std::vector<ArtificialTriplet> undersample(const std::vector<ArtificialTriplet>& triplets,
                                           const LabelSpace& space, const FstaConfig& cfg,
                                           Rng& rng);

GroupCounts count_groups(const std::vector<ArtificialTriplet>& triplets, const LabelSpace& space);

// Full step: sample_pairs per image, enumerate both sets over the pooled
// candidates, undersample each (spo' first), then draw object classes for
// the surviving spo' entries.
AugmentationPlan plan_step(const std::vector<PlanImage>& batch, const SamplerTable& sampler,
                           const LabelSpace& space, const FstaConfig& cfg, Rng& rng,
                           std::int64_t step_index = 0);

// Mean cross-entropy of the evaluator's predicted predicate distribution
// against each planned predicate. The caller scales by alpha.
double l_at(const AugmentationPlan& plan,
            const std::function<std::vector<double>(const ArtificialTriplet&)>& head);

void save_plan(const AugmentationPlan& plan, const std::string& path);

}  // namespace tforge
