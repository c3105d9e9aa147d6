#include "tforge/fsta.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

void FstaConfig::validate() const {
    if (n_t < 1) throw std::invalid_argument("n_t must be >= 1");
    if (s_iou < 0.0 || s_iou > 1.0) throw std::invalid_argument("s_iou must be in [0, 1]");
    if (u_h < 0.0 || u_h > 1.0) throw std::invalid_argument("u_h must be in [0, 1]");
    if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
}

std::vector<CandidateTriplet> sample_pairs(const PlanImage& image, const FstaConfig& cfg,
                                           Rng& rng) {
    cfg.validate();
    std::vector<CandidateTriplet> pool;
    const auto& props = image.proposals;
    for (std::size_t i = 0; i < props.size(); ++i) {
        for (std::size_t j = 0; j < props.size(); ++j) {
            if (i == j) continue;
            const TripletRecord* best = nullptr;
            double best_score = cfg.s_iou;  // strict: match needs min-IoU > s_iou
            for (const auto& gt : image.ground_truth) {
                const double s = std::min(iou(props[i].box, gt.subject.box),
                                          iou(props[j].box, gt.object.box));
                if (s > best_score ||
                    (best && s == best_score && gt.triplet_id < best->triplet_id)) {
                    best = &gt;
                    best_score = s;
                }
            }
            if (!best) continue;
            pool.push_back({image.image_id, best->triplet_id, props[i].cls, props[j].cls,
                            best->predicate_label.hard_class(), props[i].box, props[j].box,
                            best_score});
        }
    }
    if (pool.size() <= static_cast<std::size_t>(cfg.n_t)) return pool;
    const auto picks =
        rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(cfg.n_t));
    std::vector<CandidateTriplet> out;
    out.reserve(picks.size());
    for (std::size_t idx : picks) out.push_back(pool[idx]);
    return out;
}

std::vector<ArtificialTriplet> enum_spo_prime_pending(
    const std::vector<CandidateTriplet>& candidates, const SamplerTable& sampler) {
    std::vector<ArtificialTriplet> out;
    for (const auto& c : candidates) {
        if (!sampler.find(c.subject_cls, c.predicate)) continue;
        ArtificialTriplet t;
        t.kind = ArtificialKind::spo_prime;
        t.image_id = c.image_id;
        t.base_triplet_id = c.base_triplet_id;
        t.subject_cls = c.subject_cls;
        t.predicate = c.predicate;
        t.object_cls = -1;  // drawn after undersampling
        out.push_back(t);
    }
    return out;
}

void draw_objects(std::vector<ArtificialTriplet>& pending, const SamplerTable& sampler,
                  Rng& rng) {
    for (auto& t : pending) {
        if (t.kind != ArtificialKind::spo_prime || t.object_cls >= 0) continue;
        t.object_cls = draw(sampler, t.subject_cls, t.predicate, rng);
    }
}

std::vector<ArtificialTriplet> enum_spo_prime(const std::vector<CandidateTriplet>& candidates,
                                              const SamplerTable& sampler, Rng& rng) {
    auto out = enum_spo_prime_pending(candidates, sampler);
    draw_objects(out, sampler, rng);
    return out;
}

std::vector<ArtificialTriplet> enum_s_prime_po(const std::vector<CandidateTriplet>& candidates,
                                               const LabelSpace& space, const FstaConfig& cfg) {
    std::vector<ArtificialTriplet> out;
    for (const auto& base : candidates) {
        if (cfg.tail_only_s_po && space.group_of(base.predicate) != Group::tail) continue;
        for (const auto& donor : candidates) {
            if (donor.base_triplet_id == base.base_triplet_id) continue;
            if (!space.valid_triples.count({donor.subject_cls, base.predicate, base.object_cls}))
                continue;
            ArtificialTriplet t;
            t.kind = ArtificialKind::s_prime_po;
            t.image_id = base.image_id;
            t.base_triplet_id = base.base_triplet_id;
            t.subject_cls = donor.subject_cls;
            t.predicate = base.predicate;
            t.object_cls = base.object_cls;
            t.donor_triplet_id = donor.base_triplet_id;
            out.push_back(t);
        }
    }
    return out;
}

std::vector<ArtificialTriplet> undersample(const std::vector<ArtificialTriplet>& triplets,
                                           const LabelSpace& space, const FstaConfig& cfg,
                                           Rng& rng) {
    std::vector<ArtificialTriplet> out;
    for (const auto& t : triplets) {
        if (space.group_of(t.predicate) == Group::head && !(rng.uniform() < cfg.u_h)) continue;
        out.push_back(t);
    }
    return out;
}

GroupCounts count_groups(const std::vector<ArtificialTriplet>& triplets,
                         const LabelSpace& space) {
    GroupCounts counts;
    for (const auto& t : triplets) {
        switch (space.group_of(t.predicate)) {
            case Group::head: ++counts.head; break;
            case Group::body: ++counts.body; break;
            case Group::tail: ++counts.tail; break;
        }
    }
    return counts;
}

AugmentationPlan plan_step(const std::vector<PlanImage>& batch, const SamplerTable& sampler,
                           const LabelSpace& space, const FstaConfig& cfg, Rng& rng,
                           std::int64_t step_index) {
    cfg.validate();
    std::vector<CandidateTriplet> candidates;
    for (const auto& image : batch) {
        auto per_image = sample_pairs(image, cfg, rng);
        candidates.insert(candidates.end(), per_image.begin(), per_image.end());
    }
    auto spo = enum_spo_prime_pending(candidates, sampler);
    auto s_po = enum_s_prime_po(candidates, space, cfg);
    spo = undersample(spo, space, cfg, rng);
    s_po = undersample(s_po, space, cfg, rng);
    draw_objects(spo, sampler, rng);

    AugmentationPlan plan;
    plan.step_index = step_index;
    plan.triplets = std::move(spo);
    plan.triplets.insert(plan.triplets.end(), s_po.begin(), s_po.end());
    plan.counts = count_groups(plan.triplets, space);
    return plan;
}

double l_at(const AugmentationPlan& plan,
            const std::function<std::vector<double>(const ArtificialTriplet&)>& head) {
    if (plan.triplets.empty()) return 0.0;
    double total = 0.0;
    for (const auto& t : plan.triplets) {
        const std::vector<double> dist = head(t);
        if (t.predicate < 0 || t.predicate >= static_cast<ClassId>(dist.size()))
            throw std::runtime_error("predicate outside the evaluator's distribution");
        total += -std::log(dist[static_cast<std::size_t>(t.predicate)]);
    }
    return total / static_cast<double>(plan.triplets.size());
}

void save_plan(const AugmentationPlan& plan, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write plan: " + path);
    for (const auto& t : plan.triplets) {
        json j{{"kind", t.kind == ArtificialKind::spo_prime ? "spo_prime" : "s_prime_po"},
               {"image_id", t.image_id},
               {"base", t.base_triplet_id},
               {"s", t.subject_cls},
               {"p", t.predicate},
               {"o", t.object_cls}};
        if (t.kind == ArtificialKind::s_prime_po) j["donor"] = t.donor_triplet_id;
        out << j.dump() << "\n";
    }
}

}  // namespace tforge
