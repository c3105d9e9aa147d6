#pragma once
// Top-K recall metrics under the graph constraint (one predicate per
// ordered subject-object pair): micro recall, per-class macro recall with
// head/body/tail breakdown, and their harmonic/arithmetic means.

#include <map>
#include <string>
#include <vector>

#include "tforge/ingest.hpp"
#include "tforge/types.hpp"

namespace tforge {

struct PredTriplet {
    ImageId image_id = 0;
    Entity subject;
    Entity object;
    ClassId predicate = 0;
    double score = 0.0;

    bool operator==(const PredTriplet&) const = default;
};

struct GroupValues {
    double overall = 0.0;
    double head = 0.0;
    double body = 0.0;
    double tail = 0.0;
};

struct EvalReport {
    std::vector<int> k_values;
    std::map<int, double> recall;            // micro, pooled over images
    std::map<int, GroupValues> mean_recall;  // macro over classes with >= 1 GT
    std::map<int, double> f1;
    std::map<int, double> avg;
    // at the largest K; classes with zero ground truth are left out
    std::map<ClassId, double> per_class_recall;
};

// Keep each ordered (subject cls+box, object cls+box) pair's top-scoring
// prediction (score ties keep the lowest predicate index, then first
// occurrence). Output preserves input order of the survivors.
std::vector<PredTriplet> graph_constrain(const std::vector<PredTriplet>& preds);

// Harmonic and arithmetic mean; scale-agnostic (fractions or percents).
double f1_score(double r, double mr);  // 0 when both are 0
double avg_score(double r, double mr);

// A ground-truth triplet counts as recalled when a top-K prediction of its
// image matches subject class and box (IoU >= iou_thr), object class and
// box, and predicate. Matching is greedy in rank order and one-to-one;
// among eligible ground truths a prediction takes the highest min-IoU
// (ties by ascending triplet_id). Rank order is descending score with
// input-order-stable ties.
double recall_at_k(const std::vector<PredTriplet>& preds, const Dataset& gt, int k,
                   double iou_thr = 0.5);

GroupValues mean_recall_at_k(const std::vector<PredTriplet>& preds, const Dataset& gt, int k,
                             double iou_thr = 0.5,
                             std::map<ClassId, double>* per_class = nullptr);

EvalReport evaluate(const std::vector<PredTriplet>& preds, const Dataset& gt,
                    const std::vector<int>& k_values, double iou_thr = 0.5);

// JSON lines {"image_id":N,"s":{"cls":N,"box":[...]},"o":{...},"p":N,
// "score":x}
std::vector<PredTriplet> load_pred_triplets(const std::string& path);
void save_pred_triplets(const std::vector<PredTriplet>& preds, const std::string& path);

void save_report(const EvalReport& report, const std::string& path);

}  // namespace tforge
