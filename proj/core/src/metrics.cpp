#include "tforge/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

std::vector<PredTriplet> graph_constrain(const std::vector<PredTriplet>& preds) {
    using PairKey = std::tuple<ImageId, ClassId, BBox, ClassId, BBox>;
    std::map<PairKey, std::size_t> best;  // index of the kept prediction
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const PredTriplet& p = preds[i];
        const PairKey key{p.image_id, p.subject.cls, p.subject.box, p.object.cls,
                          p.object.box};
        auto [it, inserted] = best.emplace(key, i);
        if (inserted) continue;
        const PredTriplet& cur = preds[it->second];
        if (p.score > cur.score ||
            (p.score == cur.score && p.predicate < cur.predicate))
            it->second = i;
    }
    std::vector<bool> keep(preds.size(), false);
    for (const auto& [key, idx] : best) keep[idx] = true;
    std::vector<PredTriplet> out;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (keep[i]) out.push_back(preds[i]);
    return out;
}

double f1_score(double r, double mr) {
    if (r + mr == 0.0) return 0.0;
    return 2.0 * r * mr / (r + mr);
}

double avg_score(double r, double mr) { return (r + mr) / 2.0; }

namespace {

// Per-image match pass at one K. matched runs parallel to the image's
// ground-truth list.
void match_image(const std::vector<PredTriplet>& image_preds,
                 const std::vector<TripletRecord>& gt, int k, double iou_thr,
                 std::vector<bool>& matched) {
    matched.assign(gt.size(), false);
    std::vector<std::size_t> order(image_preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return image_preds[a].score > image_preds[b].score;
    });
    const std::size_t top = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    for (std::size_t rank = 0; rank < top; ++rank) {
        const PredTriplet& p = image_preds[order[rank]];
        std::size_t best_gt = gt.size();
        double best_score = -1.0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (matched[g]) continue;
            const TripletRecord& t = gt[g];
            if (t.subject.cls != p.subject.cls || t.object.cls != p.object.cls) continue;
            if (t.predicate_label.hard_class() != p.predicate) continue;
            const double iou_s = iou(t.subject.box, p.subject.box);
            const double iou_o = iou(t.object.box, p.object.box);
            if (iou_s < iou_thr || iou_o < iou_thr) continue;
            const double s = std::min(iou_s, iou_o);
            if (s > best_score ||
                (s == best_score && best_gt < gt.size() &&
                 t.triplet_id < gt[best_gt].triplet_id)) {
                best_score = s;
                best_gt = g;
            }
        }
        if (best_gt < gt.size()) matched[best_gt] = true;
    }
}

struct MatchTotals {
    std::map<ClassId, std::int64_t> gt_per_class;
    std::map<ClassId, std::int64_t> matched_per_class;
    std::int64_t gt_total = 0;
    std::int64_t matched_total = 0;
};

MatchTotals run_matching(const std::vector<PredTriplet>& preds, const Dataset& gt, int k,
                         double iou_thr) {
    if (k <= 0) throw std::invalid_argument("K must be positive");
    const std::vector<PredTriplet> constrained = graph_constrain(preds);
    std::map<ImageId, std::vector<PredTriplet>> by_image;
    for (const auto& p : constrained) by_image[p.image_id].push_back(p);

    MatchTotals totals;
    std::vector<bool> matched;
    for (const auto& [img, gt_list] : gt.images) {
        static const std::vector<PredTriplet> kEmpty;
        auto it = by_image.find(img);
        const auto& image_preds = it == by_image.end() ? kEmpty : it->second;
        match_image(image_preds, gt_list, k, iou_thr, matched);
        for (std::size_t g = 0; g < gt_list.size(); ++g) {
            const ClassId c = gt_list[g].predicate_label.hard_class();
            ++totals.gt_per_class[c];
            ++totals.gt_total;
            if (matched[g]) {
                ++totals.matched_per_class[c];
                ++totals.matched_total;
            }
        }
    }
    return totals;
}

}  // namespace

double recall_at_k(const std::vector<PredTriplet>& preds, const Dataset& gt, int k,
                   double iou_thr) {
    const MatchTotals totals = run_matching(preds, gt, k, iou_thr);
    if (totals.gt_total == 0) return 0.0;
    return static_cast<double>(totals.matched_total) / static_cast<double>(totals.gt_total);
}

GroupValues mean_recall_at_k(const std::vector<PredTriplet>& preds, const Dataset& gt, int k,
                             double iou_thr, std::map<ClassId, double>* per_class) {
    const MatchTotals totals = run_matching(preds, gt, k, iou_thr);
    GroupValues out;
    double sum = 0.0, head_sum = 0.0, body_sum = 0.0, tail_sum = 0.0;
    int n = 0, head_n = 0, body_n = 0, tail_n = 0;
    if (per_class) per_class->clear();
    for (const auto& [c, gt_count] : totals.gt_per_class) {
        if (gt_count == 0) continue;
        const auto mit = totals.matched_per_class.find(c);
        const double r = mit == totals.matched_per_class.end()
                             ? 0.0
                             : static_cast<double>(mit->second) / static_cast<double>(gt_count);
        if (per_class) (*per_class)[c] = r;
        sum += r;
        ++n;
        auto git = gt.label_space.groups.find(c);
        if (git == gt.label_space.groups.end()) continue;
        switch (git->second) {
            case Group::head: head_sum += r; ++head_n; break;
            case Group::body: body_sum += r; ++body_n; break;
            case Group::tail: tail_sum += r; ++tail_n; break;
        }
    }
    out.overall = n ? sum / n : 0.0;
    out.head = head_n ? head_sum / head_n : 0.0;
    out.body = body_n ? body_sum / body_n : 0.0;
    out.tail = tail_n ? tail_sum / tail_n : 0.0;
    return out;
}

EvalReport evaluate(const std::vector<PredTriplet>& preds, const Dataset& gt,
                    const std::vector<int>& k_values, double iou_thr) {
    if (k_values.empty()) throw std::invalid_argument("need at least one K");
    EvalReport report;
    report.k_values = k_values;
    int max_k = k_values.front();
    for (int k : k_values) max_k = std::max(max_k, k);
    for (int k : k_values) {
        const double r = recall_at_k(preds, gt, k, iou_thr);
        std::map<ClassId, double> per_class;
        const GroupValues mr = mean_recall_at_k(preds, gt, k, iou_thr, &per_class);
        report.recall[k] = r;
        report.mean_recall[k] = mr;
        report.f1[k] = f1_score(r, mr.overall);
        report.avg[k] = avg_score(r, mr.overall);
        if (k == max_k) report.per_class_recall = std::move(per_class);
    }
    return report;
}

std::vector<PredTriplet> load_pred_triplets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions: " + path);
    std::vector<PredTriplet> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            PredTriplet p;
            p.image_id = j.at("image_id").get<ImageId>();
            auto ent = [](const json& je) {
                Entity e;
                e.cls = je.at("cls").get<ClassId>();
                const auto& b = je.at("box");
                e.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                         b[3].get<double>()};
                return e;
            };
            p.subject = ent(j.at("s"));
            p.object = ent(j.at("o"));
            p.predicate = j.at("p").get<ClassId>();
            p.score = j.at("score").get<double>();
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void save_pred_triplets(const std::vector<PredTriplet>& preds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    auto ent = [](const Entity& e) {
        return json{{"cls", e.cls}, {"box", {e.box.x1, e.box.y1, e.box.x2, e.box.y2}}};
    };
    for (const auto& p : preds)
        out << json{{"image_id", p.image_id},
                    {"s", ent(p.subject)},
                    {"o", ent(p.object)},
                    {"p", p.predicate},
                    {"score", p.score}}
                   .dump()
            << "\n";
}

void save_report(const EvalReport& report, const std::string& path) {
    json j;
    j["k_values"] = report.k_values;
    for (int k : report.k_values) {
        const std::string key = std::to_string(k);
        j["recall"][key] = report.recall.at(k);
        const GroupValues& mr = report.mean_recall.at(k);
        j["mean_recall"][key] = {{"overall", mr.overall},
                                 {"head", mr.head},
                                 {"body", mr.body},
                                 {"tail", mr.tail}};
        j["f1"][key] = report.f1.at(k);
        j["avg"][key] = report.avg.at(k);
    }
    json per_class = json::object();
    for (const auto& [c, r] : report.per_class_recall) per_class[std::to_string(c)] = r;
    j["per_class_recall"] = per_class;
    j["note"] = "per_class_recall is reported at the largest K; classes with zero "
                "ground-truth instances are excluded from macro averages";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace tforge
