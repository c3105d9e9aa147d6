#include "tforge/types.hpp"

#include <algorithm>
#include <cmath>

namespace tforge {

const char* group_name(Group g) {
    switch (g) {
        case Group::head: return "head";
        case Group::body: return "body";
        case Group::tail: return "tail";
    }
    return "?";
}

double iou(const BBox& a, const BBox& b) {
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = ix2 - ix1;
    const double ih = iy2 - iy1;
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

SoftLabel SoftLabel::one_hot(ClassId cls) {
    SoftLabel l;
    l.entries[cls] = 1.0;
    return l;
}

double SoftLabel::prob(ClassId cls) const {
    auto it = entries.find(cls);
    return it == entries.end() ? 0.0 : it->second;
}

double SoftLabel::sum() const {
    double s = 0.0;
    for (const auto& [cls, p] : entries) s += p;
    return s;
}

ClassId SoftLabel::hard_class() const {
    if (entries.empty()) throw std::logic_error("hard_class on empty label");
    ClassId best = entries.begin()->first;
    double best_p = entries.begin()->second;
    for (const auto& [cls, p] : entries) {
        // std::map iterates ascending, so strict > keeps the lowest index on ties
        if (p > best_p) {
            best = cls;
            best_p = p;
        }
    }
    return best;
}

bool SoftLabel::is_one_hot() const {
    int nonzero = 0;
    for (const auto& [cls, p] : entries) {
        if (p != 0.0) {
            if (p != 1.0) return false;
            ++nonzero;
        }
    }
    return nonzero == 1;
}

std::size_t SoftLabel::support() const {
    std::size_t n = 0;
    for (const auto& [cls, p] : entries)
        if (p != 0.0) ++n;
    return n;
}

void SoftLabel::validate() const {
    if (entries.empty()) throw std::runtime_error("empty predicate label");
    for (const auto& [cls, p] : entries) {
        if (cls < 0) throw std::runtime_error("negative class index in label");
        if (!(p >= 0.0 && p <= 1.0))
            throw std::runtime_error("label probability outside [0,1]");
    }
    if (std::abs(sum() - 1.0) > 1e-9)
        throw std::runtime_error("label probabilities do not sum to 1");
}

Group LabelSpace::group_of(ClassId predicate) const {
    auto it = groups.find(predicate);
    if (it == groups.end())
        throw std::out_of_range("predicate has no frequency group: " + std::to_string(predicate));
    return it->second;
}

const std::string& LabelSpace::predicate_name(ClassId p) const {
    if (p < 0 || p >= num_predicates())
        throw std::out_of_range("predicate index out of range: " + std::to_string(p));
    return predicate_classes[static_cast<std::size_t>(p)];
}

void LabelSpace::validate() const {
    if (object_classes.empty()) throw std::runtime_error("label space has no object classes");
    if (predicate_classes.size() < 2)
        throw std::runtime_error("label space needs background plus at least one predicate");
    for (const auto& [p, g] : groups) {
        (void)g;
        if (p <= 0 || p >= num_predicates())
            throw std::runtime_error("grouped predicate outside label space");
    }
    // groups are all-or-nothing: either unspecified or covering every
    // non-background predicate
    if (!groups.empty())
        for (ClassId p = 1; p < num_predicates(); ++p)
            if (!groups.count(p))
                throw std::runtime_error("group map misses predicate " + std::to_string(p));
    for (const auto& t : valid_triples) {
        if (t.subject < 0 || t.subject >= num_objects() || t.object < 0 ||
            t.object >= num_objects() || t.predicate <= 0 || t.predicate >= num_predicates())
            throw std::runtime_error("valid triple outside label space");
    }
}

GroupSizes group_sizes(int n) {
    if (n <= 0) throw std::invalid_argument("group_sizes needs a positive class count");
    GroupSizes s;
    s.head = static_cast<int>(std::lround(n * 16.0 / 50.0));
    s.body = static_cast<int>(std::lround(n * 17.0 / 50.0));
    s.tail = n - s.head - s.body;
    if (s.tail < 0) {
        s.body += s.tail;
        s.tail = 0;
    }
    return s;
}

std::map<ClassId, Group> group_predicates(const std::map<ClassId, std::int64_t>& counts) {
    if (counts.empty()) throw std::invalid_argument("group_predicates on empty counts");
    std::vector<std::pair<ClassId, std::int64_t>> order(counts.begin(), counts.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const GroupSizes sizes = group_sizes(static_cast<int>(order.size()));
    std::map<ClassId, Group> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        Group g = Group::tail;
        if (i < static_cast<std::size_t>(sizes.head))
            g = Group::head;
        else if (i < static_cast<std::size_t>(sizes.head + sizes.body))
            g = Group::body;
        out[order[i].first] = g;
    }
    return out;
}

}  // namespace tforge
