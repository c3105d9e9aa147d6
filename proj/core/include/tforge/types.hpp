#pragma once
// Shared domain types: label space, boxes, triplet records, soft predicate
// labels, and predicate grouping. All types are immutable value types once
// constructed and safe to share across workers.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace tforge {

using ClassId = int;
using TripletId = std::int64_t;
using ImageId = std::int64_t;

// Predicate index 0 is reserved for no-relation/background. It is excluded
// from head/body/tail groups and from recall denominators.
inline constexpr ClassId kBackgroundPredicate = 0;

enum class Group { head, body, tail };

const char* group_name(Group g);

struct BBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    bool valid() const { return x1 < x2 && y1 < y2; }
    double area() const { return (x2 - x1) * (y2 - y1); }
    bool operator==(const BBox&) const = default;
    auto operator<=>(const BBox&) const = default;
};

// Intersection over union in continuous coordinates. Symmetric, in [0, 1].
double iou(const BBox& a, const BBox& b);

// Sparse probability label over predicate classes. Raw annotations are
// degenerate one-hot; soft transfer emits two-entry labels over
// {source, target}. Entries with probability zero may be kept to record
// the transfer provenance.
struct SoftLabel {
    std::map<ClassId, double> entries;

    static SoftLabel one_hot(ClassId cls);

    double prob(ClassId cls) const;
    double sum() const;
    // Highest-probability class, ties broken by ascending class index.
    ClassId hard_class() const;
    bool is_one_hot() const;
    std::size_t support() const;  // number of nonzero entries
    void validate() const;        // sum == 1 within 1e-9, probs in [0,1]

    bool operator==(const SoftLabel&) const = default;
};

struct Triple {
    ClassId subject = 0;
    ClassId predicate = 0;
    ClassId object = 0;
    auto operator<=>(const Triple&) const = default;
};

struct Entity {
    ClassId cls = 0;
    BBox box;
    bool operator==(const Entity&) const = default;
};

struct TripletRecord {
    TripletId triplet_id = 0;
    ImageId image_id = 0;
    Entity subject;
    Entity object;
    SoftLabel predicate_label;

    bool operator==(const TripletRecord&) const = default;
};

struct LabelSpace {
    std::vector<std::string> object_classes;
    std::vector<std::string> predicate_classes;  // index 0 = no-relation
    std::map<ClassId, Group> groups;             // non-background predicates
    std::set<Triple> valid_triples;

    int num_objects() const { return static_cast<int>(object_classes.size()); }
    int num_predicates() const { return static_cast<int>(predicate_classes.size()); }
    Group group_of(ClassId predicate) const;
    const std::string& predicate_name(ClassId p) const;
    void validate() const;

    bool operator==(const LabelSpace&) const = default;
};

// Head/body/tail sizes for a space of n non-background predicates: the
// 16/17/17 proportions of the 50-class split, rounded to nearest with
// head+body+tail = n.
struct GroupSizes {
    int head = 0;
    int body = 0;
    int tail = 0;
};
GroupSizes group_sizes(int n);

// Assign groups by descending training count (ties by ascending class
// index). `counts` must cover every non-background predicate.
std::map<ClassId, Group> group_predicates(const std::map<ClassId, std::int64_t>& counts);

}  // namespace tforge
