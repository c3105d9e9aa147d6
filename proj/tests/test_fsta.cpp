#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "tforge/fsta.hpp"

using namespace tforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "tforge_test_fsta";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

LabelSpace grouped_space() {
    LabelSpace space;
    space.object_classes = {"o0", "o1", "o2", "o3", "o4", "o5"};
    space.predicate_classes = {"__background__", "p1", "p2", "p3"};
    space.groups = {{1, Group::head}, {2, Group::body}, {3, Group::tail}};
    space.valid_triples = {{4, 3, 2}, {1, 1, 0}, {4, 2, 1}};
    return space;
}

TripletRecord gt_record(TripletId id, ImageId img, ClassId s, ClassId p, ClassId o,
                        const BBox& sb, const BBox& ob) {
    TripletRecord r;
    r.triplet_id = id;
    r.image_id = img;
    r.subject = {s, sb};
    r.object = {o, ob};
    r.predicate_label = SoftLabel::one_hot(p);
    return r;
}

ArtificialTriplet art(ArtificialKind kind, ClassId pred) {
    ArtificialTriplet t;
    t.kind = kind;
    t.predicate = pred;
    return t;
}

// full candidate pool re-derived with GT pre-sorted by id, no sampling
std::vector<CandidateTriplet> oracle_pool(const PlanImage& im, double s_iou) {
    std::vector<const TripletRecord*> gts;
    for (const auto& g : im.ground_truth) gts.push_back(&g);
    std::sort(gts.begin(), gts.end(),
              [](const auto* a, const auto* b) { return a->triplet_id < b->triplet_id; });
    std::vector<CandidateTriplet> out;
    for (std::size_t i = 0; i < im.proposals.size(); ++i)
        for (std::size_t j = 0; j < im.proposals.size(); ++j) {
            if (i == j) continue;
            const TripletRecord* best = nullptr;
            double best_s = s_iou;
            for (const auto* g : gts) {
                const double s = std::min(iou(im.proposals[i].box, g->subject.box),
                                          iou(im.proposals[j].box, g->object.box));
                if (s > best_s) {
                    best = g;
                    best_s = s;
                }
            }
            if (best)
                out.push_back({im.image_id, best->triplet_id, im.proposals[i].cls,
                               im.proposals[j].cls, best->predicate_label.hard_class(),
                               im.proposals[i].box, im.proposals[j].box, best_s});
        }
    return out;
}

bool same_candidate(const CandidateTriplet& a, const CandidateTriplet& b) {
    return a.image_id == b.image_id && a.base_triplet_id == b.base_triplet_id &&
           a.subject_cls == b.subject_cls && a.object_cls == b.object_cls &&
           a.predicate == b.predicate && a.subject_box == b.subject_box &&
           a.object_box == b.object_box && a.match_score == b.match_score;
}

}  // namespace

TEST_CASE("config validation") {
    FstaConfig cfg;
    cfg.validate();
    cfg.n_t = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.s_iou = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.u_h = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("sample_pairs matches proposals to ground truth") {
    const BBox sa{0, 0, 1, 1};
    const BBox oa{2, 2, 3, 3};
    PlanImage im;
    im.image_id = 9;
    im.proposals = {{1, sa}, {2, oa}, {3, BBox{10, 10, 11, 11}}};
    im.ground_truth = {gt_record(4, 9, 1, 2, 2, sa, oa)};

    FstaConfig cfg;
    cfg.n_t = 8;
    Rng rng(1);
    auto got = sample_pairs(im, cfg, rng);
    REQUIRE(got.size() == 1);
    CHECK(got[0].base_triplet_id == 4);
    CHECK(got[0].subject_cls == 1);
    CHECK(got[0].object_cls == 2);
    CHECK(got[0].predicate == 2);
    CHECK(got[0].match_score == 1.0);
}

TEST_CASE("overlap threshold is strict") {
    // boxes chosen so IoU is exactly 0.25
    const BBox gt_box{0, 0, 1, 1};
    const BBox partial{0, 0, 1, 0.25};
    CHECK(iou(gt_box, partial) == 0.25);

    PlanImage im;
    im.image_id = 0;
    im.proposals = {{0, partial}, {1, gt_box}};
    im.ground_truth = {gt_record(0, 0, 0, 1, 1, gt_box, gt_box)};

    FstaConfig cfg;
    cfg.n_t = 8;
    Rng rng(2);
    cfg.s_iou = 0.25;  // pair (0,1) scores exactly 0.25: excluded
    auto none = sample_pairs(im, cfg, rng);
    for (const auto& c : none) CHECK(c.match_score > 0.25);
    cfg.s_iou = 0.2499;
    auto some = sample_pairs(im, cfg, rng);
    bool found = false;
    for (const auto& c : some)
        if (c.subject_box == partial && c.object_box == gt_box) found = true;
    CHECK(found);
}

TEST_CASE("equal match scores pick the lowest triplet id") {
    const BBox sa{0, 0, 1, 1};
    const BBox oa{2, 2, 3, 3};
    PlanImage im;
    im.image_id = 0;
    im.proposals = {{1, sa}, {2, oa}};
    // same geometry listed high id first
    im.ground_truth = {gt_record(5, 0, 1, 2, 2, sa, oa), gt_record(3, 0, 1, 1, 2, sa, oa)};

    FstaConfig cfg;
    cfg.n_t = 8;
    Rng rng(3);
    auto got = sample_pairs(im, cfg, rng);
    REQUIRE(got.size() == 1);
    CHECK(got[0].base_triplet_id == 3);
    CHECK(got[0].predicate == 1);
}

TEST_CASE("pool larger than n_t draws without replacement") {
    // 3 proposals all equal to the GT boxes give a 6-pair pool of which 2
    // pairs score 1.0 on both ends; widen with 4 identical proposals
    const BBox b{0, 0, 1, 1};
    PlanImage im;
    im.image_id = 0;
    for (int i = 0; i < 4; ++i) im.proposals.push_back({i, b});
    im.ground_truth = {gt_record(0, 0, 0, 1, 1, b, b)};

    FstaConfig cfg;
    cfg.n_t = 3;
    Rng rng(4);
    auto got = sample_pairs(im, cfg, rng);
    CHECK(got.size() == 3);
    // every drawn pair comes from the full 12-pair pool
    auto pool = oracle_pool(im, cfg.s_iou);
    CHECK(pool.size() == 12);
    for (const auto& c : got) {
        bool in_pool = false;
        for (const auto& p : pool)
            if (same_candidate(c, p)) in_pool = true;
        CHECK(in_pool);
    }
    // distinct draws: no two returned candidates share both proposal slots
    std::set<std::pair<int, int>> seen;
    for (const auto& c : got) CHECK(seen.insert({c.subject_cls, c.object_cls}).second);

    Rng r1(4), r2(4);
    auto a = sample_pairs(im, cfg, r1);
    auto b2 = sample_pairs(im, cfg, r2);
    REQUIRE(a.size() == b2.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_candidate(a[i], b2[i]));
}

TEST_CASE("full pools match the enumeration oracle on random images") {
    Rng rng(606);
    for (int trial = 0; trial < 25; ++trial) {
        PlanImage im;
        im.image_id = trial;
        const int n_props = 2 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n_props; ++i) {
            BBox b;
            b.x1 = rng.uniform();
            b.y1 = rng.uniform();
            b.x2 = b.x1 + 0.2 + 0.5 * rng.uniform();
            b.y2 = b.y1 + 0.2 + 0.5 * rng.uniform();
            im.proposals.push_back({static_cast<ClassId>(i), b});
        }
        const int n_gt = 1 + static_cast<int>(rng.below(4));
        for (int g = 0; g < n_gt; ++g) {
            // ground truth reuses proposal geometry with jitter so overlaps spread
            const Proposal& ps = im.proposals[rng.below(im.proposals.size())];
            const Proposal& po = im.proposals[rng.below(im.proposals.size())];
            BBox sb = ps.box, ob = po.box;
            sb.x2 += 0.05 * rng.uniform();
            ob.y2 += 0.05 * rng.uniform();
            im.ground_truth.push_back(gt_record(10 - g, im.image_id, ps.cls,
                                                1 + static_cast<ClassId>(rng.below(3)), po.cls,
                                                sb, ob));
        }
        FstaConfig cfg;
        cfg.n_t = 1000;  // never subsample: the pool comes back whole
        cfg.s_iou = 0.5;
        Rng draw_rng(trial);
        auto got = sample_pairs(im, cfg, draw_rng);
        auto want = oracle_pool(im, cfg.s_iou);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(same_candidate(got[i], want[i]));
    }
}

TEST_CASE("spo' enumeration keeps only sampler-covered subjects") {
    std::vector<CandidateTriplet> cands{
        {0, 10, 1, 2, 3, {}, {}, 0.9},
        {0, 11, 4, 0, 1, {}, {}, 0.8},
    };
    SamplerTable sampler;
    SamplerEntry e;
    e.candidates = {2, 5};
    e.difficulty = {1.0, 1.0};
    e.probabilities = {0.5, 0.5};
    sampler.entries[{1, 3}] = e;

    auto pending = enum_spo_prime_pending(cands, sampler);
    REQUIRE(pending.size() == 1);
    CHECK(pending[0].kind == ArtificialKind::spo_prime);
    CHECK(pending[0].base_triplet_id == 10);
    CHECK(pending[0].subject_cls == 1);
    CHECK(pending[0].predicate == 3);
    CHECK(pending[0].object_cls == -1);

    Rng rng(5);
    draw_objects(pending, sampler, rng);
    CHECK((pending[0].object_cls == 2 || pending[0].object_cls == 5));

    // already-drawn and s'po entries never consume draws
    std::vector<ArtificialTriplet> mixed = pending;
    ArtificialTriplet swap;
    swap.kind = ArtificialKind::s_prime_po;
    swap.object_cls = 4;
    mixed.push_back(swap);
    Rng before(6), after(6);
    draw_objects(mixed, sampler, before);
    CHECK(before.next_u64() == after.next_u64());
    CHECK(mixed[1].object_cls == 4);
}

TEST_CASE("s'po enumeration respects validity, bases, and the tail restriction") {
    LabelSpace space = grouped_space();
    std::vector<CandidateTriplet> cands{
        {0, 10, 1, 2, 3, {}, {}, 0.9},  // tail base
        {0, 11, 4, 0, 1, {}, {}, 0.8},  // head base, donor with subject 4
        {0, 10, 5, 2, 3, {}, {}, 0.7},  // tail base sharing base id 10
        {0, 12, 5, 1, 2, {}, {}, 0.6},  // body base
    };
    FstaConfig cfg;

    cfg.tail_only_s_po = true;
    auto tail_only = enum_s_prime_po(cands, space, cfg);
    REQUIRE(tail_only.size() == 2);
    for (const auto& t : tail_only) {
        CHECK(t.kind == ArtificialKind::s_prime_po);
        CHECK(t.base_triplet_id == 10);
        CHECK(t.donor_triplet_id == 11);
        CHECK(t.subject_cls == 4);
        CHECK(t.predicate == 3);
        CHECK(t.object_cls == 2);
    }

    cfg.tail_only_s_po = false;
    auto all = enum_s_prime_po(cands, space, cfg);
    REQUIRE(all.size() == 4);
    // bases iterate in candidate order, donors likewise
    CHECK(all[0].base_triplet_id == 10);
    CHECK(all[1].base_triplet_id == 11);
    CHECK(all[1].subject_cls == 1);
    CHECK(all[1].predicate == 1);
    CHECK(all[1].donor_triplet_id == 10);
    CHECK(all[2].base_triplet_id == 10);
    CHECK(all[3].base_triplet_id == 12);
    CHECK(all[3].subject_cls == 4);
    CHECK(all[3].predicate == 2);
}

TEST_CASE("undersampling thins only the head group") {
    LabelSpace space = grouped_space();
    FstaConfig cfg;

    std::vector<ArtificialTriplet> triplets;
    for (int i = 0; i < 10; ++i) triplets.push_back(art(ArtificialKind::spo_prime, 1));
    triplets.push_back(art(ArtificialKind::spo_prime, 2));
    triplets.push_back(art(ArtificialKind::s_prime_po, 3));

    cfg.u_h = 1.0;
    Rng keep_all(7);
    CHECK(undersample(triplets, space, cfg, keep_all) == triplets);

    cfg.u_h = 0.0;
    Rng drop_heads(8);
    auto kept = undersample(triplets, space, cfg, drop_heads);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].predicate == 2);
    CHECK(kept[1].predicate == 3);

    // exactly one uniform consumed per head entry, zero for body/tail
    cfg.u_h = 0.5;
    Rng used(9), mirror(9);
    undersample(triplets, space, cfg, used);
    for (int i = 0; i < 10; ++i) mirror.uniform();
    CHECK(used.next_u64() == mirror.next_u64());
}

TEST_CASE("head retention rate approaches u_h") {
    LabelSpace space = grouped_space();
    FstaConfig cfg;
    cfg.u_h = 0.3;
    std::vector<ArtificialTriplet> heads(2000, art(ArtificialKind::spo_prime, 1));
    Rng rng(10);
    auto kept = undersample(heads, space, cfg, rng);
    CHECK(std::abs(static_cast<double>(kept.size()) / 2000.0 - 0.3) < 0.04);
}

TEST_CASE("count_groups tallies by predicate group") {
    LabelSpace space = grouped_space();
    std::vector<ArtificialTriplet> triplets{art(ArtificialKind::spo_prime, 1),
                                            art(ArtificialKind::spo_prime, 1),
                                            art(ArtificialKind::s_prime_po, 2),
                                            art(ArtificialKind::s_prime_po, 3),
                                            art(ArtificialKind::spo_prime, 3)};
    GroupCounts counts = count_groups(triplets, space);
    CHECK(counts == GroupCounts{2, 1, 2});
    CHECK(count_groups({}, space) == GroupCounts{0, 0, 0});
}

TEST_CASE("plan_step composes the documented order") {
    LabelSpace space = grouped_space();
    const BBox sa{0, 0, 1, 1};
    const BBox oa{2, 2, 3, 3};
    const BBox sb{5, 5, 6, 6};
    const BBox ob{7, 7, 8, 8};

    PlanImage im1;
    im1.image_id = 1;
    im1.proposals = {{1, sa}, {2, oa}};
    im1.ground_truth = {gt_record(10, 1, 1, 3, 2, sa, oa)};
    PlanImage im2;
    im2.image_id = 2;
    im2.proposals = {{4, sb}, {2, ob}};
    im2.ground_truth = {gt_record(11, 2, 4, 3, 2, sb, ob)};

    SamplerTable sampler;
    SamplerEntry e;
    e.candidates = {0, 2};
    e.difficulty = {0.5, 0.5};
    e.probabilities = {0.5, 0.5};
    sampler.entries[{1, 3}] = e;
    sampler.entries[{4, 3}] = e;

    FstaConfig cfg;
    cfg.n_t = 4;
    cfg.u_h = 0.5;

    Rng rng(77);
    AugmentationPlan plan = plan_step({im1, im2}, sampler, space, cfg, rng, 42);
    CHECK(plan.step_index == 42);
    CHECK(plan.counts == count_groups(plan.triplets, space));
    // spo' entries precede s'po entries and all objects are drawn
    bool seen_swap = false;
    for (const auto& t : plan.triplets) {
        if (t.kind == ArtificialKind::s_prime_po) seen_swap = true;
        else CHECK_FALSE(seen_swap);
        CHECK(t.object_cls >= 0);
    }
    // cross-image swap: image-1 base can borrow the image-2 subject
    bool cross = false;
    for (const auto& t : plan.triplets)
        if (t.kind == ArtificialKind::s_prime_po && t.base_triplet_id == 10 &&
            t.donor_triplet_id == 11)
            cross = true;
    CHECK(cross);

    // manual composition with the library's own stages replays exactly
    Rng mirror(77);
    std::vector<CandidateTriplet> cands;
    for (const auto& im : {im1, im2}) {
        auto per = sample_pairs(im, cfg, mirror);
        cands.insert(cands.end(), per.begin(), per.end());
    }
    auto spo = enum_spo_prime_pending(cands, sampler);
    auto s_po = enum_s_prime_po(cands, space, cfg);
    spo = undersample(spo, space, cfg, mirror);
    s_po = undersample(s_po, space, cfg, mirror);
    draw_objects(spo, sampler, mirror);
    std::vector<ArtificialTriplet> expect = spo;
    expect.insert(expect.end(), s_po.begin(), s_po.end());
    CHECK(plan.triplets == expect);

    Rng again(77);
    CHECK(plan_step({im1, im2}, sampler, space, cfg, again, 42) == plan);
}

TEST_CASE("l_at is the mean cross entropy over planned predicates") {
    AugmentationPlan plan;
    plan.triplets = {art(ArtificialKind::spo_prime, 1), art(ArtificialKind::s_prime_po, 2)};
    auto head = [](const ArtificialTriplet& t) -> std::vector<double> {
        if (t.predicate == 1) return {0.1, 0.5, 0.2, 0.2};
        return {0.25, 0.25, 0.25, 0.25};
    };
    const double want = (-std::log(0.5) - std::log(0.25)) / 2.0;
    CHECK(l_at(plan, head) == doctest::Approx(want).epsilon(1e-12));

    AugmentationPlan empty;
    CHECK(l_at(empty, head) == 0.0);

    AugmentationPlan bad;
    bad.triplets = {art(ArtificialKind::spo_prime, 9)};
    CHECK_THROWS_AS(l_at(bad, head), std::runtime_error);
}

TEST_CASE("plans serialize one triplet per line") {
    AugmentationPlan plan;
    ArtificialTriplet a = art(ArtificialKind::spo_prime, 3);
    a.image_id = 1;
    a.base_triplet_id = 10;
    a.subject_cls = 1;
    a.object_cls = 2;
    ArtificialTriplet b = art(ArtificialKind::s_prime_po, 3);
    b.image_id = 1;
    b.base_triplet_id = 10;
    b.subject_cls = 4;
    b.object_cls = 2;
    b.donor_triplet_id = 11;
    plan.triplets = {a, b};

    const std::string path = (temp_dir() / "plan.jsonl").string();
    save_plan(plan, path);
    std::ifstream in(path);
    std::string line;
    std::vector<nlohmann::json> lines;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].at("kind") == "spo_prime");
    CHECK(lines[0].at("o") == 2);
    CHECK(lines[0].count("donor") == 0);
    CHECK(lines[1].at("kind") == "s_prime_po");
    CHECK(lines[1].at("donor") == 11);
}
