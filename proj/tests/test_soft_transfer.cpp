#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "tforge/rng.hpp"
#include "tforge/soft_transfer.hpp"

using namespace tforge;

namespace {

Entity ent(ClassId cls, double x) {
    return Entity{cls, BBox{x, 0.0, x + 1.0, 1.0}};
}

Dataset fixture_dataset(int n_triplets, int n_pred) {
    Dataset ds;
    ds.label_space.object_classes = {"a", "b"};
    ds.label_space.predicate_classes.push_back("__background__");
    for (ClassId p = 1; p < n_pred; ++p)
        ds.label_space.predicate_classes.push_back("pred_" + std::to_string(p));
    for (TripletId id = 1; id <= n_triplets; ++id) {
        TripletRecord r;
        r.triplet_id = id;
        r.image_id = 0;
        r.subject = ent(0, static_cast<double>(id));
        r.object = ent(1, static_cast<double>(id) + 0.5);
        r.predicate_label = SoftLabel::one_hot(1);
        ds.images[0].push_back(std::move(r));
    }
    ds.validate();
    return ds;
}

std::vector<double> random_simplex(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    double s = 0.0;
    for (double& x : v) {
        x = -std::log(1.0 - rng.uniform());
        s += x;
    }
    for (double& x : v) x /= s;
    return v;
}

// independent re-derivation built on a full sort of (score, id) tuples
std::map<TripletId, SoftLabel> oracle_soft(const PredictionDump& dump,
                                           const std::vector<TransferDecision>& decisions,
                                           double k_s, QMode mode) {
    std::map<TripletId, SoftLabel> out;
    if (mode == QMode::naive) {
        for (const auto& d : decisions) {
            SoftLabel l;
            l.entries[d.target_class] = 0.5;
            l.entries[d.source_class] = 0.5;
            out[d.triplet_id] = std::move(l);
        }
        return out;
    }
    std::vector<std::tuple<double, TripletId, const TransferDecision*>> rows;
    for (const auto& d : decisions) {
        const auto& v = dump.per_triplet.at(d.triplet_id);
        rows.push_back({v[static_cast<std::size_t>(d.target_class)] -
                            v[static_cast<std::size_t>(d.source_class)],
                        d.triplet_id, &d});
    }
    std::sort(rows.begin(), rows.end());
    const std::size_t selected =
        static_cast<std::size_t>(std::floor(k_s / 100.0 * static_cast<double>(rows.size())));
    double lo = 0.0, hi = 0.0;
    if (selected > 0) {
        lo = std::get<0>(rows[0]);
        hi = std::get<0>(rows[selected - 1]);
        for (std::size_t i = 0; i < selected; ++i) {
            lo = std::min(lo, std::get<0>(rows[i]));
            hi = std::max(hi, std::get<0>(rows[i]));
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const TransferDecision& d = *std::get<2>(rows[i]);
        if (i < selected) {
            double qp = hi == lo ? 0.0 : (std::get<0>(rows[i]) - lo) / (hi - lo);
            const double q = mode == QMode::one_minus_minmax ? 1.0 - qp : qp;
            SoftLabel l;
            l.entries[d.target_class] = 1.0 / (1.0 + q);
            l.entries[d.source_class] = 1.0 - 1.0 / (1.0 + q);
            out[d.triplet_id] = std::move(l);
        } else {
            out[d.triplet_id] = SoftLabel::one_hot(d.target_class);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("q mode names round trip") {
    for (QMode m : {QMode::one_minus_minmax, QMode::minmax, QMode::naive})
        CHECK(parse_q_mode(q_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_q_mode("bogus"), std::invalid_argument);
}

TEST_CASE("reliability score is target minus source probability") {
    PredictionDump dump;
    dump.n_predicates = 4;
    dump.per_triplet[7] = {0.1, 0.2, 0.6, 0.1};
    CHECK(reliability_score(dump, {7, 1, 2, 0.0}) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(reliability_score(dump, {7, 2, 1, 0.0}) == doctest::Approx(-0.4).epsilon(1e-12));
    CHECK_THROWS_AS(reliability_score(dump, {8, 1, 2, 0.0}), std::runtime_error);
    CHECK_THROWS_AS(reliability_score(dump, {7, 1, 9, 0.0}), std::runtime_error);
}

TEST_CASE("minmax scaling") {
    auto scaled = minmax_scale({2.0, 6.0, 4.0});
    CHECK(scaled[0] == doctest::Approx(0.0));
    CHECK(scaled[1] == doctest::Approx(1.0));
    CHECK(scaled[2] == doctest::Approx(0.5));
    // degenerate inputs scale to all zero
    CHECK(minmax_scale({3.0, 3.0, 3.0}) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(minmax_scale({42.0}) == std::vector<double>{0.0});
    CHECK_THROWS_AS(minmax_scale({}), std::invalid_argument);
}

TEST_CASE("soft label mass splits exactly") {
    SoftLabel half = soft_label(1.0, 1, 3);
    CHECK(half.prob(3) == 0.5);
    CHECK(half.prob(1) == 0.5);
    SoftLabel hard = soft_label(0.0, 1, 3);
    CHECK(hard.prob(3) == 1.0);
    CHECK(hard.prob(1) == 0.0);
    CHECK(hard.is_one_hot());
    SoftLabel mid = soft_label(0.5, 2, 4);
    CHECK(mid.prob(4) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(mid.sum() == 1.0);  // complement arithmetic, not approximate
    CHECK(mid.support() == 2);
    mid.validate();
    CHECK_THROWS_AS(soft_label(-0.1, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(soft_label(1.5, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(soft_label(0.5, 2, 2), std::invalid_argument);
}

TEST_CASE("rank_decisions sorts ascending with id ties") {
    PredictionDump dump;
    dump.n_predicates = 4;
    dump.per_triplet[1] = {0.1, 0.2, 0.6, 0.1};    // r(tar 2) = 0.4
    dump.per_triplet[2] = {0.2, 0.4, 0.3, 0.1};    // r = -0.1
    dump.per_triplet[3] = {0.1, 0.3, 0.5, 0.1};    // r = 0.2
    dump.per_triplet[4] = {0.3, 0.3, 0.1, 0.3};    // r(tar 3) = 0.0
    dump.per_triplet[5] = {0.25, 0.25, 0.25, 0.25};  // r = 0.0, tie with 4
    std::vector<TransferDecision> decisions{
        {1, 1, 2, 0.6}, {2, 1, 2, 0.3}, {3, 1, 2, 0.5}, {4, 1, 3, 0.3}, {5, 1, 2, 0.25}};

    ReliabilityRanking ranking = rank_decisions(dump, decisions, 60.0);
    REQUIRE(ranking.entries.size() == 5);
    CHECK(ranking.entries[0].triplet_id == 2);
    CHECK(ranking.entries[1].triplet_id == 4);
    CHECK(ranking.entries[2].triplet_id == 5);
    CHECK(ranking.entries[3].triplet_id == 3);
    CHECK(ranking.entries[4].triplet_id == 1);
    CHECK(ranking.selected_count == 3);

    CHECK(rank_decisions(dump, decisions, 0.0).selected_count == 0);
    CHECK(rank_decisions(dump, decisions, 100.0).selected_count == 5);
    CHECK_THROWS_AS(rank_decisions(dump, decisions, -5.0), std::invalid_argument);
    CHECK_THROWS_AS(rank_decisions(dump, decisions, 100.1), std::invalid_argument);
}

TEST_CASE("apply_soft_transfer hand fixture") {
    Dataset ds = fixture_dataset(6, 4);
    PredictionDump dump;
    dump.n_predicates = 4;
    dump.per_triplet[1] = {0.1, 0.2, 0.6, 0.1};
    dump.per_triplet[2] = {0.2, 0.4, 0.3, 0.1};
    dump.per_triplet[3] = {0.1, 0.3, 0.5, 0.1};
    dump.per_triplet[4] = {0.3, 0.3, 0.1, 0.3};
    dump.per_triplet[5] = {0.25, 0.25, 0.25, 0.25};
    std::vector<TransferDecision> decisions{
        {1, 1, 2, 0.6}, {2, 1, 2, 0.3}, {3, 1, 2, 0.5}, {4, 1, 3, 0.3}, {5, 1, 2, 0.25}};

    // ascending reliability: 2(-0.1), 4(0.0), 5(0.0), 3(0.2), 1(0.4);
    // k_s 60 selects the first three, minmax over {-0.1, 0, 0}
    SUBCASE("default mapping keeps source mass on the least reliable") {
        Dataset out = apply_soft_transfer(ds, dump, decisions, 60.0, QMode::one_minus_minmax);
        CHECK(out.find_triplet(2)->predicate_label.prob(2) == doctest::Approx(0.5));
        CHECK(out.find_triplet(2)->predicate_label.prob(1) == doctest::Approx(0.5));
        CHECK(out.find_triplet(4)->predicate_label.prob(3) == doctest::Approx(1.0));
        CHECK(out.find_triplet(5)->predicate_label.prob(2) == doctest::Approx(1.0));
        CHECK(out.find_triplet(3)->predicate_label == SoftLabel::one_hot(2));
        CHECK(out.find_triplet(1)->predicate_label == SoftLabel::one_hot(2));
        // undecided triplet untouched
        CHECK(out.find_triplet(6)->predicate_label == SoftLabel::one_hot(1));
        CHECK(out.label_space.valid_triples.count({0, 2, 1}) == 1);
        CHECK(out.label_space.valid_triples.count({0, 3, 1}) == 1);
    }
    SUBCASE("ablation mapping flips the direction") {
        Dataset out = apply_soft_transfer(ds, dump, decisions, 60.0, QMode::minmax);
        CHECK(out.find_triplet(2)->predicate_label.prob(2) == doctest::Approx(1.0));
        CHECK(out.find_triplet(4)->predicate_label.prob(3) == doctest::Approx(0.5));
        CHECK(out.find_triplet(5)->predicate_label.prob(2) == doctest::Approx(0.5));
    }
    SUBCASE("naive assigns exactly half-half everywhere") {
        Dataset out = apply_soft_transfer(ds, dump, decisions, 60.0, QMode::naive);
        for (TripletId id = 1; id <= 5; ++id) {
            const SoftLabel& l = out.find_triplet(id)->predicate_label;
            REQUIRE(l.entries.size() == 2);
            for (const auto& [cls, p] : l.entries) CHECK(p == 0.5);
        }
    }
    SUBCASE("k_s zero hard-transfers everything") {
        Dataset out = apply_soft_transfer(ds, dump, decisions, 0.0, QMode::one_minus_minmax);
        for (const auto& d : decisions)
            CHECK(out.find_triplet(d.triplet_id)->predicate_label ==
                  SoftLabel::one_hot(d.target_class));
    }
    SUBCASE("single selected decision softens to half-half by the degenerate convention") {
        std::vector<TransferDecision> one{{1, 1, 2, 0.6}};
        Dataset out = apply_soft_transfer(ds, dump, one, 100.0, QMode::one_minus_minmax);
        CHECK(out.find_triplet(1)->predicate_label.prob(2) == doctest::Approx(0.5));
        Dataset out2 = apply_soft_transfer(ds, dump, one, 100.0, QMode::minmax);
        CHECK(out2.find_triplet(1)->predicate_label.prob(2) == doctest::Approx(1.0));
    }
    SUBCASE("duplicate and dangling decisions are errors") {
        std::vector<TransferDecision> dup{{1, 1, 2, 0.6}, {1, 1, 3, 0.1}};
        CHECK_THROWS_AS(apply_soft_transfer(ds, dump, dup, 50.0, QMode::naive),
                        std::runtime_error);
        std::vector<TransferDecision> dangling{{99, 1, 2, 0.6}};
        CHECK_THROWS_AS(apply_soft_transfer(ds, dump, dangling, 50.0, QMode::naive),
                        std::runtime_error);
    }
}

TEST_CASE("apply_soft_transfer matches the full-sort oracle on random fixtures") {
    Rng rng(987654321);
    for (int trial = 0; trial < 30; ++trial) {
        const int n_pred = 4 + static_cast<int>(rng.below(3));
        const int n_triplets = 3 + static_cast<int>(rng.below(40));
        Dataset ds = fixture_dataset(n_triplets, n_pred);

        PredictionDump dump;
        dump.n_predicates = n_pred;
        std::vector<TransferDecision> decisions;
        for (TripletId id = 1; id <= n_triplets; ++id) {
            dump.per_triplet[id] = random_simplex(rng, n_pred);
            if (rng.uniform() < 0.7) {
                ClassId tar = 1 + static_cast<ClassId>(
                                      rng.below(static_cast<std::uint64_t>(n_pred - 1)));
                if (tar == 1) tar = n_pred - 1;
                decisions.push_back({id, 1, tar, 0.0});
            }
        }
        if (decisions.empty()) continue;

        for (QMode mode : {QMode::one_minus_minmax, QMode::minmax, QMode::naive}) {
            const double k_s = trial % 2 == 0 ? 100.0 * rng.uniform()
                                              : std::vector<double>{0.0, 50.0, 100.0}[trial % 3];
            Dataset out = apply_soft_transfer(ds, dump, decisions, k_s, mode);
            auto want = oracle_soft(dump, decisions, k_s, mode);
            for (const auto& [id, label] : want) {
                const SoftLabel& got = out.find_triplet(id)->predicate_label;
                REQUIRE(got.entries.size() == label.entries.size());
                for (const auto& [cls, p] : label.entries)
                    CHECK(got.prob(cls) == doctest::Approx(p).epsilon(1e-12));
                // invariants: exact unit mass, support <= 2, target never below half
                CHECK(std::abs(got.sum() - 1.0) <= 1e-9);
                CHECK(got.support() <= 2);
            }
        }
    }
}
