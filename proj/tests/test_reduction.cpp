#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "flexfleet/reduction.hpp"
#include "oracles.hpp"

using namespace flexfleet;

namespace {

// Brute-force argmin of the average score over all cardinality-k subsets.
std::pair<uint64_t, double> brute_argmin(const Fleet& fleet, std::span<const double> inflexible,
                                         int k) {
    const int T = fleet.horizon().num_steps;
    uint64_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (uint64_t mask = 1; mask <= fleet.horizon().full_mask(); ++mask) {
        if (std::popcount(mask) != k) continue;
        const double s = oracle::average_score_naive(fleet, inflexible, TimeSet(mask));
        if (s < best_score - 1e-12 * std::max(1.0, std::abs(s))) {
            best_score = s;
            best = mask;
        }
    }
    (void)T;
    return {best, best_score};
}

}  // namespace

TEST_CASE("exhaustive constraint counts and guard") {
    Fleet fleet = oracle::random_fleet(3, 4, 5);
    ConstraintSet cs = exhaustive_constraints(fleet);
    CHECK(cs.constraints.size() == 7);
    CHECK(cs.method == SelectionMethod::exhaustive);
    CHECK_FALSE(cs.per_slot_caps_kw.has_value());
    std::set<uint64_t> supports;
    for (const auto& c : cs.constraints) {
        supports.insert(c.support.bits());
        CHECK(c.rhs_kwh == Catch::Approx(oracle::capacity_naive(fleet, c.support)).margin(1e-12));
    }
    CHECK(supports.size() == 7);

    Fleet f1(TimeHorizon{1, 1.0}, {Device{1.0, 0.5, TimeSet::from_slots({1}, 1)}});
    ConstraintSet one = exhaustive_constraints(f1);
    REQUIRE(one.constraints.size() == 1);
    CHECK(one.constraints[0].support == TimeSet::from_slots({1}, 1));
    CHECK(one.constraints[0].rhs_kwh == Catch::Approx(0.5));

    Fleet f24 = oracle::random_fleet(24, 3, 9);
    CHECK_THROWS_AS(exhaustive_constraints(f24), guard_error);
    SelectionOptions wide;
    wide.exhaustive_guard = 10;
    CHECK_THROWS_AS(exhaustive_constraints(oracle::random_fleet(12, 3, 9), wide), guard_error);
}

TEST_CASE("full availability prefix supports") {
    TimeHorizon h{3, 1.0};
    Fleet fleet(h, {Device{1.0, 1.0, TimeSet::full(3)}, Device{1.0, 1.0, TimeSet::full(3)}});
    const std::vector<double> inflexible{3.0, 1.0, 2.0};
    ConstraintSet cs = full_availability_constraints(fleet, inflexible);
    REQUIRE(cs.constraints.size() == 3);
    CHECK(cs.constraints[0].support == TimeSet::from_slots({2}, 3));
    CHECK(cs.constraints[1].support == TimeSet::from_slots({2, 3}, 3));
    CHECK(cs.constraints[2].support == TimeSet::full(3));
    CHECK(cs.constraints[0].rhs_kwh == Catch::Approx(2.0));
    CHECK(cs.constraints[1].rhs_kwh == Catch::Approx(2.0));
    CHECK(cs.constraints[2].rhs_kwh == Catch::Approx(2.0));
    REQUIRE(cs.per_slot_caps_kw.has_value());
    CHECK((*cs.per_slot_caps_kw)[0] == Catch::Approx(2.0));

    // Strictly increasing series: supports are identity prefixes.
    const std::vector<double> rising{1.0, 2.0, 3.0};
    ConstraintSet pre = full_availability_constraints(fleet, rising);
    CHECK(pre.constraints[0].support == TimeSet::from_slots({1}, 3));
    CHECK(pre.constraints[1].support == TimeSet::from_slots({1, 2}, 3));

    Fleet partial(h, {Device{1.0, 1.0, TimeSet::from_slots({1, 2}, 3)}});
    CHECK_THROWS_AS(full_availability_constraints(partial, inflexible),
                    partial_availability_error);
}

TEST_CASE("combinatorial selection two-slot example") {
    Fleet fleet(TimeHorizon{2, 1.0}, {Device{1.0, 1.0, TimeSet::full(2)}});
    const std::vector<double> inflexible{0.0, 10.0};
    ConstraintSet cs = combinatorial_selection(fleet, inflexible);
    REQUIRE(cs.constraints.size() == 2);
    CHECK(cs.constraints[0].support == TimeSet::from_slots({1}, 2));
    CHECK(cs.constraints[1].support == TimeSet::full(2));
}

TEST_CASE("combinatorial selection matches brute force per cardinality") {
    for (uint64_t seed : {1u, 2u, 3u, 4u}) {
        Fleet fleet = oracle::random_fleet(8, 6, seed);
        oracle::TestRng rng(seed * 31 + 1);
        std::vector<double> inflexible(8);
        for (auto& v : inflexible) v = rng.uniform(0.0, 4.0);
        ConstraintSet cs = combinatorial_selection(fleet, inflexible);
        REQUIRE(cs.constraints.size() == 8);
        for (int k = 1; k <= 8; ++k) {
            const auto [bm, bs] = brute_argmin(fleet, inflexible, k);
            const auto& c = cs.constraints[static_cast<size_t>(k - 1)];
            CHECK(c.support.count() == k);
            // No cardinality-k subset may beat the emitted one.
            const double emitted = oracle::average_score_naive(fleet, inflexible, c.support);
            CHECK(emitted <= bs + 1e-9 * std::max(1.0, std::abs(bs)));
            CHECK(c.support.bits() == bm);
        }
    }
}

TEST_CASE("combinatorial selection on full availability picks smallest slots") {
    Fleet fleet(TimeHorizon{6, 1.0}, {Device{1.5, 4.0, TimeSet::full(6)},
                                      Device{0.5, 2.0, TimeSet::full(6)}});
    const std::vector<double> inflexible{5.0, 1.0, 4.0, 0.5, 2.0, 3.0};
    ConstraintSet cs = combinatorial_selection(fleet, inflexible);
    // Ascending inflexible order: slots 4, 2, 5, 6, 3, 1.
    CHECK(cs.constraints[0].support == TimeSet::from_slots({4}, 6));
    CHECK(cs.constraints[1].support == TimeSet::from_slots({2, 4}, 6));
    CHECK(cs.constraints[2].support == TimeSet::from_slots({2, 4, 5}, 6));
}

TEST_CASE("greedy selections: structure and ties") {
    // Symmetric two-slot instance: the cardinality-1 argmin ties, so only the
    // full-horizon constraint is emitted.
    Fleet sym(TimeHorizon{2, 1.0}, {Device{1.0, 1.0, TimeSet::full(2)}});
    const std::vector<double> flat{2.0, 2.0};
    ConstraintSet g1 = greedy_selection_1(sym, flat);
    REQUIRE(g1.constraints.size() == 1);
    CHECK(g1.constraints[0].support == TimeSet::full(2));

    // Greedy descent example: supports {1,2,3} > {1,2} > {1}.
    Fleet fleet(TimeHorizon{3, 1.0}, {Device{1.0, 1.0, TimeSet::full(3)}});
    const std::vector<double> inflexible{0.0, 5.0, 9.0};
    ConstraintSet g2 = greedy_selection_2(fleet, inflexible);
    REQUIRE(g2.constraints.size() == 3);
    CHECK(g2.constraints[0].support == TimeSet::full(3));
    CHECK(g2.constraints[1].support == TimeSet::from_slots({1, 2}, 3));
    CHECK(g2.constraints[2].support == TimeSet::from_slots({1}, 3));
}

TEST_CASE("greedy chains are nested with exact right-hand sides") {
    for (uint64_t seed : {10u, 20u, 30u, 40u, 50u}) {
        Fleet fleet = oracle::random_fleet(10, 8, seed);
        oracle::TestRng rng(seed + 123);
        std::vector<double> inflexible(10);
        for (auto& v : inflexible) v = rng.uniform(0.0, 6.0);

        ConstraintSet g1 = greedy_selection_1(fleet, inflexible);
        CHECK(g1.constraints.size() <= 10);
        for (size_t i = 1; i < g1.constraints.size(); ++i) {
            CHECK(g1.constraints[i].support.is_subset_of(g1.constraints[i - 1].support));
            CHECK(g1.constraints[i].support.count() < g1.constraints[i - 1].support.count());
            // Scores strictly improve along the emitted chain.
            CHECK(oracle::average_score_naive(fleet, inflexible, g1.constraints[i].support) <
                  oracle::average_score_naive(fleet, inflexible, g1.constraints[i - 1].support));
        }

        ConstraintSet g2 = greedy_selection_2(fleet, inflexible);
        REQUIRE(g2.constraints.size() == 10);
        for (size_t i = 1; i < g2.constraints.size(); ++i) {
            CHECK(g2.constraints[i].support.is_subset_of(g2.constraints[i - 1].support));
            CHECK(g2.constraints[i].support.count() ==
                  g2.constraints[i - 1].support.count() - 1);
        }
        for (const auto& cs : {g1, g2})
            for (const auto& c : cs.constraints)
                CHECK(c.rhs_kwh ==
                      Catch::Approx(oracle::capacity_naive(fleet, c.support)).margin(1e-12));
    }
}

TEST_CASE("greedy one matches combinatorial when minimizers are unique and nested") {
    int compared = 0;
    for (uint64_t seed = 1; seed <= 12; ++seed) {
        Fleet fleet = oracle::random_fleet(8, 6, seed * 7);
        oracle::TestRng rng(seed);
        std::vector<double> inflexible(8);
        for (auto& v : inflexible) v = rng.uniform(0.0, 5.0);
        ConstraintSet comb = combinatorial_selection(fleet, inflexible);
        ConstraintSet g1 = greedy_selection_1(fleet, inflexible);
        // Wherever greedy emitted cardinality k and the exact minimizers
        // happen to be nested, the two picks coincide.
        bool nested = true;
        for (size_t i = 1; i < comb.constraints.size(); ++i)
            nested &= comb.constraints[i - 1].support.is_subset_of(comb.constraints[i].support);
        if (!nested) continue;
        ++compared;
        for (const auto& c : g1.constraints) {
            const auto& exact = comb.constraints[static_cast<size_t>(c.support.count() - 1)];
            CHECK(c.support == exact.support);
        }
    }
    CHECK(compared > 0);
}

TEST_CASE("sublevel supports group ties and end with the horizon") {
    const std::vector<double> inflexible{3.0, 1.0, 1.0, 0.0};
    const std::vector<double> d{0.0, 0.0, 0.0, 1.0};
    // Totals: 3, 1, 1, 1 -> levels {2,3,4} then {1,2,3,4}.
    auto sets = sublevel_supports(inflexible, d);
    REQUIRE(sets.size() == 2);
    CHECK(sets[0] == TimeSet::from_slots({2, 3, 4}, 4));
    CHECK(sets[1] == TimeSet::full(4));
}
