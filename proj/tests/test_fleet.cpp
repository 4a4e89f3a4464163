#include <catch2/catch_amalgamated.hpp>

#include "flexfleet/fleet.hpp"
#include "oracles.hpp"

using namespace flexfleet;

TEST_CASE("time set basics") {
    TimeSet w = TimeSet::from_slots({1, 3, 4}, 6);
    CHECK(w.count() == 3);
    CHECK(w.contains(3));
    CHECK_FALSE(w.contains(2));
    CHECK(w.complement(6) == TimeSet::from_slots({2, 5, 6}, 6));
    CHECK(w.intersect(TimeSet::from_slots({3, 6}, 6)) == TimeSet::from_slots({3}, 6));
    CHECK(w.unite(TimeSet::from_slots({2}, 6)).count() == 4);
    CHECK(TimeSet::from_slots({1, 3}, 6).is_subset_of(w));
    CHECK_FALSE(w.is_subset_of(TimeSet::from_slots({1, 3}, 6)));
    CHECK(w.slots() == std::vector<int>{1, 3, 4});
    CHECK_THROWS_AS(TimeSet::from_slots({0}, 6), std::invalid_argument);
    CHECK_THROWS_AS(TimeSet::from_slots({7}, 6), std::invalid_argument);
    CHECK_THROWS_AS((TimeHorizon{0, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((TimeHorizon{65, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((TimeHorizon{24, 0.0}.validate()), std::invalid_argument);
}

TEST_CASE("capacity single-device formula") {
    Fleet fleet(TimeHorizon{3, 1.0},
                {Device{2.0, 3.0, TimeSet::from_slots({1, 2, 3}, 3)}});
    CHECK(fleet.capacity(TimeSet::from_slots({1, 2}, 3)) == Catch::Approx(3.0));
    CHECK(fleet.capacity(TimeSet()) == 0.0);
    CHECK(fleet.capacity(TimeSet::from_slots({1}, 3)) == Catch::Approx(2.0));
    CHECK(fleet.total_energy() == Catch::Approx(3.0));
}

TEST_CASE("capacity of generated fleet at full horizon equals total target") {
    for (uint64_t seed : {11u, 22u, 33u}) {
        Fleet fleet = oracle::random_fleet(8, 10, seed);
        const double full = fleet.capacity(TimeSet::full(8));
        CHECK(full == Catch::Approx(fleet.total_energy()).margin(1e-12));
        CHECK(full == Catch::Approx(oracle::max_total_charge(fleet)).margin(1e-12));
    }
}

TEST_CASE("max average demand examples") {
    Fleet fleet(TimeHorizon{2, 1.0}, {Device{1.0, 1.0, TimeSet::from_slots({1, 2}, 2)}});
    const std::vector<double> inflexible{5.0, 1.0};
    CHECK(max_average_demand(fleet, inflexible, TimeSet::from_slots({2}, 2)) ==
          Catch::Approx(2.0));
    CHECK_THROWS_AS(max_average_demand(fleet, inflexible, TimeSet()), std::invalid_argument);

    Fleet empty(TimeHorizon{4, 1.0}, {});
    const std::vector<double> zeros(4, 0.0);
    CHECK(max_average_demand(empty, zeros, TimeSet::full(4)) == 0.0);
}

TEST_CASE("indexed capacity matches naive evaluation on all subsets") {
    Fleet fleet = oracle::random_fleet(8, 5, 424242);
    const std::vector<double> inflexible{1.5, 0.2, 3.0, 0.0, 2.2, 4.1, 0.7, 1.9};
    for (uint64_t mask = 1; mask <= fleet.horizon().full_mask(); ++mask) {
        const TimeSet w(mask);
        REQUIRE(fleet.capacity(w) == Catch::Approx(oracle::capacity_naive(fleet, w)).margin(1e-12));
        REQUIRE(max_average_demand(fleet, inflexible, w) ==
                Catch::Approx(oracle::average_score_naive(fleet, inflexible, w)).margin(1e-12));
    }
    // Exhaustive at T=12, sampled at T=24.
    Fleet f12 = oracle::random_fleet(12, 7, 7);
    for (uint64_t mask = 1; mask <= f12.horizon().full_mask(); ++mask)
        REQUIRE(f12.capacity(TimeSet(mask)) ==
                Catch::Approx(oracle::capacity_naive(f12, TimeSet(mask))).margin(1e-12));
    Fleet f24 = oracle::random_fleet(24, 40, 99);
    oracle::TestRng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const TimeSet w(rng.bits(1, f24.horizon().full_mask()));
        REQUIRE(f24.capacity(w) == Catch::Approx(oracle::capacity_naive(f24, w)).margin(1e-10));
    }
}

TEST_CASE("capacity is monotone and submodular") {
    Fleet fleet = oracle::random_fleet(10, 12, 2024);
    oracle::TestRng rng(77);
    const uint64_t full = fleet.horizon().full_mask();
    for (int i = 0; i < 500; ++i) {
        const uint64_t a = rng.bits(0, full), b = rng.bits(0, full);
        const TimeSet wa(a), wb(b);
        const double ca = fleet.capacity(wa), cb = fleet.capacity(wb);
        if (wa.is_subset_of(wb)) CHECK(ca <= cb + 1e-12);
        const double cu = fleet.capacity(wa.unite(wb));
        const double ci = fleet.capacity(wa.intersect(wb));
        CHECK(ca + cb >= cu + ci - 1e-9);
    }
}

TEST_CASE("device validation and target clamping") {
    CHECK_THROWS_AS(Fleet(TimeHorizon{4, 1.0}, {Device{0.0, 1.0, TimeSet::full(4)}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Fleet(TimeHorizon{4, 1.0}, {Device{1.0, -1.0, TimeSet::full(4)}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Fleet(TimeHorizon{4, 1.0}, {Device{1.0, 1.0, TimeSet()}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Fleet(TimeHorizon{4, 1.0}, {Device{1.0, 1.0, TimeSet::from_slots({5}, 5)}}),
                    std::invalid_argument);

    // Over-ambitious target is reduced to what the window can deliver.
    Fleet fleet(TimeHorizon{4, 1.0}, {Device{1.0, 10.0, TimeSet::from_slots({1, 2}, 4)}});
    CHECK(fleet.clamped_count() == 1);
    CHECK(fleet.effective_target(0) == Catch::Approx(2.0));
    CHECK(fleet.total_energy() == Catch::Approx(2.0));
    CHECK(fleet.capacity(TimeSet::full(4)) == Catch::Approx(fleet.total_energy()));
}

TEST_CASE("total energy sums devices") {
    Fleet none(TimeHorizon{3, 1.0}, {});
    CHECK(none.total_energy() == 0.0);
    Fleet two(TimeHorizon{3, 1.0}, {Device{2.0, 1.5, TimeSet::full(3)},
                                    Device{2.0, 2.5, TimeSet::full(3)}});
    CHECK(two.total_energy() == Catch::Approx(4.0));
}

TEST_CASE("fractional step hours are honored") {
    // Half-hour slots: a 1 kW device on two slots can hold at most 1 kWh.
    Fleet fleet(TimeHorizon{4, 0.5}, {Device{1.0, 0.8, TimeSet::from_slots({1, 2}, 4)}});
    CHECK(fleet.capacity(TimeSet::from_slots({1}, 4)) == Catch::Approx(0.5));
    CHECK(fleet.capacity(TimeSet::from_slots({1, 2}, 4)) == Catch::Approx(0.8));
    CHECK(fleet.capacity(TimeSet::from_slots({3, 4}, 4)) == 0.0);
}
