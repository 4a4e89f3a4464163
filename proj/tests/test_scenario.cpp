#include <catch2/catch_amalgamated.hpp>

#include "flexfleet/scenario.hpp"

using namespace flexfleet;

TEST_CASE("generation is a pure function of the spec") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::uniform_subsets;
    spec.num_steps = 8;
    spec.num_devices = 25;
    spec.seed = 123456;
    Fleet a = generate_fleet(spec);
    Fleet b = generate_fleet(spec);
    REQUIRE(a.size() == b.size());
    for (size_t j = 0; j < a.size(); ++j) {
        CHECK(a.devices()[j].availability == b.devices()[j].availability);
        CHECK(a.devices()[j].e_target_kwh == b.devices()[j].e_target_kwh);
        CHECK(a.devices()[j].p_max_kw == b.devices()[j].p_max_kw);
    }
    spec.seed = 123457;
    Fleet c = generate_fleet(spec);
    bool any_diff = false;
    for (size_t j = 0; j < a.size(); ++j)
        any_diff = any_diff || !(a.devices()[j].availability == c.devices()[j].availability);
    CHECK(any_diff);

    spec.num_devices = 0;
    CHECK(generate_fleet(spec).empty());
}

TEST_CASE("uniform subsets hit the analytic mean cardinality") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::uniform_subsets;
    spec.num_steps = 8;
    spec.num_devices = 10000;
    spec.seed = 99;
    Fleet fleet = generate_fleet(spec);
    double mean = 0.0;
    for (const Device& d : fleet.devices()) {
        CHECK(!d.availability.empty());
        mean += d.availability.count();
    }
    mean /= static_cast<double>(fleet.size());
    // Mean cardinality over nonempty subsets of 8 slots: 8*2^7/255.
    const double expect = 8.0 * 128.0 / 255.0;
    CHECK(mean == Catch::Approx(expect).epsilon(0.02));
}

TEST_CASE("targets are uniform on the window energy") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::uniform_subsets;
    spec.num_steps = 8;
    spec.num_devices = 20000;
    spec.seed = 7;
    Fleet fleet = generate_fleet(spec);
    // Kolmogorov-Smirnov distance of e/target_max against U(0,1).
    std::vector<double> ratios;
    ratios.reserve(fleet.size());
    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& d = fleet.devices()[j];
        ratios.push_back(d.e_target_kwh / (d.p_max_kw * d.availability.count()));
    }
    std::sort(ratios.begin(), ratios.end());
    double ks = 0.0;
    for (size_t i = 0; i < ratios.size(); ++i) {
        const double f = static_cast<double>(i + 1) / static_cast<double>(ratios.size());
        ks = std::max(ks, std::abs(f - ratios[i]));
    }
    // 1% critical value ~ 1.63/sqrt(n).
    CHECK(ks < 1.63 / std::sqrt(static_cast<double>(ratios.size())));
}

TEST_CASE("contiguous windows wrap the horizon circle") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::contiguous_normal;
    spec.num_steps = 24;
    spec.num_devices = 4000;
    spec.seed = 11;
    spec.start_mean_h = 18.0;
    spec.start_sd_h = 1.0;
    spec.duration_mean_h = 10.0;
    spec.duration_sd_h = 2.0;
    Fleet fleet = generate_fleet(spec);
    int wrapped = 0;
    double mean_len = 0.0;
    for (const Device& d : fleet.devices()) {
        const int len = d.availability.count();
        mean_len += len;
        REQUIRE(len >= 1);
        REQUIRE(len <= 24);
        // Contiguity on the circle: member slots form one run (or wrap).
        const uint64_t bits = d.availability.bits();
        int transitions = 0;
        for (int t = 0; t < 24; ++t) {
            const bool cur = (bits >> t) & 1;
            const bool nxt = (bits >> ((t + 1) % 24)) & 1;
            if (cur != nxt) ++transitions;
        }
        REQUIRE(transitions <= 2);
        if (d.availability.contains(24) && d.availability.contains(1)) ++wrapped;
        CHECK(d.e_target_kwh <= d.p_max_kw * len + 1e-12);
    }
    mean_len /= static_cast<double>(fleet.size());
    CHECK(mean_len == Catch::Approx(10.0).margin(0.25));
    CHECK(wrapped > 0);  // 18:00 starts with ~10 h duration cross midnight
}

TEST_CASE("spec validation") {
    ScenarioSpec spec;
    spec.num_steps = 70;
    CHECK_THROWS_AS(generate_fleet(spec), std::invalid_argument);
    spec.num_steps = 8;
    spec.p_max_kw = 0.0;
    CHECK_THROWS_AS(generate_fleet(spec), std::invalid_argument);
    spec.p_max_kw = 1.0;
    spec.num_devices = -1;
    CHECK_THROWS_AS(generate_fleet(spec), std::invalid_argument);
}

TEST_CASE("single-bus case is well formed") {
    SingleBusCase c = make_single_bus_case(8, 10, 42);
    CHECK(c.fleet.size() == 10);
    CHECK(c.inflexible_kw.size() == 8);
    REQUIRE(c.generators.size() == 1);
    double gmax_needed = 0.0;
    for (double v : c.inflexible_kw) gmax_needed = std::max(gmax_needed, v);
    CHECK(c.generators[0].g_max_kw > gmax_needed);
    SingleBusCase c2 = make_single_bus_case(8, 10, 42);
    CHECK(c2.fleet.devices()[3].e_target_kwh == c.fleet.devices()[3].e_target_kwh);
}
