#pragma once

// Independent reference implementations used only by tests. These deliberately
// avoid the library's indexed/optimized code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "flexfleet/fleet.hpp"
#include "flexfleet/time_set.hpp"

namespace oracle {

using flexfleet::Device;
using flexfleet::Fleet;
using flexfleet::TimeHorizon;
using flexfleet::TimeSet;

/// Term-by-term capacity, straight from the definition, no bucketing.
inline double capacity_naive(const Fleet& fleet, TimeSet w) {
    const double step = fleet.horizon().step_hours;
    double acc = 0.0;
    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& dev = fleet.devices()[j];
        const int overlap = dev.availability.intersect(w).count();
        acc += std::min(static_cast<double>(overlap) * dev.p_max_kw * step,
                        fleet.effective_target(j));
    }
    return acc;
}

inline double average_score_naive(const Fleet& fleet, std::span<const double> inflexible,
                                  TimeSet w) {
    double s = 0.0;
    w.for_each([&](int slot) { s += inflexible[static_cast<size_t>(slot - 1)]; });
    return (s + capacity_naive(fleet, w) / fleet.horizon().step_hours) / w.count();
}

/// Membership in the aggregate-demand polytope by checking all 2^T - 1
/// supports plus the total-energy equality.
inline bool member_exhaustive(const Fleet& fleet, std::span<const double> d_kw, double tol_rel = 1e-9) {
    const int T = fleet.horizon().num_steps;
    const double step = fleet.horizon().step_hours;
    const double E = fleet.total_energy();
    const double tol = tol_rel * std::max(1.0, E);
    double total = 0.0;
    for (double v : d_kw) {
        if (v < -tol) return false;
        total += v * step;
    }
    if (std::abs(total - E) > tol) return false;
    const uint64_t full = fleet.horizon().full_mask();
    for (uint64_t mask = 1; mask <= full; ++mask) {
        double s = 0.0;
        for (int t = 0; t < T; ++t)
            if ((mask >> t) & 1) s += d_kw[static_cast<size_t>(t)] * step;
        if (s > capacity_naive(fleet, TimeSet(mask)) + tol) return false;
    }
    return true;
}

/// Maximal-charge schedule summed over devices: every device at full rate on
/// its whole window, clipped per device by its target.
inline double max_total_charge(const Fleet& fleet) {
    double acc = 0.0;
    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& dev = fleet.devices()[j];
        acc += std::min(fleet.effective_target(j),
                        dev.p_max_kw * fleet.horizon().step_hours * dev.availability.count());
    }
    return acc;
}

/// Level that water-fills max(0, level - base(t)) to the requested volume.
inline double water_level(std::span<const double> base, double volume, double lo, double hi) {
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double v = 0.0;
        for (double b : base) v += std::max(0.0, mid - b);
        (v < volume ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Deterministic little fixture generator for property tests (distinct from
/// the library's scenario module on purpose).
struct TestRng {
    std::mt19937_64 eng;
    explicit TestRng(uint64_t seed) : eng(seed) {}
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(eng);
    }
    uint64_t bits(uint64_t lo, uint64_t hi) {
        return std::uniform_int_distribution<uint64_t>(lo, hi)(eng);
    }
};

inline Fleet random_fleet(int T, int N, uint64_t seed, double step_hours = 1.0) {
    TestRng rng(seed);
    TimeHorizon horizon{T, step_hours};
    std::vector<Device> devices;
    devices.reserve(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) {
        Device dev;
        dev.p_max_kw = rng.uniform(0.2, 3.0);
        dev.availability = TimeSet(rng.bits(1, horizon.full_mask()));
        dev.e_target_kwh =
            rng.uniform(0.0, dev.p_max_kw * step_hours * dev.availability.count());
        devices.push_back(dev);
    }
    return Fleet(horizon, std::move(devices));
}

}  // namespace oracle
