#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexfleet/cost.hpp"
#include "flexfleet/fleet.hpp"
#include "flexfleet/network.hpp"

namespace flexfleet {

/// Seeded generator with explicit sampling code on top of mt19937_64, so
/// fixed seeds reproduce instances exactly on this platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [lo, hi], inclusive, by rejection.
    uint64_t uniform_int(uint64_t lo, uint64_t hi) {
        const uint64_t span = hi - lo + 1;
        if (span == 0) return next();  // full range
        const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                               std::numeric_limits<uint64_t>::max() % span;
        uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return lo + v % span;
    }

    double normal(double mean, double sd) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sd * spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + sd * r * std::cos(a);
    }

    /// Derive a child seed (splitmix64 over the pair).
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

enum class ScenarioKind { uniform_subsets, contiguous_normal };

inline const char* to_string(ScenarioKind k) {
    return k == ScenarioKind::uniform_subsets ? "uniform_subsets" : "contiguous_normal";
}

/// Recipe for one random fleet. uniform_subsets draws each availability set
/// uniformly from the nonempty subsets of the horizon; contiguous_normal
/// draws a start slot and a duration from normal laws and wraps the window
/// around the horizon circle. Targets are uniform on [0, rated window
/// energy].
struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::uniform_subsets;
    int num_steps = 24;
    int num_devices = 10;
    double step_hours = 1.0;
    double p_max_kw = 1.0;
    uint64_t seed = 0;
    // contiguous_normal parameters (hours):
    double start_mean_h = 18.0;
    double start_sd_h = 1.0;
    double duration_mean_h = 10.0;
    double duration_sd_h = 2.0;

    void validate() const {
        TimeHorizon{num_steps, step_hours}.validate();
        if (num_devices < 0) throw std::invalid_argument("ScenarioSpec: negative device count");
        if (!(p_max_kw > 0.0)) throw std::invalid_argument("ScenarioSpec: p_max_kw must be > 0");
        if (kind == ScenarioKind::contiguous_normal &&
            (start_sd_h < 0.0 || duration_sd_h < 0.0))
            throw std::invalid_argument("ScenarioSpec: negative standard deviation");
    }
};

/// Deterministic fleet generation: a pure function of the spec (seed included).
inline Fleet generate_fleet(const ScenarioSpec& spec) {
    spec.validate();
    const TimeHorizon horizon{spec.num_steps, spec.step_hours};
    Rng rng(spec.seed);
    std::vector<Device> devices;
    devices.reserve(static_cast<size_t>(spec.num_devices));
    const int T = spec.num_steps;

    for (int j = 0; j < spec.num_devices; ++j) {
        Device dev;
        dev.p_max_kw = spec.p_max_kw;
        if (spec.kind == ScenarioKind::uniform_subsets) {
            dev.availability = TimeSet(rng.uniform_int(1, horizon.full_mask()));
            dev.e_target_kwh = rng.uniform(
                0.0, dev.p_max_kw * spec.step_hours * dev.availability.count());
        } else {
            const double start_h = rng.normal(spec.start_mean_h, spec.start_sd_h);
            const double dur_h = rng.normal(spec.duration_mean_h, spec.duration_sd_h);
            const long start_slot = std::lround(start_h);
            int duration = static_cast<int>(std::floor(dur_h + 0.5));  // half-up
            duration = std::max(1, std::min(duration, T));
            uint64_t mask = 0;
            for (int i = 0; i < duration; ++i) {
                const long slot0 = ((start_slot - 1 + i) % T + T) % T;  // 0-based, wrapped
                mask |= uint64_t{1} << slot0;
            }
            dev.availability = TimeSet(mask);
            dev.e_target_kwh = rng.uniform(0.0, dev.p_max_kw * spec.step_hours * duration);
        }
        devices.push_back(dev);
    }
    return Fleet(horizon, std::move(devices));
}

/// One self-contained single-bus study case: a random partial-availability
/// fleet, an inflexible profile sized to it, and one quadratic generator
/// with ample headroom.
struct SingleBusCase {
    Fleet fleet;
    std::vector<double> inflexible_kw;
    std::vector<Generator> generators;
};

inline SingleBusCase make_single_bus_case(int num_steps, int num_devices, uint64_t seed,
                                          double p_max_kw = 1.0) {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::uniform_subsets;
    spec.num_steps = num_steps;
    spec.num_devices = num_devices;
    spec.p_max_kw = p_max_kw;
    spec.seed = Rng::derive(seed, 1);

    SingleBusCase c{generate_fleet(spec), {}, {}};
    Rng rng(Rng::derive(seed, 2));
    c.inflexible_kw.resize(static_cast<size_t>(num_steps));
    const double spread = 0.5 * num_devices * p_max_kw;
    double peak = 0.0;
    for (auto& v : c.inflexible_kw) {
        v = rng.uniform(0.0, spread);
        peak = std::max(peak, v);
    }
    c.generators.push_back(
        Generator{0.0, peak + num_devices * p_max_kw + 1.0, CostFunction::quadratic(1.0, 0.0)});
    return c;
}

/// Synthetic day-long demand shape (GW): overnight trough, morning rise,
/// evening peak. Stands in for confidential grid history in the two-area
/// study.
inline std::vector<double> reference_demand_profile_gw() {
    return {22.5, 20.8, 19.6, 19.0, 19.3, 20.9, 24.5, 29.0, 32.5, 33.8, 33.9, 33.4,
            32.8, 32.2, 31.7, 31.9, 33.5, 36.5, 38.2, 37.4, 34.8, 30.9, 27.0, 24.2};
}

/// Desk-scale replica of the two-area study: device counts shrunk by
/// `scale`, rated power grown by the same factor (so aggregate magnitudes
/// are preserved), overnight contiguous windows, quadratic costs. All power
/// quantities are in GW, energies in GWh.
inline NetworkProblem make_two_area_case(double p_bar_gw, uint64_t seed = 20240u,
                                         int scale = 1000) {
    NetworkProblem prob;
    prob.horizon = TimeHorizon{24, 1.0};
    prob.tie = TieLine{0, 1, p_bar_gw};
    const std::vector<double> profile = reference_demand_profile_gw();

    const int counts[2] = {4000000 / scale, 6000000 / scale};
    const double a_coef[2] = {1e4, 2e4};
    const double b_coef[2] = {1.5e4, 1.4e4};
    for (int a = 0; a < 2; ++a) {
        ScenarioSpec spec;
        spec.kind = ScenarioKind::contiguous_normal;
        spec.num_steps = 24;
        spec.num_devices = counts[a];
        spec.p_max_kw = 5e-6 * scale;  // 5 kW per device, in GW, scaled up
        spec.seed = Rng::derive(seed, static_cast<uint64_t>(a + 1));
        Area area;
        area.id = a == 0 ? "area1" : "area2";
        area.fleet = generate_fleet(spec);
        area.inflexible_kw = profile;
        area.generators.push_back(
            Generator{0.0, 60.0, CostFunction::quadratic(a_coef[a], b_coef[a])});
        prob.areas.push_back(std::move(area));
    }
    return prob;
}

}  // namespace flexfleet
