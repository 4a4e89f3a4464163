#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexfleet/time_set.hpp"

namespace flexfleet {

/// One charging device: rated power, energy still to deliver, and the slots
/// during which it is plugged in. Charging only (no injection back).
struct Device {
    double p_max_kw = 0.0;
    double e_target_kwh = 0.0;
    TimeSet availability;
};

/// An immutable collection of devices over a common horizon, with a capacity
/// index that answers "how much energy can the fleet absorb within slot set W"
/// without touching individual devices.
///
/// Targets exceeding what the availability window can physically deliver are
/// clamped at construction (clamped_count() reports how many), so that the
/// whole-horizon capacity always equals the total target energy.
class Fleet {
public:
    Fleet() { horizon_.validate(); }

    Fleet(TimeHorizon horizon, std::vector<Device> devices)
        : horizon_(horizon), devices_(std::move(devices)) {
        horizon_.validate();
        effective_target_.resize(devices_.size());
        const uint64_t full = horizon_.full_mask();
        for (size_t j = 0; j < devices_.size(); ++j) {
            const Device& dev = devices_[j];
            if (!(dev.p_max_kw > 0.0))
                throw std::invalid_argument("Fleet: device " + std::to_string(j) +
                                            " has non-positive p_max_kw");
            if (dev.e_target_kwh < 0.0)
                throw std::invalid_argument("Fleet: device " + std::to_string(j) +
                                            " has negative e_target_kwh");
            if ((dev.availability.bits() & ~full) != 0)
                throw std::invalid_argument("Fleet: device " + std::to_string(j) +
                                            " availability outside horizon");
            if (dev.e_target_kwh > 0.0 && dev.availability.empty())
                throw std::invalid_argument("Fleet: device " + std::to_string(j) +
                                            " has positive target but empty availability");
            const double window_cap =
                dev.p_max_kw * horizon_.step_hours * dev.availability.count();
            double eff = dev.e_target_kwh;
            if (eff > window_cap) {
                eff = window_cap;
                ++clamped_;
            }
            effective_target_[j] = eff;
            total_energy_ += eff;
        }
        build_index();
    }

    const TimeHorizon& horizon() const { return horizon_; }
    const std::vector<Device>& devices() const { return devices_; }
    size_t size() const { return devices_.size(); }
    bool empty() const { return devices_.empty(); }

    /// Target energy after the window-capacity clamp, kWh.
    double effective_target(size_t j) const { return effective_target_[j]; }
    int clamped_count() const { return clamped_; }

    /// Sum of effective targets, kWh. Equals capacity(full horizon).
    double total_energy() const { return total_energy_; }

    /// Maximum energy (kWh) the fleet can absorb within the slot set w:
    /// sum over devices of min(card(A_j & w) * p_max * step, e_target_eff).
    /// Monotone and submodular in w.
    double capacity(TimeSet w) const {
        double cap = 0.0;
        for (const Bucket& b : buckets_) {
            const int m = std::popcount(b.mask & w.bits());
            cap += b.table[static_cast<size_t>(m)];
        }
        return cap;
    }

private:
    // Devices sharing an availability set are grouped; table[m] holds the
    // bucket's absorbable energy when m of its slots are selected, so a
    // capacity query costs one popcount and one lookup per bucket.
    struct Bucket {
        uint64_t mask = 0;
        std::vector<double> table;
    };

    void build_index() {
        std::map<uint64_t, std::vector<size_t>> groups;
        for (size_t j = 0; j < devices_.size(); ++j)
            if (effective_target_[j] > 0.0)
                groups[devices_[j].availability.bits()].push_back(j);

        const double step = horizon_.step_hours;
        buckets_.clear();
        buckets_.reserve(groups.size());
        for (auto& [mask, members] : groups) {
            Bucket b;
            b.mask = mask;
            const int window = std::popcount(mask);
            // Slot-count at which each device's target saturates its rate.
            std::vector<double> ratio(members.size());
            std::vector<double> energy(members.size()), power(members.size());
            for (size_t i = 0; i < members.size(); ++i) {
                const size_t j = members[i];
                energy[i] = effective_target_[j];
                power[i] = devices_[j].p_max_kw;
                ratio[i] = energy[i] / (power[i] * step);
            }
            std::vector<size_t> order(members.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::sort(order.begin(), order.end(),
                      [&](size_t a, size_t c) { return ratio[a] < ratio[c]; });

            double saturated_energy = 0.0;  // devices whose target binds
            double unsaturated_power = 0.0; // devices still rate-limited
            for (size_t i : order) unsaturated_power += power[i];

            b.table.assign(static_cast<size_t>(window) + 1, 0.0);
            size_t next = 0;
            for (int m = 0; m <= window; ++m) {
                while (next < order.size() && ratio[order[next]] <= static_cast<double>(m)) {
                    saturated_energy += energy[order[next]];
                    unsaturated_power -= power[order[next]];
                    ++next;
                }
                b.table[static_cast<size_t>(m)] =
                    saturated_energy + static_cast<double>(m) * step * unsaturated_power;
            }
            buckets_.push_back(std::move(b));
        }
    }

    TimeHorizon horizon_;
    std::vector<Device> devices_;
    std::vector<double> effective_target_;
    std::vector<Bucket> buckets_;
    double total_energy_ = 0.0;
    int clamped_ = 0;
};

/// Highest average total power (kW) a slot set can carry: inflexible energy
/// over w plus fleet capacity, divided by the window length.
inline double max_average_demand(const Fleet& fleet, std::span<const double> inflexible_kw,
                                 TimeSet w) {
    if (w.empty()) throw std::invalid_argument("max_average_demand: empty slot set");
    const int T = fleet.horizon().num_steps;
    if (static_cast<int>(inflexible_kw.size()) != T)
        throw std::invalid_argument("max_average_demand: inflexible series length != horizon");
    const double step = fleet.horizon().step_hours;
    double inflexible_sum = 0.0;
    w.for_each([&](int slot) { inflexible_sum += inflexible_kw[static_cast<size_t>(slot - 1)]; });
    return (inflexible_sum + fleet.capacity(w) / step) / static_cast<double>(w.count());
}

}  // namespace flexfleet
