#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "flexfleet/fleet.hpp"
#include "flexfleet/flow.hpp"
#include "flexfleet/time_set.hpp"

namespace flexfleet {

struct FeasibilityReport {
    enum class Reason { ok, energy_mismatch, capacity_cut };
    bool feasible = false;
    Reason reason = Reason::ok;
    TimeSet certificate;       // violated support (capacity_cut / energy surplus)
    double violation_kwh = 0.0;
};

namespace detail {

/// Transportation network: devices supply their exact targets, slots absorb
/// exactly d(t)*step. Returns the max-flow object plus the edge handles.
struct DispatchFlow {
    flow::MaxFlow net;
    int source = 0, sink = 0;
    std::vector<int> device_node, slot_node;
    std::vector<std::vector<flow::MaxFlow::EdgeId>> device_slot_edges;  // parallel to slots()
    std::vector<std::vector<int>> device_slots;
    double pushed = 0.0;
};

inline DispatchFlow build_dispatch_flow(const Fleet& fleet, std::span<const double> d_kw) {
    const int T = fleet.horizon().num_steps;
    const double step = fleet.horizon().step_hours;
    DispatchFlow f;
    f.source = f.net.add_node();
    f.device_node.resize(fleet.size());
    f.device_slot_edges.resize(fleet.size());
    f.device_slots.resize(fleet.size());
    for (size_t j = 0; j < fleet.size(); ++j) f.device_node[j] = f.net.add_node();
    f.slot_node.resize(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) f.slot_node[static_cast<size_t>(t)] = f.net.add_node();
    f.sink = f.net.add_node();

    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& dev = fleet.devices()[j];
        const double e = fleet.effective_target(j);
        if (e <= 0.0) continue;
        f.net.add_edge(f.source, f.device_node[j], e);
        dev.availability.for_each([&](int slot) {
            f.device_slots[j].push_back(slot - 1);
            f.device_slot_edges[j].push_back(f.net.add_edge(
                f.device_node[j], f.slot_node[static_cast<size_t>(slot - 1)], dev.p_max_kw * step));
        });
    }
    for (int t = 0; t < T; ++t)
        f.net.add_edge(f.slot_node[static_cast<size_t>(t)], f.sink,
                       std::max(0.0, d_kw[static_cast<size_t>(t)]) * step);
    f.pushed = f.net.run(f.source, f.sink);
    return f;
}

}  // namespace detail

/// Exact membership test: can the fleet realize the aggregate profile d?
/// Device targets are delivered exactly (the model charges each device to its
/// target, no more), so membership also requires the total energies to agree.
/// On a capacity failure the report carries a violated support extracted from
/// the minimum cut.
inline FeasibilityReport check_aggregate_feasible(const Fleet& fleet,
                                                  std::span<const double> d_kw,
                                                  double tol_rel = 1e-9) {
    const int T = fleet.horizon().num_steps;
    if (static_cast<int>(d_kw.size()) != T)
        throw std::invalid_argument("check_aggregate_feasible: profile length != horizon");
    const double step = fleet.horizon().step_hours;
    const double E = fleet.total_energy();
    const double tol = tol_rel * std::max(1.0, E);

    FeasibilityReport rep;
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        if (d_kw[static_cast<size_t>(t)] < -tol / step)
            throw std::invalid_argument("check_aggregate_feasible: negative demand at slot " +
                                        std::to_string(t + 1));
        total += d_kw[static_cast<size_t>(t)] * step;
    }
    if (total > E + tol) {
        rep.feasible = false;
        rep.reason = FeasibilityReport::Reason::energy_mismatch;
        rep.certificate = TimeSet::full(T);
        rep.violation_kwh = total - E;
        return rep;
    }
    if (total < E - tol) {
        rep.feasible = false;
        rep.reason = FeasibilityReport::Reason::energy_mismatch;
        rep.certificate = TimeSet();
        rep.violation_kwh = E - total;
        return rep;
    }

    detail::DispatchFlow f = detail::build_dispatch_flow(fleet, d_kw);
    if (f.pushed >= E - tol) {
        rep.feasible = true;
        return rep;
    }
    // Sink-side slots of the minimum cut form a violated support.
    const std::vector<char> side = f.net.source_side();
    uint64_t mask = 0;
    for (int t = 0; t < T; ++t)
        if (!side[static_cast<size_t>(f.slot_node[static_cast<size_t>(t)])])
            mask |= uint64_t{1} << t;
    rep.feasible = false;
    rep.reason = FeasibilityReport::Reason::capacity_cut;
    rep.certificate = TimeSet(mask);
    double lhs = 0.0;
    rep.certificate.for_each([&](int slot) { lhs += d_kw[static_cast<size_t>(slot - 1)] * step; });
    rep.violation_kwh = lhs - fleet.capacity(rep.certificate);
    return rep;
}

namespace detail {

struct LevelGroups {
    std::vector<double> level;            // per slot
    std::vector<int> group_of;            // per slot
    std::vector<std::vector<int>> slots;  // per group, ascending level
};

inline LevelGroups group_levels(std::span<const double> inflexible, std::span<const double> d,
                                double tol_rel) {
    const int T = static_cast<int>(d.size());
    LevelGroups lg;
    lg.level.resize(static_cast<size_t>(T));
    double scale = 1.0;
    for (int t = 0; t < T; ++t) {
        lg.level[static_cast<size_t>(t)] =
            inflexible[static_cast<size_t>(t)] + d[static_cast<size_t>(t)];
        scale = std::max(scale, std::abs(lg.level[static_cast<size_t>(t)]));
    }
    std::vector<int> order(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) order[static_cast<size_t>(t)] = t;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return lg.level[static_cast<size_t>(a)] < lg.level[static_cast<size_t>(b)];
    });
    lg.group_of.assign(static_cast<size_t>(T), -1);
    for (int i = 0; i < T; ++i) {
        const int t = order[static_cast<size_t>(i)];
        if (i == 0 || lg.level[static_cast<size_t>(t)] -
                              lg.level[static_cast<size_t>(order[static_cast<size_t>(i - 1)])] >
                          tol_rel * scale)
            lg.slots.emplace_back();
        lg.slots.back().push_back(t);
        lg.group_of[static_cast<size_t>(t)] = static_cast<int>(lg.slots.size()) - 1;
    }
    return lg;
}

/// Threshold-structured realization: each device charges at full rate on the
/// groups strictly below its threshold level, a remainder inside the
/// threshold group, nothing above. The within-group split is matched to the
/// prescribed slot totals by a small transportation flow per group. Profiles
/// coming out of a solver carry noise on weakly active rows, so all
/// accounting here uses tol_rel of the fleet energy; the caller repairs slot
/// sums afterwards. Returns false if no near-threshold realization exists.
inline bool try_threshold_realization(const Fleet& fleet, std::span<const double> d_kw,
                                      const LevelGroups& lg,
                                      std::vector<std::vector<double>>& u_out,
                                      double tol_rel = 1e-5) {
    const int T = fleet.horizon().num_steps;
    const double step = fleet.horizon().step_hours;
    const double tol = tol_rel * std::max(1.0, fleet.total_energy());
    const size_t n_groups = lg.slots.size();

    struct DeviceFill {
        int threshold_group = -1;  // group carrying the fractional remainder
        double frac_kwh = 0.0;
    };
    std::vector<DeviceFill> fill(fleet.size());
    u_out.assign(fleet.size(), std::vector<double>(static_cast<size_t>(T), 0.0));

    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& dev = fleet.devices()[j];
        double remaining = fleet.effective_target(j);
        if (remaining <= tol) continue;
        for (size_t g = 0; g < n_groups && remaining > tol; ++g) {
            double group_cap = 0.0;
            for (int t : lg.slots[g])
                if (dev.availability.contains(t + 1)) group_cap += dev.p_max_kw * step;
            if (group_cap <= 0.0) continue;
            if (remaining >= group_cap - tol) {
                for (int t : lg.slots[g])
                    if (dev.availability.contains(t + 1))
                        u_out[j][static_cast<size_t>(t)] = dev.p_max_kw;
                remaining -= group_cap;
            } else {
                fill[j].threshold_group = static_cast<int>(g);
                fill[j].frac_kwh = remaining;
                remaining = 0.0;
            }
        }
        if (remaining > tol) return false;  // target exceeds window (not expected post-clamp)
    }

    // Per group: the residual slot demand must be coverable by the devices
    // fractional at that group. Supplies get a small allowance so solver
    // noise cannot starve a slot.
    for (size_t g = 0; g < n_groups; ++g) {
        std::vector<double> residual;  // kWh per slot of the group
        double residual_sum = 0.0;
        for (int t : lg.slots[g]) {
            double r = d_kw[static_cast<size_t>(t)] * step;
            for (size_t j = 0; j < fleet.size(); ++j) r -= u_out[j][static_cast<size_t>(t)] * step;
            if (r < -tol) return false;
            residual.push_back(std::max(0.0, r));
            residual_sum += std::max(0.0, r);
        }
        std::vector<size_t> frac_devices;
        double supply_sum = 0.0;
        for (size_t j = 0; j < fleet.size(); ++j)
            if (fill[j].threshold_group == static_cast<int>(g) && fill[j].frac_kwh > 0.0) {
                frac_devices.push_back(j);
                supply_sum += fill[j].frac_kwh;
            }
        if (std::abs(supply_sum - residual_sum) > tol * std::max<double>(1, lg.slots[g].size()))
            return false;
        if (frac_devices.empty()) continue;

        flow::MaxFlow net;
        const int src = net.add_node();
        std::vector<int> dev_nodes(frac_devices.size());
        for (size_t i = 0; i < frac_devices.size(); ++i) dev_nodes[i] = net.add_node();
        std::vector<int> slot_nodes(lg.slots[g].size());
        for (size_t i = 0; i < lg.slots[g].size(); ++i) slot_nodes[i] = net.add_node();
        const int snk = net.add_node();
        std::vector<std::vector<flow::MaxFlow::EdgeId>> edges(
            frac_devices.size(), std::vector<flow::MaxFlow::EdgeId>(lg.slots[g].size()));
        for (size_t i = 0; i < frac_devices.size(); ++i) {
            const size_t j = frac_devices[i];
            const Device& dev = fleet.devices()[j];
            double arc_cap_sum = 0.0;
            for (size_t s = 0; s < lg.slots[g].size(); ++s)
                if (dev.availability.contains(lg.slots[g][s] + 1)) arc_cap_sum += dev.p_max_kw * step;
            net.add_edge(src, dev_nodes[i],
                         std::min(fill[j].frac_kwh + tol, arc_cap_sum));
            for (size_t s = 0; s < lg.slots[g].size(); ++s) {
                if (!dev.availability.contains(lg.slots[g][s] + 1)) continue;
                edges[i][s] = net.add_edge(dev_nodes[i], slot_nodes[s], dev.p_max_kw * step);
            }
        }
        for (size_t s = 0; s < lg.slots[g].size(); ++s)
            net.add_edge(slot_nodes[s], snk, residual[s]);
        const double pushed = net.run(src, snk);
        if (pushed < residual_sum - tol * std::max<double>(1, frac_devices.size())) return false;
        for (size_t i = 0; i < frac_devices.size(); ++i) {
            const size_t j = frac_devices[i];
            for (size_t s = 0; s < lg.slots[g].size(); ++s) {
                if (edges[i][s].node < 0) continue;
                u_out[j][static_cast<size_t>(lg.slots[g][s])] += net.flow_on(edges[i][s]) / step;
            }
        }
    }
    return true;
}

/// Make per-slot schedule sums match the profile exactly, spreading the
/// (noise-sized) corrections across devices within their power boxes.
inline void repair_slot_sums(const Fleet& fleet, std::span<const double> d_kw,
                             std::vector<std::vector<double>>& u) {
    const int T = fleet.horizon().num_steps;
    for (int t = 0; t < T; ++t) {
        double sum = 0.0;
        for (size_t j = 0; j < fleet.size(); ++j) sum += u[j][static_cast<size_t>(t)];
        double delta = d_kw[static_cast<size_t>(t)] - sum;
        if (delta == 0.0) continue;
        // Fractional schedules tolerate arbitrary corrections, so spend the
        // delta there first; full/idle devices only as a last resort.
        for (int pass = 0; pass < 2 && std::abs(delta) > 0.0; ++pass) {
            for (size_t j = 0; j < fleet.size() && std::abs(delta) > 0.0; ++j) {
                const Device& dev = fleet.devices()[j];
                if (!dev.availability.contains(t + 1)) continue;
                double& ujt = u[j][static_cast<size_t>(t)];
                const double interior_margin = 1e-7 * std::max(1.0, dev.p_max_kw);
                const bool interior =
                    ujt > interior_margin && ujt < dev.p_max_kw - interior_margin;
                if (pass == 0 && !interior) continue;
                if (delta > 0.0) {
                    const double add = std::min(delta, dev.p_max_kw - ujt);
                    if (add > 0.0) {
                        ujt += add;
                        delta -= add;
                    }
                } else {
                    const double cut = std::min(-delta, ujt);
                    if (cut > 0.0) {
                        ujt -= cut;
                        delta += cut;
                    }
                }
            }
        }
    }
}

/// Devices indistinguishable by (rated power, target, window) share their
/// summed allocation equally.
inline void symmetrize_identical(const Fleet& fleet, std::vector<std::vector<double>>& u) {
    const int T = fleet.horizon().num_steps;
    std::map<std::tuple<double, double, uint64_t>, std::vector<size_t>> groups;
    for (size_t j = 0; j < fleet.size(); ++j)
        groups[{fleet.devices()[j].p_max_kw, fleet.effective_target(j),
                fleet.devices()[j].availability.bits()}]
            .push_back(j);
    for (auto& [key, members] : groups) {
        if (members.size() < 2) continue;
        for (int t = 0; t < T; ++t) {
            double sum = 0.0;
            for (size_t j : members) sum += u[j][static_cast<size_t>(t)];
            const double share = sum / static_cast<double>(members.size());
            for (size_t j : members) u[j][static_cast<size_t>(t)] = share;
        }
    }
}

}  // namespace detail

/// Split a feasible aggregate profile into per-device schedules. Profiles
/// with the structure of an optimal dispatch get a threshold-form
/// realization; otherwise any exact realization is returned. group_tol_rel
/// decides when two demand levels count as tied; it must sit above the
/// noise floor of the solver that produced d.
inline std::vector<std::vector<double>> disaggregate(const Fleet& fleet,
                                                     std::span<const double> d_kw,
                                                     std::span<const double> inflexible_kw,
                                                     double group_tol_rel = 1e-7) {
    const int T = fleet.horizon().num_steps;
    if (static_cast<int>(inflexible_kw.size()) != T)
        throw std::invalid_argument("disaggregate: inflexible series length != horizon");
    FeasibilityReport rep = check_aggregate_feasible(fleet, d_kw);
    if (!rep.feasible)
        throw std::invalid_argument("disaggregate: profile is not realizable by the fleet");

    const detail::LevelGroups lg = detail::group_levels(inflexible_kw, d_kw, group_tol_rel);
    std::vector<std::vector<double>> u;
    if (!detail::try_threshold_realization(fleet, d_kw, lg, u)) {
        // Not threshold-structured (profile away from optimality): fall back
        // to a plain flow realization.
        detail::DispatchFlow f = detail::build_dispatch_flow(fleet, d_kw);
        u.assign(fleet.size(), std::vector<double>(static_cast<size_t>(T), 0.0));
        const double step = fleet.horizon().step_hours;
        for (size_t j = 0; j < fleet.size(); ++j)
            for (size_t k = 0; k < f.device_slots[j].size(); ++k)
                u[j][static_cast<size_t>(f.device_slots[j][k])] =
                    f.net.flow_on(f.device_slot_edges[j][k]) / step;
    }
    detail::repair_slot_sums(fleet, d_kw, u);
    detail::symmetrize_identical(fleet, u);
    return u;
}

/// True when every device's schedule is a threshold rule in the total demand
/// level: full rate strictly below some level, zero strictly above, partial
/// power only at the level itself. tie_tol_rel separates demand levels;
/// power_tol_rel decides what still counts as full rate or idle. Both sit
/// above the noise floor of solver-produced profiles.
inline bool verify_thresholds(const std::vector<std::vector<double>>& u, const Fleet& fleet,
                              std::span<const double> inflexible_kw, std::span<const double> d_kw,
                              double tie_tol_rel = 1e-6, double power_tol_rel = 1e-5) {
    const int T = fleet.horizon().num_steps;
    if (u.size() != fleet.size()) return false;
    std::vector<double> level(static_cast<size_t>(T));
    double scale = 1.0;
    for (int t = 0; t < T; ++t) {
        level[static_cast<size_t>(t)] =
            inflexible_kw[static_cast<size_t>(t)] + d_kw[static_cast<size_t>(t)];
        scale = std::max(scale, std::abs(level[static_cast<size_t>(t)]));
    }
    for (size_t j = 0; j < fleet.size(); ++j) {
        const Device& dev = fleet.devices()[j];
        const double p_tol = power_tol_rel * std::max(1.0, dev.p_max_kw);
        double max_active = -std::numeric_limits<double>::infinity();
        double min_nonfull = std::numeric_limits<double>::infinity();
        for (int t = 0; t < T; ++t) {
            const double ut = u[j][static_cast<size_t>(t)];
            if (!dev.availability.contains(t + 1)) {
                if (std::abs(ut) > p_tol) return false;
                continue;
            }
            if (ut > p_tol) max_active = std::max(max_active, level[static_cast<size_t>(t)]);
            if (ut < dev.p_max_kw - p_tol)
                min_nonfull = std::min(min_nonfull, level[static_cast<size_t>(t)]);
        }
        if (max_active > min_nonfull + tie_tol_rel * scale) return false;
    }
    return true;
}

}  // namespace flexfleet
