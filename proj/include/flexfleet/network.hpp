#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexfleet/dispatch.hpp"
#include "flexfleet/fleet_qp.hpp"
#include "flexfleet/reduction.hpp"
#include "flexfleet/ucsolver.hpp"

namespace flexfleet {

struct Area {
    std::string id;
    std::vector<Generator> generators;
    std::vector<double> inflexible_kw;
    Fleet fleet;
};

/// Interchange between the two areas; flow is measured positive into the
/// first area (balance: g1 + p = D1 + d1, g2 - p = D2 + d2).
struct TieLine {
    int from_area = 0;
    int to_area = 1;
    double p_bar_kw = 0.0;

    void validate() const {
        if (p_bar_kw < 0.0) throw std::invalid_argument("TieLine: capacity must be >= 0");
    }
};

enum class NetworkMethod { mm1, mm2, mm3, mm4 };

inline const char* to_string(NetworkMethod m) {
    switch (m) {
        case NetworkMethod::mm1: return "mm1";
        case NetworkMethod::mm2: return "mm2";
        case NetworkMethod::mm3: return "mm3";
        case NetworkMethod::mm4: return "mm4";
    }
    return "?";
}

struct NetworkProblem {
    TimeHorizon horizon;
    std::vector<Area> areas;  // exactly two for the MM methods
    TieLine tie;
    NetworkMethod method = NetworkMethod::mm1;
    SelectionOptions selection;
};

struct NetworkSolution {
    SolveStatus status = SolveStatus::max_iterations;
    NetworkMethod method = NetworkMethod::mm1;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> d_kw;      // [area][t]
    std::vector<std::vector<std::vector<double>>> g_kw;
    std::vector<std::vector<double>> lambda;    // [area][t]
    std::vector<double> p_kw;                   // tie flow, empty when decoupled
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
};

namespace detail {

inline void validate_network(const NetworkProblem& prob) {
    prob.horizon.validate();
    prob.tie.validate();
    if (prob.areas.size() != 2)
        throw std::invalid_argument("solve_network: exactly two areas expected");
    for (const Area& a : prob.areas) {
        if (static_cast<int>(a.inflexible_kw.size()) != prob.horizon.num_steps)
            throw std::invalid_argument("solve_network: inflexible series length != horizon");
        if (a.fleet.horizon().num_steps != prob.horizon.num_steps)
            throw std::invalid_argument("solve_network: fleet horizon mismatch");
    }
}

}  // namespace detail

/// Solve the two-area dispatch with the requested fleet representation:
/// per-device (mm1), per-area exhaustive families (mm2, guarded), per-area
/// one-slot greedy families (mm3), or a single greedy family on the merged
/// fleet constraining the summed demand (mm4). Reduced methods carry
/// per-area power caps.
inline NetworkSolution solve_network(const NetworkProblem& prob, const SolveOptions& opts = {}) {
    detail::validate_network(prob);
    const int T = prob.horizon.num_steps;
    NetworkSolution sol;
    sol.method = prob.method;

    if (prob.method == NetworkMethod::mm1) {
        fleet_qp::Problem fp;
        fp.horizon = prob.horizon;
        for (const Area& a : prob.areas)
            fp.areas.push_back(fleet_qp::AreaInput{&a.fleet, a.generators, a.inflexible_kw});
        fp.tie_capacity_kw = prob.tie.p_bar_kw;
        fleet_qp::Result res = fleet_qp::solve(fp, opts);
        sol.status = res.status;
        sol.iterations = res.iterations;
        if (res.status != SolveStatus::optimal) return sol;
        sol.objective = res.objective;
        sol.d_kw = res.d_kw;
        sol.g_kw = res.g_kw;
        sol.lambda = res.lambda;
        sol.p_kw = res.p_kw;
        sol.kkt_residual = res.kkt_residual;
        return sol;
    }

    // Aggregate methods: build the per-area or merged constraint families.
    std::vector<ConstraintSet> per_area;
    ConstraintSet merged;
    std::vector<std::vector<double>> caps(2);
    for (int a = 0; a < 2; ++a) caps[static_cast<size_t>(a)] = per_slot_power_caps(prob.areas[static_cast<size_t>(a)].fleet);

    detail::MultiAreaSpec spec;
    spec.horizon = prob.horizon;
    spec.tie_capacity_kw = prob.tie.p_bar_kw;
    switch (prob.method) {
        case NetworkMethod::mm2:
            for (int a = 0; a < 2; ++a)
                per_area.push_back(
                    exhaustive_constraints(prob.areas[static_cast<size_t>(a)].fleet, prob.selection));
            break;
        case NetworkMethod::mm3:
            for (int a = 0; a < 2; ++a)
                per_area.push_back(greedy_selection_2(prob.areas[static_cast<size_t>(a)].fleet,
                                                      prob.areas[static_cast<size_t>(a)].inflexible_kw,
                                                      prob.selection));
            break;
        case NetworkMethod::mm4: {
            // Merged fleet ranked by the summed inflexible demand.
            std::vector<Device> all;
            for (const Area& a : prob.areas)
                all.insert(all.end(), a.fleet.devices().begin(), a.fleet.devices().end());
            Fleet merged_fleet(prob.horizon, std::move(all));
            std::vector<double> total_inflexible(static_cast<size_t>(T), 0.0);
            for (int t = 0; t < T; ++t)
                for (const Area& a : prob.areas)
                    total_inflexible[static_cast<size_t>(t)] += a.inflexible_kw[static_cast<size_t>(t)];
            merged = greedy_selection_2(merged_fleet, total_inflexible, prob.selection);
            break;
        }
        default: break;
    }

    for (int a = 0; a < 2; ++a) {
        detail::AreaAssemblySpec as;
        as.generators = &prob.areas[static_cast<size_t>(a)].generators;
        as.inflexible = &prob.areas[static_cast<size_t>(a)].inflexible_kw;
        as.total_energy_kwh = prob.areas[static_cast<size_t>(a)].fleet.total_energy();
        if (prob.method == NetworkMethod::mm4) {
            as.constraints = nullptr;
            as.energy_row = false;  // only the merged total is imposed
            as.caps_kw = &caps[static_cast<size_t>(a)];
        } else {
            as.constraints = &per_area[static_cast<size_t>(a)];
            as.energy_row = true;
            as.caps_kw = prob.method == NetworkMethod::mm2 ? nullptr : &caps[static_cast<size_t>(a)];
        }
        spec.areas.push_back(as);
    }
    if (prob.method == NetworkMethod::mm4) {
        spec.merged = &merged;
        spec.merged_energy_row = true;
        spec.merged_energy_kwh = prob.areas[0].fleet.total_energy() + prob.areas[1].fleet.total_energy();
    }

    detail::MultiAssembly as = detail::assemble_multi_area(spec);
    if (as.trivially_infeasible) {
        sol.status = SolveStatus::infeasible;
        return sol;
    }
    qp::Options qopts;
    qopts.tol = opts.tol;
    qopts.max_iterations = opts.max_iterations;
    qp::Result res = qp::solve(as.qp, qopts);
    switch (res.status) {
        case qp::Status::optimal: sol.status = SolveStatus::optimal; break;
        case qp::Status::infeasible: sol.status = SolveStatus::infeasible; break;
        case qp::Status::max_iterations: sol.status = SolveStatus::max_iterations; break;
    }
    sol.iterations = res.iterations;
    if (sol.status != SolveStatus::optimal) return sol;

    const double P0 = as.power_scale, C0 = as.cost_scale;
    sol.objective = res.objective * C0;
    sol.d_kw.assign(2, std::vector<double>(static_cast<size_t>(T)));
    sol.lambda.assign(2, std::vector<double>(static_cast<size_t>(T)));
    sol.g_kw.resize(2);
    for (int a = 0; a < 2; ++a) {
        for (int t = 0; t < T; ++t) {
            sol.d_kw[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                res.x[as.d_offset[static_cast<size_t>(a)] + t] * P0;
            sol.lambda[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                -res.y[static_cast<Eigen::Index>(a) * T + t] * C0 / (P0 * as.step);
        }
        const size_t n_gens = prob.areas[static_cast<size_t>(a)].generators.size();
        sol.g_kw[static_cast<size_t>(a)].assign(n_gens, std::vector<double>(static_cast<size_t>(T)));
        for (size_t i = 0; i < n_gens; ++i)
            for (int t = 0; t < T; ++t)
                sol.g_kw[static_cast<size_t>(a)][i][static_cast<size_t>(t)] =
                    res.x[as.gen_offset[static_cast<size_t>(a)][i] + t] * P0;
    }
    if (as.p_offset >= 0) {
        sol.p_kw.resize(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) sol.p_kw[static_cast<size_t>(t)] = res.x[as.p_offset + t] * P0;
    }
    sol.kkt_residual = res.kkt_residual;
    return sol;
}

struct CongestionProfile {
    bool degenerate = false;          // zero-capacity line: areas decoupled
    std::vector<char> congested;      // per slot
    int congested_count = 0;
};

/// Flags the slots where the interchange runs at its limit.
inline CongestionProfile congestion_profile(const NetworkSolution& sol, const TieLine& tie) {
    if (sol.status != SolveStatus::optimal)
        throw std::logic_error("congestion_profile: solution is not optimal");
    CongestionProfile cp;
    if (tie.p_bar_kw <= 0.0 || sol.p_kw.empty()) {
        cp.degenerate = true;
        return cp;
    }
    cp.congested.resize(sol.p_kw.size(), 0);
    const double tol = 1e-6 * std::max(1.0, tie.p_bar_kw);
    for (size_t t = 0; t < sol.p_kw.size(); ++t)
        if (std::abs(sol.p_kw[t]) >= tie.p_bar_kw - tol) {
            cp.congested[t] = 1;
            ++cp.congested_count;
        }
    return cp;
}

struct AreaValidation {
    std::vector<FeasibilityReport> per_area;
    FeasibilityReport merged;       // only meaningful for mm4
    bool merged_checked = false;
    bool all_feasible = true;
};

/// Exact per-area membership checks of the solved demand profiles; for the
/// merged-fleet method the summed profile is checked against the merged
/// fleet as well.
inline AreaValidation validate_area_profiles(const NetworkProblem& prob,
                                             const NetworkSolution& sol) {
    if (sol.status != SolveStatus::optimal)
        throw std::logic_error("validate_area_profiles: solution is not optimal");
    AreaValidation v;
    for (size_t a = 0; a < prob.areas.size(); ++a) {
        v.per_area.push_back(check_aggregate_feasible(prob.areas[a].fleet, sol.d_kw[a]));
        v.all_feasible = v.all_feasible && v.per_area.back().feasible;
    }
    if (sol.method == NetworkMethod::mm4) {
        std::vector<Device> all;
        for (const Area& a : prob.areas)
            all.insert(all.end(), a.fleet.devices().begin(), a.fleet.devices().end());
        Fleet merged_fleet(prob.horizon, std::move(all));
        std::vector<double> total(sol.d_kw[0].size());
        for (size_t t = 0; t < total.size(); ++t) total[t] = sol.d_kw[0][t] + sol.d_kw[1][t];
        v.merged = check_aggregate_feasible(merged_fleet, total);
        v.merged_checked = true;
        v.all_feasible = v.all_feasible && v.merged.feasible;
    }
    return v;
}

}  // namespace flexfleet
