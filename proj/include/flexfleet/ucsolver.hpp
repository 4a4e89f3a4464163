#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "flexfleet/cost.hpp"
#include "flexfleet/fleet.hpp"
#include "flexfleet/qp.hpp"
#include "flexfleet/reduction.hpp"

namespace flexfleet {

/// Flexible demand modelled device by device.
struct PerDeviceModel {
    Fleet fleet;
};

/// Flexible demand modelled through a selected aggregate constraint family.
struct AggregateModel {
    ConstraintSet constraints;
    double total_energy_kwh = 0.0;
};

struct UcProblem {
    TimeHorizon horizon;
    std::vector<Generator> generators;
    std::vector<double> inflexible_kw;
    std::variant<PerDeviceModel, AggregateModel> fleet_model;
};

namespace detail {
/// Final iterates in the solver's normalized coordinates, kept so the KKT
/// point can be re-evaluated independently of how it was produced.
struct RawIterates {
    Eigen::VectorXd x, y, z, zl, zu;
    double power_scale = 1.0, cost_scale = 1.0;
    bool per_device = false;
};
}  // namespace detail

struct Solution {
    SolveStatus status = SolveStatus::max_iterations;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> d_kw;                   // aggregate flexible demand
    std::vector<std::vector<double>> g_kw;      // per generator
    std::vector<std::vector<double>> u_kw;      // per device (optional)
    std::vector<double> lambda;                 // balance duals, currency/kWh
    std::vector<double> mu;                     // aggregate-row duals, currency/kWh
    std::vector<double> cap_mu;                 // per-slot cap duals, currency/kWh
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    detail::RawIterates raw;
};

namespace detail {

/// One area of the assembled aggregate program.
struct AreaAssemblySpec {
    const std::vector<Generator>* generators = nullptr;
    const std::vector<double>* inflexible = nullptr;   // kW, length T
    const ConstraintSet* constraints = nullptr;        // may be absent
    double total_energy_kwh = 0.0;
    bool energy_row = true;                            // impose the area total
    const std::vector<double>* caps_kw = nullptr;      // optional d upper bounds
};

/// Aggregate program over one or two balance areas, optionally coupled by a
/// capacity-limited interchange and optionally constrained by a merged
/// family acting on the sum of the areas' demands.
struct MultiAreaSpec {
    TimeHorizon horizon;
    std::vector<AreaAssemblySpec> areas;
    const ConstraintSet* merged = nullptr;
    double merged_energy_kwh = 0.0;  // total row used when merged family present
    bool merged_energy_row = false;
    double tie_capacity_kw = -1.0;   // >= 0 with two areas; 0 decouples
};

struct MultiAssembly {
    qp::Problem qp;
    double power_scale = 1.0, cost_scale = 1.0;
    int T = 0;
    double step = 1.0;
    int n_areas = 1;
    std::vector<Eigen::Index> d_offset;                 // per area
    std::vector<std::vector<Eigen::Index>> gen_offset;  // [area][gen]
    std::vector<std::vector<Eigen::Index>> epi_offset;  // [area][gen], -1 if none
    Eigen::Index p_offset = -1;
    Eigen::Index balance_row0 = 0;  // balance rows area-major: a*T + t
    std::vector<std::vector<Eigen::Index>> support_row;  // [area][ci], -1 dropped
    std::vector<Eigen::Index> merged_support_row;
    bool trivially_infeasible = false;
    std::string infeasible_reason;
};

/// Detect support/complement pairs whose capacities sum to the family's
/// total energy: both sums are pinned for every feasible profile, so the
/// pair enters the program as one equality row.
inline void find_forced_pairs(const ConstraintSet& cs, double total_energy, uint64_t full_mask,
                              double tol, std::vector<char>& forced,
                              std::vector<std::pair<uint64_t, double>>& forced_rows,
                              bool& infeasible) {
    std::map<uint64_t, size_t> by_support;
    for (size_t ci = 0; ci < cs.constraints.size(); ++ci)
        by_support.emplace(cs.constraints[ci].support.bits(), ci);
    forced.assign(cs.constraints.size(), 0);
    for (size_t ci = 0; ci < cs.constraints.size(); ++ci) {
        const auto& c = cs.constraints[ci];
        const uint64_t comp = ~c.support.bits() & full_mask;
        if (comp == 0 || c.support.bits() > comp) continue;
        auto itc = by_support.find(comp);
        if (itc == by_support.end()) continue;
        const double sum = c.rhs_kwh + cs.constraints[itc->second].rhs_kwh;
        if (sum < total_energy - tol) {
            infeasible = true;
            return;
        }
        if (sum <= total_energy + tol) {
            forced[ci] = 1;
            forced[itc->second] = 1;
            // Pin both window sums; redundant rows are removed later by the
            // rank-revealing presolve, and single-slot pins become fixed
            // variables there.
            forced_rows.emplace_back(c.support.bits(), c.rhs_kwh);
            forced_rows.emplace_back(comp, cs.constraints[itc->second].rhs_kwh);
        }
    }
}

inline MultiAssembly assemble_multi_area(const MultiAreaSpec& spec) {
    spec.horizon.validate();
    const int T = spec.horizon.num_steps;
    const double step = spec.horizon.step_hours;
    const int A = static_cast<int>(spec.areas.size());
    if (A < 1 || A > 2) throw std::invalid_argument("assembly: need one or two areas");
    const bool has_tie = A == 2 && spec.tie_capacity_kw > 0.0;
    const uint64_t full_mask = spec.horizon.full_mask();

    MultiAssembly as;
    as.T = T;
    as.step = step;
    as.n_areas = A;

    double p_scale = 1.0, c_scale = 1.0;
    double total_target = 0.0;
    for (const auto& ar : spec.areas) {
        if (static_cast<int>(ar.inflexible->size()) != T)
            throw std::invalid_argument("assembly: inflexible series length != horizon");
        for (const Generator& g : *ar.generators) {
            g.validate();
            p_scale = std::max(p_scale, g.g_max_kw);
        }
        for (double v : *ar.inflexible) p_scale = std::max(p_scale, std::abs(v));
        total_target += ar.total_energy_kwh;
    }
    p_scale = std::max(p_scale, total_target / (step * T));
    for (const auto& ar : spec.areas)
        for (const Generator& g : *ar.generators) {
            switch (g.cost.kind) {
                case CostFunction::Kind::affine:
                    c_scale = std::max(c_scale, g.cost.b * p_scale);
                    break;
                case CostFunction::Kind::quadratic:
                    c_scale = std::max(c_scale, g.cost.a * p_scale * p_scale + g.cost.b * p_scale);
                    break;
                case CostFunction::Kind::piecewise_linear:
                    if (!g.cost.slopes.empty())
                        c_scale = std::max(c_scale, g.cost.slopes.back() * p_scale);
                    break;
            }
        }
    as.power_scale = p_scale;
    as.cost_scale = c_scale;

    // Feasibility pre-checks on generation ranges.
    std::vector<double> gmax_sum(static_cast<size_t>(A), 0.0);
    for (int a = 0; a < A; ++a)
        for (const Generator& g : *spec.areas[static_cast<size_t>(a)].generators)
            gmax_sum[static_cast<size_t>(a)] += g.g_max_kw;
    for (int t = 0; t < T; ++t) {
        double total_d = 0.0, total_g = 0.0;
        for (int a = 0; a < A; ++a) {
            const double dem = (*spec.areas[static_cast<size_t>(a)].inflexible)[static_cast<size_t>(t)];
            total_d += dem;
            total_g += gmax_sum[static_cast<size_t>(a)];
            const double import_cap = has_tie ? spec.tie_capacity_kw : 0.0;
            if (dem > gmax_sum[static_cast<size_t>(a)] + import_cap + 1e-9 * p_scale) {
                as.trivially_infeasible = true;
                as.infeasible_reason = "area generation plus imports below inflexible demand";
                return as;
            }
        }
        if (total_d > total_g + 1e-9 * p_scale) {
            as.trivially_infeasible = true;
            as.infeasible_reason = "generation capacity below peak inflexible demand";
            return as;
        }
    }

    // Whole-horizon capacity must cover each imposed energy total; forced
    // complement pairs become equalities.
    const double e_tol_global = 1e-9 * std::max(1.0, total_target);
    std::vector<std::vector<char>> forced(static_cast<size_t>(A));
    std::vector<std::vector<std::pair<uint64_t, double>>> forced_rows(static_cast<size_t>(A));
    std::vector<char> merged_forced;
    std::vector<std::pair<uint64_t, double>> merged_forced_rows;
    for (int a = 0; a < A; ++a) {
        const auto& ar = spec.areas[static_cast<size_t>(a)];
        if (!ar.constraints) continue;
        for (const auto& c : ar.constraints->constraints)
            if (c.support.bits() == full_mask && ar.energy_row &&
                c.rhs_kwh < ar.total_energy_kwh - e_tol_global) {
                as.trivially_infeasible = true;
                as.infeasible_reason = "whole-horizon capacity below area target energy";
                return as;
            }
        bool inf = false;
        if (ar.energy_row)
            find_forced_pairs(*ar.constraints, ar.total_energy_kwh, full_mask, e_tol_global,
                              forced[static_cast<size_t>(a)], forced_rows[static_cast<size_t>(a)],
                              inf);
        else
            forced[static_cast<size_t>(a)].assign(ar.constraints->constraints.size(), 0);
        if (inf) {
            as.trivially_infeasible = true;
            as.infeasible_reason = "complement capacities sum below area target energy";
            return as;
        }
    }
    if (spec.merged) {
        for (const auto& c : spec.merged->constraints)
            if (c.support.bits() == full_mask && spec.merged_energy_row &&
                c.rhs_kwh < spec.merged_energy_kwh - e_tol_global) {
                as.trivially_infeasible = true;
                as.infeasible_reason = "whole-horizon capacity below merged target energy";
                return as;
            }
        bool inf = false;
        if (spec.merged_energy_row)
            find_forced_pairs(*spec.merged, spec.merged_energy_kwh, full_mask, e_tol_global,
                              merged_forced, merged_forced_rows, inf);
        else
            merged_forced.assign(spec.merged->constraints.size(), 0);
        if (inf) {
            as.trivially_infeasible = true;
            as.infeasible_reason = "complement capacities sum below merged target energy";
            return as;
        }
    }

    // Variable layout: per-area d blocks, per-area generator blocks, tie,
    // epigraph blocks for piecewise-linear costs.
    Eigen::Index n = 0;
    as.d_offset.resize(static_cast<size_t>(A));
    as.gen_offset.resize(static_cast<size_t>(A));
    as.epi_offset.resize(static_cast<size_t>(A));
    for (int a = 0; a < A; ++a) {
        as.d_offset[static_cast<size_t>(a)] = n;
        n += T;
    }
    for (int a = 0; a < A; ++a) {
        const auto& gens = *spec.areas[static_cast<size_t>(a)].generators;
        as.gen_offset[static_cast<size_t>(a)].resize(gens.size());
        as.epi_offset[static_cast<size_t>(a)].assign(gens.size(), -1);
        for (size_t i = 0; i < gens.size(); ++i) {
            as.gen_offset[static_cast<size_t>(a)][i] = n;
            n += T;
        }
    }
    if (has_tie) {
        as.p_offset = n;
        n += T;
    }
    for (int a = 0; a < A; ++a) {
        const auto& gens = *spec.areas[static_cast<size_t>(a)].generators;
        for (size_t i = 0; i < gens.size(); ++i)
            if (gens[i].cost.kind == CostFunction::Kind::piecewise_linear) {
                as.epi_offset[static_cast<size_t>(a)][i] = n;
                n += T;
            }
    }

    qp::Problem& q = as.qp;
    const double inf = std::numeric_limits<double>::infinity();
    q.q = Eigen::VectorXd::Zero(n);
    q.c = Eigen::VectorXd::Zero(n);
    q.lb = Eigen::VectorXd::Constant(n, -inf);
    q.ub = Eigen::VectorXd::Constant(n, inf);

    for (int a = 0; a < A; ++a) {
        const auto& ar = spec.areas[static_cast<size_t>(a)];
        const std::vector<double>* caps =
            ar.caps_kw ? ar.caps_kw
                       : (ar.constraints && ar.constraints->per_slot_caps_kw
                              ? &*ar.constraints->per_slot_caps_kw
                              : nullptr);
        for (int t = 0; t < T; ++t) {
            const Eigen::Index v = as.d_offset[static_cast<size_t>(a)] + t;
            q.lb[v] = 0.0;
            if (caps) q.ub[v] = (*caps)[static_cast<size_t>(t)] / p_scale;
        }
        const auto& gens = *ar.generators;
        for (size_t i = 0; i < gens.size(); ++i) {
            for (int t = 0; t < T; ++t) {
                const Eigen::Index v = as.gen_offset[static_cast<size_t>(a)][i] + t;
                q.lb[v] = gens[i].g_min_kw / p_scale;
                q.ub[v] = gens[i].g_max_kw / p_scale;
                switch (gens[i].cost.kind) {
                    case CostFunction::Kind::affine:
                        q.c[v] = gens[i].cost.b * step * p_scale / c_scale;
                        break;
                    case CostFunction::Kind::quadratic:
                        q.q[v] = 2.0 * gens[i].cost.a * step * p_scale * p_scale / c_scale;
                        q.c[v] = gens[i].cost.b * step * p_scale / c_scale;
                        break;
                    case CostFunction::Kind::piecewise_linear:
                        q.c[as.epi_offset[static_cast<size_t>(a)][i] + t] = step;
                        break;
                }
            }
        }
    }
    if (has_tie)
        for (int t = 0; t < T; ++t) {
            q.lb[as.p_offset + t] = -spec.tie_capacity_kw / p_scale;
            q.ub[as.p_offset + t] = spec.tie_capacity_kw / p_scale;
        }

    // Equality rows: balances, energy totals, pinned window sums.
    Eigen::Index me = static_cast<Eigen::Index>(A) * T;
    for (int a = 0; a < A; ++a)
        if (spec.areas[static_cast<size_t>(a)].energy_row) ++me;
    if (spec.merged && spec.merged_energy_row) ++me;
    for (int a = 0; a < A; ++a) me += static_cast<Eigen::Index>(forced_rows[static_cast<size_t>(a)].size());
    me += static_cast<Eigen::Index>(merged_forced_rows.size());

    q.A = Eigen::MatrixXd::Zero(me, n);
    q.b = Eigen::VectorXd::Zero(me);
    as.balance_row0 = 0;
    for (int a = 0; a < A; ++a)
        for (int t = 0; t < T; ++t) {
            const Eigen::Index r = static_cast<Eigen::Index>(a) * T + t;
            q.A(r, as.d_offset[static_cast<size_t>(a)] + t) = -1.0;
            const auto& gens = *spec.areas[static_cast<size_t>(a)].generators;
            for (size_t i = 0; i < gens.size(); ++i)
                q.A(r, as.gen_offset[static_cast<size_t>(a)][i] + t) = 1.0;
            if (has_tie) q.A(r, as.p_offset + t) = a == 0 ? 1.0 : -1.0;
            q.b[r] = (*spec.areas[static_cast<size_t>(a)].inflexible)[static_cast<size_t>(t)] / p_scale;
        }
    Eigen::Index row = static_cast<Eigen::Index>(A) * T;
    for (int a = 0; a < A; ++a) {
        const auto& ar = spec.areas[static_cast<size_t>(a)];
        if (!ar.energy_row) continue;
        for (int t = 0; t < T; ++t) q.A(row, as.d_offset[static_cast<size_t>(a)] + t) = step;
        q.b[row] = ar.total_energy_kwh / p_scale;
        ++row;
    }
    if (spec.merged && spec.merged_energy_row) {
        for (int a = 0; a < A; ++a)
            for (int t = 0; t < T; ++t) q.A(row, as.d_offset[static_cast<size_t>(a)] + t) = step;
        q.b[row] = spec.merged_energy_kwh / p_scale;
        ++row;
    }
    for (int a = 0; a < A; ++a)
        for (const auto& [mask, rhs] : forced_rows[static_cast<size_t>(a)]) {
            TimeSet(mask).for_each(
                [&](int slot) { q.A(row, as.d_offset[static_cast<size_t>(a)] + slot - 1) = step; });
            q.b[row] = rhs / p_scale;
            ++row;
        }
    for (const auto& [mask, rhs] : merged_forced_rows) {
        TimeSet(mask).for_each([&](int slot) {
            for (int a = 0; a < A; ++a) q.A(row, as.d_offset[static_cast<size_t>(a)] + slot - 1) = step;
        });
        q.b[row] = rhs / p_scale;
        ++row;
    }

    // Inequality rows: per-area support rows, merged support rows, epigraph.
    Eigen::Index mg = 0;
    as.support_row.resize(static_cast<size_t>(A));
    for (int a = 0; a < A; ++a) {
        const auto& ar = spec.areas[static_cast<size_t>(a)];
        if (!ar.constraints) continue;
        as.support_row[static_cast<size_t>(a)].assign(ar.constraints->constraints.size(), -1);
        for (size_t ci = 0; ci < ar.constraints->constraints.size(); ++ci) {
            const auto& c = ar.constraints->constraints[ci];
            if (forced[static_cast<size_t>(a)][ci]) continue;
            if (c.support.bits() == full_mask && ar.energy_row &&
                std::abs(c.rhs_kwh - ar.total_energy_kwh) <= e_tol_global)
                continue;
            as.support_row[static_cast<size_t>(a)][ci] = mg++;
        }
    }
    if (spec.merged) {
        as.merged_support_row.assign(spec.merged->constraints.size(), -1);
        for (size_t ci = 0; ci < spec.merged->constraints.size(); ++ci) {
            const auto& c = spec.merged->constraints[ci];
            if (!merged_forced.empty() && merged_forced[ci]) continue;
            if (c.support.bits() == full_mask && spec.merged_energy_row &&
                std::abs(c.rhs_kwh - spec.merged_energy_kwh) <= e_tol_global)
                continue;
            as.merged_support_row[ci] = mg++;
        }
    }
    Eigen::Index epi_rows = 0;
    for (int a = 0; a < A; ++a) {
        const auto& gens = *spec.areas[static_cast<size_t>(a)].generators;
        for (size_t i = 0; i < gens.size(); ++i)
            if (as.epi_offset[static_cast<size_t>(a)][i] >= 0)
                epi_rows += static_cast<Eigen::Index>(gens[i].cost.slopes.size()) * T;
    }
    q.G = Eigen::MatrixXd::Zero(mg + epi_rows, n);
    q.h = Eigen::VectorXd::Zero(mg + epi_rows);
    for (int a = 0; a < A; ++a) {
        const auto& ar = spec.areas[static_cast<size_t>(a)];
        if (!ar.constraints) continue;
        for (size_t ci = 0; ci < ar.constraints->constraints.size(); ++ci) {
            const Eigen::Index r = as.support_row[static_cast<size_t>(a)][ci];
            if (r < 0) continue;
            const auto& c = ar.constraints->constraints[ci];
            c.support.for_each(
                [&](int slot) { q.G(r, as.d_offset[static_cast<size_t>(a)] + slot - 1) = step; });
            q.h[r] = c.rhs_kwh / p_scale;
        }
    }
    if (spec.merged)
        for (size_t ci = 0; ci < spec.merged->constraints.size(); ++ci) {
            const Eigen::Index r = as.merged_support_row[ci];
            if (r < 0) continue;
            const auto& c = spec.merged->constraints[ci];
            c.support.for_each([&](int slot) {
                for (int a = 0; a < A; ++a)
                    q.G(r, as.d_offset[static_cast<size_t>(a)] + slot - 1) = step;
            });
            q.h[r] = c.rhs_kwh / p_scale;
        }
    row = mg;
    for (int a = 0; a < A; ++a) {
        const auto& gens = *spec.areas[static_cast<size_t>(a)].generators;
        for (size_t i = 0; i < gens.size(); ++i) {
            if (as.epi_offset[static_cast<size_t>(a)][i] < 0) continue;
            const CostFunction& f = gens[i].cost;
            for (int t = 0; t < T; ++t) {
                for (size_t seg = 0; seg < f.slopes.size(); ++seg) {
                    const double x0 = seg == 0 ? 0.0 : f.breakpoints[seg - 1];
                    const double v0 = f.value(x0);
                    // epigraph: z >= v0 + slope*(g - x0)
                    q.G(row, as.gen_offset[static_cast<size_t>(a)][i] + t) =
                        f.slopes[seg] * p_scale / c_scale;
                    q.G(row, as.epi_offset[static_cast<size_t>(a)][i] + t) = -1.0;
                    q.h[row] = (f.slopes[seg] * x0 - v0) / c_scale;
                    ++row;
                }
            }
        }
    }
    return as;
}

}  // namespace detail

/// Solve a problem whose flexible demand is the aggregate constraint model.
inline Solution solve_aggregate(const UcProblem& prob, const SolveOptions& opts = {}) {
    if (!std::holds_alternative<AggregateModel>(prob.fleet_model))
        throw std::invalid_argument("solve_aggregate: problem does not carry an aggregate model");
    const auto& model = std::get<AggregateModel>(prob.fleet_model);

    detail::MultiAreaSpec spec;
    spec.horizon = prob.horizon;
    spec.areas.push_back(detail::AreaAssemblySpec{&prob.generators, &prob.inflexible_kw,
                                                  &model.constraints, model.total_energy_kwh,
                                                  true, nullptr});
    detail::MultiAssembly as = detail::assemble_multi_area(spec);

    Solution sol;
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

    const int T = as.T;
    const double P0 = as.power_scale, C0 = as.cost_scale;
    const size_t n_gens = prob.generators.size();
    sol.objective = res.objective * C0;
    sol.d_kw.resize(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) sol.d_kw[static_cast<size_t>(t)] = res.x[as.d_offset[0] + t] * P0;
    sol.g_kw.assign(n_gens, std::vector<double>(static_cast<size_t>(T)));
    for (size_t i = 0; i < n_gens; ++i)
        for (int t = 0; t < T; ++t)
            sol.g_kw[i][static_cast<size_t>(t)] = res.x[as.gen_offset[0][i] + t] * P0;
    sol.lambda.resize(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
        sol.lambda[static_cast<size_t>(t)] = -res.y[as.balance_row0 + t] * C0 / (P0 * as.step);
    sol.mu.assign(model.constraints.constraints.size(), 0.0);
    for (size_t ci = 0; ci < model.constraints.constraints.size(); ++ci)
        if (as.support_row[0][ci] >= 0) sol.mu[ci] = res.z[as.support_row[0][ci]] * C0 / P0;
    if (model.constraints.per_slot_caps_kw) {
        sol.cap_mu.resize(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t)
            sol.cap_mu[static_cast<size_t>(t)] = res.zu[as.d_offset[0] + t] * C0 / P0;
    }
    sol.kkt_residual = res.kkt_residual;
    sol.raw = detail::RawIterates{res.x, res.y, res.z, res.zl, res.zu, P0, C0, false};
    return sol;
}

/// Marginal price series of an optimal solution (balance duals).
inline const std::vector<double>& marginal_prices(const Solution& sol) {
    if (sol.status != SolveStatus::optimal)
        throw std::logic_error("marginal_prices: solution is not optimal");
    return sol.lambda;
}

}  // namespace flexfleet

#include "flexfleet/fleet_qp.hpp"

namespace flexfleet {

/// Solve a problem whose flexible demand is kept device by device.
inline Solution solve_per_device(const UcProblem& prob, const SolveOptions& opts = {}) {
    if (!std::holds_alternative<PerDeviceModel>(prob.fleet_model))
        throw std::invalid_argument("solve_per_device: problem does not carry a per-device model");
    const auto& model = std::get<PerDeviceModel>(prob.fleet_model);

    fleet_qp::Problem fp;
    fp.horizon = prob.horizon;
    fp.areas.push_back(fleet_qp::AreaInput{&model.fleet, prob.generators, prob.inflexible_kw});
    fleet_qp::Result res = fleet_qp::solve(fp, opts);

    Solution sol;
    sol.status = res.status;
    sol.iterations = res.iterations;
    if (res.status != SolveStatus::optimal) return sol;
    sol.objective = res.objective;
    sol.d_kw = res.d_kw[0];
    sol.g_kw = res.g_kw[0];
    if (opts.want_schedules) sol.u_kw = res.u_kw[0];
    sol.lambda = res.lambda[0];
    sol.kkt_residual = res.kkt_residual;
    sol.raw.x = res.raw_x;
    sol.raw.y.resize(res.raw_yb.size() + res.raw_ye.size());
    if (sol.raw.y.size()) sol.raw.y << res.raw_yb, res.raw_ye;
    sol.raw.zl = res.raw_zl;
    sol.raw.zu = res.raw_zu;
    sol.raw.power_scale = res.power_scale;
    sol.raw.cost_scale = res.cost_scale;
    sol.raw.per_device = true;
    return sol;
}

/// Dispatch on the fleet model carried by the problem.
inline Solution solve(const UcProblem& prob, const SolveOptions& opts = {}) {
    if (std::holds_alternative<PerDeviceModel>(prob.fleet_model))
        return solve_per_device(prob, opts);
    return solve_aggregate(prob, opts);
}

/// Re-evaluates the worst KKT violation of a reported-optimal solution from
/// the problem data and the stored iterates; does not depend on how the
/// solution was produced.
inline double kkt_residual(const UcProblem& prob, const Solution& sol) {
    if (sol.status != SolveStatus::optimal)
        throw std::logic_error("kkt_residual: solution is not optimal");
    if (sol.raw.per_device) {
        const auto& model = std::get<PerDeviceModel>(prob.fleet_model);
        fleet_qp::Problem fp;
        fp.horizon = prob.horizon;
        fp.areas.push_back(fleet_qp::AreaInput{&model.fleet, prob.generators, prob.inflexible_kw});
        fleet_qp::detail::Model fm = fleet_qp::detail::build_model(fp);
        const Eigen::Index mb = fm.m_b;
        Eigen::VectorXd yb = sol.raw.y.head(mb);
        Eigen::VectorXd ye = sol.raw.y.tail(sol.raw.y.size() - mb);
        return fleet_qp::evaluate_kkt(fm, sol.raw.x, yb, ye, sol.raw.zl, sol.raw.zu);
    }
    const auto& model = std::get<AggregateModel>(prob.fleet_model);
    detail::MultiAreaSpec spec;
    spec.horizon = prob.horizon;
    spec.areas.push_back(detail::AreaAssemblySpec{&prob.generators, &prob.inflexible_kw,
                                                  &model.constraints, model.total_energy_kwh,
                                                  true, nullptr});
    detail::MultiAssembly as = detail::assemble_multi_area(spec);
    return qp::kkt_residual(as.qp, sol.raw.x, sol.raw.y, sol.raw.z, sol.raw.zl, sol.raw.zu);
}

}  // namespace flexfleet
