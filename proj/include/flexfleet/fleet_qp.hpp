#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "flexfleet/cost.hpp"
#include "flexfleet/fleet.hpp"

namespace flexfleet::fleet_qp {

/// One bus of the balance-coupled dispatch problem.
struct AreaInput {
    const Fleet* fleet = nullptr;  // optional
    std::vector<Generator> generators;
    std::vector<double> inflexible_kw;
};

/// Dispatch with every device kept as an individual decision block. One or
/// two areas; with two areas an interchange variable bounded by
/// tie_capacity_kw couples the balances (zero capacity decouples them).
struct Problem {
    TimeHorizon horizon;
    std::vector<AreaInput> areas;
    double tie_capacity_kw = 0.0;  // used only with two areas
};

struct Result {
    SolveStatus status = SolveStatus::max_iterations;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> d_kw;                    // [area][t]
    std::vector<std::vector<std::vector<double>>> g_kw;       // [area][gen][t]
    std::vector<std::vector<double>> lambda;                  // [area][t], currency/kWh
    std::vector<double> p_kw;                                 // tie flow, empty if none
    std::vector<std::vector<std::vector<double>>> u_kw;       // [area][device][t], optional
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double gap = 0.0;
    // Final iterates in solver coordinates, for independent KKT checks.
    Eigen::VectorXd raw_x, raw_yb, raw_ye, raw_zl, raw_zu;
    double power_scale = 1.0, cost_scale = 1.0;
};

namespace detail {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ActiveDevice {
    int area = 0;
    size_t index = 0;           // index into the area's fleet
    double weight = 0.0;        // p_max / power_scale
    double quota = 0.0;         // e_target / (p_max * step), in (0, n_slots)
    std::vector<int> slots;     // 0-based
    Eigen::Index var0 = 0;
};

struct ActiveGen {
    int area = 0;
    size_t index = 0;
    double lo = 0.0, hi = 0.0;  // scaled bounds
    double q = 0.0, c = 0.0;    // scaled objective coefficients
    Eigen::Index var0 = 0;
};

struct Model {
    int T = 0;
    double step = 1.0;
    int n_areas = 1;
    double power_scale = 1.0, cost_scale = 1.0;
    bool has_tie = false;
    double tie_scaled = 0.0;
    std::vector<ActiveDevice> devices;
    std::vector<ActiveGen> gens;
    Eigen::Index n_u = 0, n = 0;
    Eigen::Index p_var0 = -1;
    Eigen::Index m_b = 0;  // balance rows = n_areas * T
    std::vector<double> rhs_balance;          // scaled
    std::vector<char> balance_active;         // rows with variable support
    std::vector<std::vector<double>> fixed_u; // [area] flattened device*T fixed part, kW
    std::vector<std::vector<double>> fixed_d; // [area][t] fixed flexible demand, kW
    std::vector<std::vector<double>> fixed_g; // [area][gen] fixed output kW (NaN if free)
    double objective_offset = 0.0;            // currency
    bool trivially_infeasible = false;
};

inline Model build_model(const Problem& prob) {
    prob.horizon.validate();
    const int T = prob.horizon.num_steps;
    const double step = prob.horizon.step_hours;
    const int A = static_cast<int>(prob.areas.size());
    if (A < 1 || A > 2) throw std::invalid_argument("fleet_qp: need one or two areas");

    Model m;
    m.T = T;
    m.step = step;
    m.n_areas = A;
    m.has_tie = (A == 2) && prob.tie_capacity_kw > 0.0;

    double p_scale = 1.0;
    for (const AreaInput& ar : prob.areas) {
        if (static_cast<int>(ar.inflexible_kw.size()) != T)
            throw std::invalid_argument("fleet_qp: inflexible series length != horizon");
        for (const Generator& g : ar.generators) {
            g.validate();
            p_scale = std::max(p_scale, g.g_max_kw);
        }
        for (double v : ar.inflexible_kw) p_scale = std::max(p_scale, std::abs(v));
        if (ar.fleet && ar.fleet->horizon().num_steps != T)
            throw std::invalid_argument("fleet_qp: fleet horizon mismatch");
    }
    double c_scale = 1.0;
    for (const AreaInput& ar : prob.areas)
        for (const Generator& g : ar.generators) {
            if (g.cost.kind == CostFunction::Kind::piecewise_linear)
                throw std::invalid_argument(
                    "fleet_qp: piecewise-linear costs are not supported on the per-device path");
            c_scale = std::max(c_scale, g.cost.a * p_scale * p_scale + g.cost.b * p_scale);
        }
    m.power_scale = p_scale;
    m.cost_scale = c_scale;
    m.tie_scaled = m.has_tie ? prob.tie_capacity_kw / p_scale : 0.0;

    // Fold devices whose schedule is forced (zero target, saturated window,
    // single slot) into per-area fixed demand.
    m.fixed_d.assign(static_cast<size_t>(A), std::vector<double>(static_cast<size_t>(T), 0.0));
    for (int a = 0; a < A; ++a) {
        const Fleet* fleet = prob.areas[static_cast<size_t>(a)].fleet;
        if (!fleet) continue;
        for (size_t j = 0; j < fleet->size(); ++j) {
            const Device& dev = fleet->devices()[j];
            const double e = fleet->effective_target(j);
            const int n_slots = dev.availability.count();
            const double full_e = dev.p_max_kw * step * n_slots;
            const double tol = 1e-12 * std::max(1.0, full_e);
            if (e <= tol) continue;  // never charges
            if (e >= full_e - tol) {
                dev.availability.for_each([&](int slot) {
                    m.fixed_d[static_cast<size_t>(a)][static_cast<size_t>(slot - 1)] += dev.p_max_kw;
                });
                continue;
            }
            if (n_slots == 1) {
                const int slot = dev.availability.slots()[0];
                m.fixed_d[static_cast<size_t>(a)][static_cast<size_t>(slot - 1)] += e / step;
                continue;
            }
            ActiveDevice ad;
            ad.area = a;
            ad.index = j;
            ad.weight = dev.p_max_kw / p_scale;
            ad.quota = e / (dev.p_max_kw * step);
            dev.availability.for_each([&](int slot) { ad.slots.push_back(slot - 1); });
            m.devices.push_back(std::move(ad));
        }
    }

    // Fold pinned generators into fixed supply.
    m.fixed_g.assign(static_cast<size_t>(A), {});
    std::vector<std::vector<double>> fixed_supply(
        static_cast<size_t>(A), std::vector<double>(static_cast<size_t>(T), 0.0));
    for (int a = 0; a < A; ++a) {
        const auto& gens = prob.areas[static_cast<size_t>(a)].generators;
        m.fixed_g[static_cast<size_t>(a)].assign(gens.size(),
                                                 std::numeric_limits<double>::quiet_NaN());
        for (size_t i = 0; i < gens.size(); ++i) {
            const Generator& g = gens[i];
            if (g.g_max_kw - g.g_min_kw <= 1e-12 * std::max(1.0, g.g_max_kw)) {
                const double gv = 0.5 * (g.g_min_kw + g.g_max_kw);
                m.fixed_g[static_cast<size_t>(a)][i] = gv;
                for (int t = 0; t < T; ++t) fixed_supply[static_cast<size_t>(a)][static_cast<size_t>(t)] += gv;
                m.objective_offset += step * g.cost.value(gv) * T;
                continue;
            }
            ActiveGen ag;
            ag.area = a;
            ag.index = i;
            ag.lo = g.g_min_kw / p_scale;
            ag.hi = g.g_max_kw / p_scale;
            ag.q = 2.0 * g.cost.a * step * p_scale * p_scale / c_scale;
            ag.c = g.cost.b * step * p_scale / c_scale;
            m.gens.push_back(std::move(ag));
        }
    }

    // Variable layout: device blocks, generator blocks, tie block.
    Eigen::Index n = 0;
    for (ActiveDevice& d : m.devices) {
        d.var0 = n;
        n += static_cast<Eigen::Index>(d.slots.size());
    }
    m.n_u = n;
    for (ActiveGen& g : m.gens) {
        g.var0 = n;
        n += T;
    }
    if (m.has_tie) {
        m.p_var0 = n;
        n += T;
    }
    m.n = n;

    m.m_b = static_cast<Eigen::Index>(A) * T;
    m.rhs_balance.assign(static_cast<size_t>(m.m_b), 0.0);
    m.balance_active.assign(static_cast<size_t>(m.m_b), 0);
    for (int a = 0; a < A; ++a)
        for (int t = 0; t < T; ++t) {
            const double rhs = prob.areas[static_cast<size_t>(a)].inflexible_kw[static_cast<size_t>(t)] +
                               m.fixed_d[static_cast<size_t>(a)][static_cast<size_t>(t)] -
                               fixed_supply[static_cast<size_t>(a)][static_cast<size_t>(t)];
            m.rhs_balance[static_cast<size_t>(a * T + t)] = rhs / p_scale;
        }
    for (const ActiveDevice& d : m.devices)
        for (int s : d.slots) m.balance_active[static_cast<size_t>(d.area * T + s)] = 1;
    for (const ActiveGen& g : m.gens)
        for (int t = 0; t < T; ++t) m.balance_active[static_cast<size_t>(g.area * T + t)] = 1;
    if (m.has_tie)
        for (int t = 0; t < T; ++t) {
            m.balance_active[static_cast<size_t>(t)] = 1;
            m.balance_active[static_cast<size_t>(T + t)] = 1;
        }

    // Rows without any variable must balance on their own.
    for (Eigen::Index r = 0; r < m.m_b; ++r)
        if (!m.balance_active[static_cast<size_t>(r)] &&
            std::abs(m.rhs_balance[static_cast<size_t>(r)]) > 1e-9)
            m.trivially_infeasible = true;

    // Aggregate generation must be able to meet peak aggregate demand.
    double gmax_sum = 0.0;
    for (const AreaInput& ar : prob.areas)
        for (const Generator& g : ar.generators) gmax_sum += g.g_max_kw;
    for (int t = 0; t < T; ++t) {
        double demand = 0.0;
        for (int a = 0; a < A; ++a)
            demand += prob.areas[static_cast<size_t>(a)].inflexible_kw[static_cast<size_t>(t)] +
                      m.fixed_d[static_cast<size_t>(a)][static_cast<size_t>(t)];
        if (demand > gmax_sum + 1e-9 * p_scale) m.trivially_infeasible = true;
    }
    return m;
}

/// Mehrotra iteration specialised to the balance-coupled block structure:
/// the Newton systems are reduced onto the balance duals by eliminating the
/// diagonal variable block and the per-device energy rows.
struct Ipm {
    const Model& m;
    VectorXd lb, ub, q, c;
    std::vector<Eigen::Index> dev_row;  // energy-row index per device

    explicit Ipm(const Model& model) : m(model) {
        const Eigen::Index n = m.n;
        lb.resize(n);
        ub.resize(n);
        q = VectorXd::Zero(n);
        c = VectorXd::Zero(n);
        for (const ActiveDevice& d : m.devices)
            for (size_t k = 0; k < d.slots.size(); ++k) {
                lb[d.var0 + static_cast<Eigen::Index>(k)] = 0.0;
                ub[d.var0 + static_cast<Eigen::Index>(k)] = 1.0;
            }
        for (const ActiveGen& g : m.gens)
            for (int t = 0; t < m.T; ++t) {
                lb[g.var0 + t] = g.lo;
                ub[g.var0 + t] = g.hi;
                q[g.var0 + t] = g.q;
                c[g.var0 + t] = g.c;
            }
        if (m.has_tie)
            for (int t = 0; t < m.T; ++t) {
                lb[m.p_var0 + t] = -m.tie_scaled;
                ub[m.p_var0 + t] = m.tie_scaled;
            }
    }

    // B x: balance-row activity of x (without the fixed rhs).
    void apply_balance(const VectorXd& x, VectorXd& out) const {
        out.setZero();
        for (const ActiveDevice& d : m.devices)
            for (size_t k = 0; k < d.slots.size(); ++k)
                out[d.area * m.T + d.slots[k]] -= d.weight * x[d.var0 + static_cast<Eigen::Index>(k)];
        for (const ActiveGen& g : m.gens)
            for (int t = 0; t < m.T; ++t) out[g.area * m.T + t] += x[g.var0 + t];
        if (m.has_tie)
            for (int t = 0; t < m.T; ++t) {
                out[t] += x[m.p_var0 + t];
                out[m.T + t] -= x[m.p_var0 + t];
            }
    }

    // x += B' lam + E' nu
    void add_adjoint(const VectorXd& lam, const VectorXd& nu, VectorXd& x) const {
        for (size_t j = 0; j < m.devices.size(); ++j) {
            const ActiveDevice& d = m.devices[j];
            for (size_t k = 0; k < d.slots.size(); ++k)
                x[d.var0 + static_cast<Eigen::Index>(k)] +=
                    -d.weight * lam[d.area * m.T + d.slots[k]] + nu[static_cast<Eigen::Index>(j)];
        }
        for (const ActiveGen& g : m.gens)
            for (int t = 0; t < m.T; ++t) x[g.var0 + t] += lam[g.area * m.T + t];
        if (m.has_tie)
            for (int t = 0; t < m.T; ++t) x[m.p_var0 + t] += lam[t] - lam[m.T + t];
    }

    void device_sums(const VectorXd& x, VectorXd& out) const {
        out.resize(static_cast<Eigen::Index>(m.devices.size()));
        for (size_t j = 0; j < m.devices.size(); ++j) {
            const ActiveDevice& d = m.devices[j];
            double acc = 0.0;
            for (size_t k = 0; k < d.slots.size(); ++k)
                acc += x[d.var0 + static_cast<Eigen::Index>(k)];
            out[static_cast<Eigen::Index>(j)] = acc;
        }
    }
};

}  // namespace detail

/// Normalized KKT violation of a per-device solve at the stored iterates.
inline double evaluate_kkt(const detail::Model& m, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y_b, const Eigen::VectorXd& y_e,
                           const Eigen::VectorXd& zl, const Eigen::VectorXd& zu) {
    detail::Ipm ipm(m);
    const Eigen::Index n = m.n;
    Eigen::VectorXd grad = ipm.q.cwiseProduct(x) + ipm.c - zl + zu;
    ipm.add_adjoint(y_b, y_e, grad);
    double res = n ? grad.cwiseAbs().maxCoeff() : 0.0;

    Eigen::VectorXd bx(m.m_b);
    ipm.apply_balance(x, bx);
    for (Eigen::Index r = 0; r < m.m_b; ++r)
        if (m.balance_active[static_cast<size_t>(r)])
            res = std::max(res, std::abs(bx[r] - m.rhs_balance[static_cast<size_t>(r)]));
    Eigen::VectorXd sums;
    ipm.device_sums(x, sums);
    for (size_t j = 0; j < m.devices.size(); ++j)
        res = std::max(res, std::abs(sums[static_cast<Eigen::Index>(j)] - m.devices[j].quota));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sl = x[i] - ipm.lb[i], su = ipm.ub[i] - x[i];
        res = std::max({res, -sl, -su, -zl[i], -zu[i], std::abs(zl[i] * sl), std::abs(zu[i] * su)});
    }
    return res;
}

inline Result solve(const Problem& prob, const SolveOptions& opts = {}) {
    using detail::MatrixXd;
    using detail::VectorXd;
    detail::Model m = detail::build_model(prob);
    const int T = m.T, A = m.n_areas;

    Result out;
    if (m.trivially_infeasible) {
        out.status = SolveStatus::infeasible;
        return out;
    }

    const Eigen::Index n = m.n;
    const Eigen::Index mb = m.m_b;
    const Eigen::Index nd = static_cast<Eigen::Index>(m.devices.size());
    detail::Ipm ipm(m);

    auto extract = [&](const VectorXd& x, const VectorXd& y_b, const VectorXd& y_e,
                       const VectorXd& zl_v, const VectorXd& zu_v, double scaled_obj, int iters,
                       double kkt, double gap) {
        out.status = SolveStatus::optimal;
        out.iterations = iters;
        out.gap = gap;
        out.kkt_residual = kkt;
        out.raw_x = x;
        out.raw_yb = y_b;
        out.raw_ye = y_e;
        out.raw_zl = zl_v;
        out.raw_zu = zu_v;
        out.power_scale = m.power_scale;
        out.cost_scale = m.cost_scale;
        const double P0 = m.power_scale, C0 = m.cost_scale;
        out.objective = scaled_obj * C0 + m.objective_offset;
        out.d_kw.assign(static_cast<size_t>(A), std::vector<double>(static_cast<size_t>(T), 0.0));
        for (int a = 0; a < A; ++a)
            for (int t = 0; t < T; ++t)
                out.d_kw[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                    m.fixed_d[static_cast<size_t>(a)][static_cast<size_t>(t)];
        for (const auto& d : m.devices)
            for (size_t k = 0; k < d.slots.size(); ++k)
                out.d_kw[static_cast<size_t>(d.area)][static_cast<size_t>(d.slots[k])] +=
                    x[d.var0 + static_cast<Eigen::Index>(k)] * d.weight * P0;
        out.g_kw.resize(static_cast<size_t>(A));
        for (int a = 0; a < A; ++a) {
            const auto& gens = prob.areas[static_cast<size_t>(a)].generators;
            out.g_kw[static_cast<size_t>(a)].assign(gens.size(),
                                                    std::vector<double>(static_cast<size_t>(T), 0.0));
            for (size_t i = 0; i < gens.size(); ++i) {
                const double fg = m.fixed_g[static_cast<size_t>(a)][i];
                if (!std::isnan(fg))
                    for (int t = 0; t < T; ++t)
                        out.g_kw[static_cast<size_t>(a)][i][static_cast<size_t>(t)] = fg;
            }
        }
        for (const auto& g : m.gens)
            for (int t = 0; t < T; ++t)
                out.g_kw[static_cast<size_t>(g.area)][g.index][static_cast<size_t>(t)] =
                    x[g.var0 + t] * P0;
        out.lambda.assign(static_cast<size_t>(A), std::vector<double>(static_cast<size_t>(T), 0.0));
        for (int a = 0; a < A; ++a)
            for (int t = 0; t < T; ++t)
                out.lambda[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                    -y_b[a * T + t] * C0 / (P0 * m.step);
        if (m.has_tie) {
            out.p_kw.resize(static_cast<size_t>(T));
            for (int t = 0; t < T; ++t) out.p_kw[static_cast<size_t>(t)] = x[m.p_var0 + t] * P0;
        }
        if (opts.want_schedules) {
            out.u_kw.resize(static_cast<size_t>(A));
            for (int a = 0; a < A; ++a) {
                const Fleet* fleet = prob.areas[static_cast<size_t>(a)].fleet;
                const size_t N = fleet ? fleet->size() : 0;
                out.u_kw[static_cast<size_t>(a)].assign(N,
                                                        std::vector<double>(static_cast<size_t>(T), 0.0));
                if (!fleet) continue;
                for (size_t j = 0; j < N; ++j) {
                    const Device& dev = fleet->devices()[j];
                    const double e = fleet->effective_target(j);
                    const int n_slots = dev.availability.count();
                    const double full_e = dev.p_max_kw * m.step * n_slots;
                    const double tol = 1e-12 * std::max(1.0, full_e);
                    if (e <= tol) continue;
                    if (e >= full_e - tol) {
                        dev.availability.for_each([&](int slot) {
                            out.u_kw[static_cast<size_t>(a)][j][static_cast<size_t>(slot - 1)] =
                                dev.p_max_kw;
                        });
                    } else if (n_slots == 1) {
                        out.u_kw[static_cast<size_t>(a)][j]
                                [static_cast<size_t>(dev.availability.slots()[0] - 1)] = e / m.step;
                    }
                }
            }
            for (const auto& d : m.devices)
                for (size_t k = 0; k < d.slots.size(); ++k)
                    out.u_kw[static_cast<size_t>(d.area)][d.index][static_cast<size_t>(d.slots[k])] =
                        x[d.var0 + static_cast<Eigen::Index>(k)] * d.weight * P0;
        }
        return out;
    };

    // Degenerate: nothing to decide.
    if (n == 0)
        return extract(VectorXd::Zero(0), VectorXd::Zero(mb), VectorXd::Zero(0),
                       VectorXd::Zero(0), VectorXd::Zero(0), 0.0, 0, 0.0, 0.0);

    // --- interior start ------------------------------------------------------
    VectorXd x(n);
    for (const auto& d : m.devices) {
        const double frac =
            std::clamp(d.quota / static_cast<double>(d.slots.size()), 0.05, 0.95);
        for (size_t k = 0; k < d.slots.size(); ++k)
            x[d.var0 + static_cast<Eigen::Index>(k)] = frac;
    }
    for (const auto& g : m.gens) {
        const double mid = 0.5 * (g.lo + g.hi);
        for (int t = 0; t < T; ++t) x[g.var0 + t] = mid;
    }
    if (m.has_tie)
        for (int t = 0; t < T; ++t) x[m.p_var0 + t] = 0.0;

    VectorXd y_b = VectorXd::Zero(mb), y_e = VectorXd::Zero(nd);
    VectorXd zl = VectorXd::Ones(n), zu = VectorXd::Ones(n);
    VectorXd sl = x - ipm.lb, su = ipm.ub - x;

    const double m_total = 2.0 * static_cast<double>(n);
    const double data_scale = 1.0 + [&] {
        double s = 0.0;
        for (double v : m.rhs_balance) s = std::max(s, std::abs(v));
        return std::max(s, ipm.c.size() ? ipm.c.cwiseAbs().maxCoeff() : 0.0);
    }();

    VectorXd r_x(n), r_b(mb), r_e(nd), dl(n), du(n), hdiag(n);
    VectorXd rhs1(n), tvec(n), rB(mb), rE(nd), red_rhs(mb);
    VectorXd dx(n), dyb(mb), dye(nd), dzl(n), dzu(n);
    VectorXd dx_a(n), dyb_a(mb), dye_a(nd), dzl_a(n), dzu_a(n);
    VectorXd rcl(n), rcu(n);
    MatrixXd S(mb, mb);
    VectorXd see(nd);
    VectorXd bx(mb);

    const double reg_p = 1e-12, reg_d = 1e-12;
    double best_pres = std::numeric_limits<double>::infinity();
    int stall = 0;
    double best_score = std::numeric_limits<double>::infinity();
    VectorXd best_x, best_yb, best_ye, best_zl, best_zu;
    bool best_valid = false;

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        r_x = ipm.q.cwiseProduct(x) + ipm.c - zl + zu;
        ipm.add_adjoint(y_b, y_e, r_x);
        ipm.apply_balance(x, bx);
        for (Eigen::Index r = 0; r < mb; ++r)
            r_b[r] = m.balance_active[static_cast<size_t>(r)]
                         ? bx[r] - m.rhs_balance[static_cast<size_t>(r)]
                         : 0.0;
        ipm.device_sums(x, r_e);
        for (Eigen::Index j = 0; j < nd; ++j) r_e[j] -= m.devices[static_cast<size_t>(j)].quota;

        const double mu = (sl.dot(zl) + su.dot(zu)) / m_total;
        const double obj = 0.5 * x.dot(ipm.q.cwiseProduct(x)) + ipm.c.dot(x);
        const double pres =
            std::max(r_b.cwiseAbs().maxCoeff(), nd ? r_e.cwiseAbs().maxCoeff() : 0.0) / data_scale;
        const double dres = r_x.cwiseAbs().maxCoeff() / data_scale;
        const double gap = mu * m_total / (1.0 + std::abs(obj));
        if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(mu)) {
            if (best_valid && best_score <= 1e1 * opts.tol) {
                const double kkt = evaluate_kkt(m, best_x, best_yb, best_ye, best_zl, best_zu);
                const double bobj =
                    0.5 * best_x.dot(ipm.q.cwiseProduct(best_x)) + ipm.c.dot(best_x);
                return extract(best_x, best_yb, best_ye, best_zl, best_zu, bobj, iter - 1, kkt,
                               best_score);
            }
            out.status = SolveStatus::max_iterations;
            out.iterations = iter - 1;
            return out;
        }
        if (pres <= opts.tol && dres <= opts.tol && gap <= opts.tol) {
            const double kkt = evaluate_kkt(m, x, y_b, y_e, zl, zu);
            return extract(x, y_b, y_e, zl, zu, obj, iter - 1, kkt, gap);
        }
        const double score = std::max({pres, dres, gap});
        if (score < best_score) {
            best_score = score;
            best_x = x;
            best_yb = y_b;
            best_ye = y_e;
            best_zl = zl;
            best_zu = zu;
            best_valid = true;
        }
        if (pres < best_pres * 0.999) {
            best_pres = pres;
            stall = 0;
        } else {
            ++stall;
        }
        const double dual_mag = std::max(y_b.cwiseAbs().maxCoeff(),
                                         nd ? y_e.cwiseAbs().maxCoeff() : 0.0);
        if (stall > 12 && pres > 1e3 * opts.tol && dual_mag > 1e10) {
            out.status = SolveStatus::infeasible;
            out.iterations = iter - 1;
            return out;
        }

        // Ratio clamp keeps the Schur systems solvable at tiny complementarity.
        for (Eigen::Index i = 0; i < n; ++i) {
            dl[i] = std::clamp(zl[i] / sl[i], 0.0, 1e10);
            du[i] = std::clamp(zu[i] / su[i], 0.0, 1e10);
        }
        hdiag = ipm.q + dl + du;
        hdiag.array() += reg_p * data_scale;

        // Schur complement on the balance duals.
        S.setZero();
        for (const auto& g : m.gens)
            for (int t = 0; t < T; ++t)
                S(g.area * T + t, g.area * T + t) += 1.0 / hdiag[g.var0 + t];
        if (m.has_tie)
            for (int t = 0; t < T; ++t) {
                const double w = 1.0 / hdiag[m.p_var0 + t];
                S(t, t) += w;
                S(T + t, T + t) += w;
                S(t, T + t) -= w;
                S(T + t, t) -= w;
            }
        for (Eigen::Index j = 0; j < nd; ++j) {
            const auto& d = m.devices[static_cast<size_t>(j)];
            double acc = reg_d;
            for (size_t k = 0; k < d.slots.size(); ++k)
                acc += 1.0 / hdiag[d.var0 + static_cast<Eigen::Index>(k)];
            see[j] = acc;
            const double w2 = d.weight * d.weight;
            for (size_t k = 0; k < d.slots.size(); ++k) {
                const double hk = 1.0 / hdiag[d.var0 + static_cast<Eigen::Index>(k)];
                S(d.area * T + d.slots[k], d.area * T + d.slots[k]) += w2 * hk;
            }
            // subtract v v' / see with v[at] = -w/h
            for (size_t k = 0; k < d.slots.size(); ++k) {
                const double vk = -d.weight / hdiag[d.var0 + static_cast<Eigen::Index>(k)];
                for (size_t l = 0; l < d.slots.size(); ++l) {
                    const double vl = -d.weight / hdiag[d.var0 + static_cast<Eigen::Index>(l)];
                    S(d.area * T + d.slots[k], d.area * T + d.slots[l]) -= vk * vl / acc;
                }
            }
        }
        for (Eigen::Index r = 0; r < mb; ++r) {
            S(r, r) += reg_d;
            if (!m.balance_active[static_cast<size_t>(r)]) S(r, r) += 1.0;  // inert row
        }
        Eigen::LDLT<MatrixXd> sldlt(S);

        auto solve_direction = [&](const VectorXd& ircl, const VectorXd& ircu, VectorXd& odx,
                                   VectorXd& odyb, VectorXd& odye, VectorXd& odzl, VectorXd& odzu) {
            rhs1 = -r_x - ircl.cwiseQuotient(sl) + ircu.cwiseQuotient(su);
            tvec = rhs1.cwiseQuotient(hdiag);
            ipm.apply_balance(tvec, rB);
            rB += r_b;  // A dx = -r_y  =>  rhs2 = -r_b, and rB = B t - rhs2
            ipm.device_sums(tvec, rE);
            rE += r_e;
            red_rhs = rB;
            for (Eigen::Index j = 0; j < nd; ++j) {
                const auto& d = m.devices[static_cast<size_t>(j)];
                const double s = rE[j] / see[j];
                for (size_t k = 0; k < d.slots.size(); ++k)
                    red_rhs[d.area * T + d.slots[k]] -=
                        (-d.weight / hdiag[d.var0 + static_cast<Eigen::Index>(k)]) * s;
            }
            odyb = sldlt.solve(red_rhs);
            for (Eigen::Index j = 0; j < nd; ++j) {
                const auto& d = m.devices[static_cast<size_t>(j)];
                double dot = 0.0;
                for (size_t k = 0; k < d.slots.size(); ++k)
                    dot += (-d.weight / hdiag[d.var0 + static_cast<Eigen::Index>(k)]) *
                           odyb[d.area * T + d.slots[k]];
                odye[j] = (rE[j] - dot) / see[j];
            }
            odx = rhs1;
            VectorXd adj = VectorXd::Zero(n);
            ipm.add_adjoint(odyb, odye, adj);
            odx -= adj;
            odx = odx.cwiseQuotient(hdiag);
            odzl = -(ircl + zl.cwiseProduct(odx)).cwiseQuotient(sl);
            odzu = -(ircu - zu.cwiseProduct(odx)).cwiseQuotient(su);
        };

        // Predictor.
        rcl = sl.cwiseProduct(zl);
        rcu = su.cwiseProduct(zu);
        solve_direction(rcl, rcu, dx_a, dyb_a, dye_a, dzl_a, dzu_a);

        auto steps = [&](const VectorXd& odx, const VectorXd& odzl, const VectorXd& odzu,
                         double tau) {
            double ap = 1.0, ad = 1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (odx[i] < 0.0) ap = std::min(ap, -tau * sl[i] / odx[i]);
                if (odx[i] > 0.0) ap = std::min(ap, tau * su[i] / odx[i]);
                if (odzl[i] < 0.0) ad = std::min(ad, -tau * zl[i] / odzl[i]);
                if (odzu[i] < 0.0) ad = std::min(ad, -tau * zu[i] / odzu[i]);
            }
            return std::pair<double, double>(ap, ad);
        };
        const auto [apa, ada] = steps(dx_a, dzl_a, dzu_a, 1.0);
        double mu_aff = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            mu_aff += (sl[i] + apa * dx_a[i]) * (zl[i] + ada * dzl_a[i]);
            mu_aff += (su[i] - apa * dx_a[i]) * (zu[i] + ada * dzu_a[i]);
        }
        mu_aff /= m_total;
        const double sigma = std::pow(std::clamp(mu_aff / std::max(mu, 1e-300), 0.0, 1.0), 3);

        for (Eigen::Index i = 0; i < n; ++i) {
            rcl[i] = sl[i] * zl[i] + dx_a[i] * dzl_a[i] - sigma * mu;
            rcu[i] = su[i] * zu[i] - dx_a[i] * dzu_a[i] - sigma * mu;
        }
        solve_direction(rcl, rcu, dx, dyb, dye, dzl, dzu);

        const double tau = std::clamp(1.0 - 1e2 * mu, 0.995, 0.99999);
        auto [ap, ad] = steps(dx, dzl, dzu, tau);
        ap = ad = std::min(ap, ad);
        // Centrality safeguard (wide neighborhood of the central path).
        const double gamma = 1e-6;
        double cur_min = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i)
            cur_min = std::min({cur_min, sl[i] * zl[i], su[i] * zu[i]});
        for (int back = 0; cur_min >= gamma * mu && back < 60; ++back) {
            double acc = 0.0, min_prod = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < n; ++i) {
                const double pl = (sl[i] + ap * dx[i]) * (zl[i] + ad * dzl[i]);
                const double pu = (su[i] - ap * dx[i]) * (zu[i] + ad * dzu[i]);
                acc += pl + pu;
                min_prod = std::min({min_prod, pl, pu});
            }
            const double mu_cand = acc / m_total;
            if (min_prod >= gamma * mu_cand || (ap < 1e-10 && ad < 1e-10)) break;
            ap *= 0.8;
            ad *= 0.8;
        }
        const double dres_before = r_x.cwiseAbs().maxCoeff();
        for (int attempt = 0; attempt < 5; ++attempt) {
            VectorXd cx = x + ap * dx;
            VectorXd cyb = y_b + ad * dyb;
            VectorXd cye = nd ? VectorXd(y_e + ad * dye) : y_e;
            VectorXd czl = zl + ad * dzl;
            VectorXd czu = zu + ad * dzu;
            VectorXd rx_new = ipm.q.cwiseProduct(cx) + ipm.c - czl + czu;
            ipm.add_adjoint(cyb, cye, rx_new);
            const double dres_after = rx_new.cwiseAbs().maxCoeff();
            if (dres_after <= 10.0 * std::max({dres_before, mu, opts.tol * data_scale}) ||
                attempt == 4) {
                x = std::move(cx);
                y_b = std::move(cyb);
                y_e = std::move(cye);
                zl = std::move(czl);
                zu = std::move(czu);
                break;
            }
            ap *= 0.2;
            ad *= 0.2;
        }
        sl = (x - ipm.lb).cwiseMax(1e-300);
        su = (ipm.ub - x).cwiseMax(1e-300);
    }
    out.status = SolveStatus::max_iterations;
    out.iterations = opts.max_iterations;
    return out;
}

}  // namespace flexfleet::fleet_qp
