#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <vector>

namespace flexfleet::qp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Status { optimal, infeasible, max_iterations };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::infeasible: return "infeasible";
        case Status::max_iterations: return "max_iterations";
    }
    return "?";
}

/// Convex QP with separable quadratic objective:
///   min 1/2 x' diag(q) x + c' x
///   s.t. A x = b,  G x <= h,  lb <= x <= ub   (entries of lb/ub may be +-inf)
struct Problem {
    VectorXd q, c;
    MatrixXd A;
    VectorXd b;
    MatrixXd G;
    VectorXd h;
    VectorXd lb, ub;
    double objective_offset = 0.0;
};

struct Options {
    double tol = 1e-9;        // relative duality gap and residual target
    int max_iterations = 200;
    double reg_primal = 1e-12;
    double reg_dual = 1e-12;
    bool verbose = false;
};

struct Result {
    Status status = Status::max_iterations;
    int iterations = 0;
    double objective = std::numeric_limits<double>::quiet_NaN();
    VectorXd x;
    VectorXd y;        // equality duals, stationarity uses + A'y
    VectorXd z;        // duals of G rows, >= 0
    VectorXd zl, zu;   // duals of lower/upper bounds, >= 0
    double gap = 0.0;
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline double scaled_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Largest alpha in (0, 1] with v + alpha*dv >= (1 - safety)*... standard
/// fraction-to-boundary rule against the positive orthant.
inline double step_to_boundary(const VectorXd& v, const VectorXd& dv, double tau) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) alpha = std::min(alpha, -tau * v[i] / dv[i]);
    return alpha;
}

}  // namespace detail

/// Worst normalized KKT violation at the supplied primal/dual point:
/// stationarity, primal feasibility, dual sign, and complementary slackness.
inline double kkt_residual(const Problem& p, const VectorXd& x, const VectorXd& y,
                           const VectorXd& z, const VectorXd& zl, const VectorXd& zu) {
    const Eigen::Index n = p.q.size();
    const double data_scale =
        1.0 + std::max({detail::scaled_norm(p.c), detail::scaled_norm(p.b), detail::scaled_norm(p.h)});

    VectorXd grad = p.q.cwiseProduct(x) + p.c;
    if (p.A.rows()) grad += p.A.transpose() * y;
    if (p.G.rows()) grad += p.G.transpose() * z;
    grad -= zl;
    grad += zu;
    double res = grad.cwiseAbs().maxCoeff() / data_scale;

    if (p.A.rows()) res = std::max(res, (p.A * x - p.b).cwiseAbs().maxCoeff() / data_scale);
    if (p.G.rows()) {
        const VectorXd slack = p.h - p.G * x;
        res = std::max(res, std::max(0.0, -slack.minCoeff()) / data_scale);
        res = std::max(res, std::max(0.0, -z.minCoeff()) / data_scale);
        res = std::max(res, z.cwiseProduct(slack).cwiseAbs().maxCoeff() / data_scale);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::isfinite(p.lb[i])) {
            const double s = x[i] - p.lb[i];
            res = std::max(res, std::max(0.0, -s) / data_scale);
            res = std::max(res, std::max(0.0, -zl[i]) / data_scale);
            res = std::max(res, std::abs(zl[i] * s) / data_scale);
        }
        if (std::isfinite(p.ub[i])) {
            const double s = p.ub[i] - x[i];
            res = std::max(res, std::max(0.0, -s) / data_scale);
            res = std::max(res, std::max(0.0, -zu[i]) / data_scale);
            res = std::max(res, std::abs(zu[i] * s) / data_scale);
        }
    }
    return res;
}

namespace detail {

/// Bookkeeping for the presolve: fixed variables are substituted out,
/// single-variable rows of G become bounds (kept note of so their duals can
/// be reconstructed), empty rows are dropped.
struct Presolve {
    std::vector<Eigen::Index> free_vars;       // reduced index -> original index
    std::vector<Eigen::Index> keep_eq;         // reduced eq row -> original row
    std::vector<Eigen::Index> keep_ineq;       // reduced G row -> original row
    // For each original variable: the G row that supplied the winning lower /
    // upper bound (or -1 when the variable's own bound is the tight one).
    std::vector<Eigen::Index> lb_from_row, ub_from_row;
    std::vector<double> lb_row_coef, ub_row_coef;
    // Equality rows that pinned a single variable, in pinning order; their
    // duals are reconstructed from the pinned variable's stationarity.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pin_rows;  // (row, var)
    VectorXd x_fixed;          // full-size, valid at fixed positions
    std::vector<char> fixed;
    double extra_offset = 0.0;
    bool infeasible = false;
};

inline Presolve run_presolve(const Problem& p, Problem& r) {
    const Eigen::Index n = p.q.size();
    const Eigen::Index me = p.A.rows();
    const Eigen::Index mg = p.G.rows();
    const double feas_tol = 1e-9 * (1.0 + scaled_norm(p.h) + scaled_norm(p.b));

    Presolve ps;
    ps.fixed.assign(static_cast<size_t>(n), 0);
    ps.x_fixed = VectorXd::Zero(n);
    ps.lb_from_row.assign(static_cast<size_t>(n), -1);
    ps.ub_from_row.assign(static_cast<size_t>(n), -1);
    ps.lb_row_coef.assign(static_cast<size_t>(n), 0.0);
    ps.ub_row_coef.assign(static_cast<size_t>(n), 0.0);

    VectorXd lb = p.lb, ub = p.ub;
    std::vector<char> row_folded(static_cast<size_t>(mg), 0);

    // Fold single-variable G rows into bounds and substitute pinned
    // variables, iterating to a fixpoint.
    bool changed = true;
    while (changed) {
        changed = false;
        for (Eigen::Index i = 0; i < mg; ++i) {
            if (row_folded[static_cast<size_t>(i)]) continue;
            Eigen::Index nz = -1;
            int count = 0;
            for (Eigen::Index v = 0; v < n; ++v) {
                if (ps.fixed[static_cast<size_t>(v)]) continue;
                if (p.G(i, v) != 0.0) {
                    ++count;
                    nz = v;
                    if (count > 1) break;
                }
            }
            if (count > 1) continue;
            row_folded[static_cast<size_t>(i)] = 1;
            changed = true;
            double rhs = p.h[i];
            for (Eigen::Index v = 0; v < n; ++v)
                if (ps.fixed[static_cast<size_t>(v)] && p.G(i, v) != 0.0)
                    rhs -= p.G(i, v) * ps.x_fixed[v];
            if (count == 0) {
                if (rhs < -feas_tol) ps.infeasible = true;
                continue;
            }
            const double coef = p.G(i, nz);
            if (coef > 0.0) {
                const double bound = rhs / coef;
                if (bound < ub[nz]) {
                    ub[nz] = bound;
                    ps.ub_from_row[static_cast<size_t>(nz)] = i;
                    ps.ub_row_coef[static_cast<size_t>(nz)] = coef;
                }
            } else {
                const double bound = rhs / coef;
                if (bound > lb[nz]) {
                    lb[nz] = bound;
                    ps.lb_from_row[static_cast<size_t>(nz)] = i;
                    ps.lb_row_coef[static_cast<size_t>(nz)] = coef;
                }
            }
        }
        // Equality rows reduced to one free variable pin it outright.
        for (Eigen::Index i = 0; i < me; ++i) {
            Eigen::Index nz = -1;
            int count = 0;
            for (Eigen::Index v = 0; v < n; ++v) {
                if (ps.fixed[static_cast<size_t>(v)]) continue;
                if (p.A(i, v) != 0.0) {
                    ++count;
                    nz = v;
                    if (count > 1) break;
                }
            }
            if (count != 1) continue;
            double rhs = p.b[i];
            for (Eigen::Index v = 0; v < n; ++v)
                if (ps.fixed[static_cast<size_t>(v)] && p.A(i, v) != 0.0)
                    rhs -= p.A(i, v) * ps.x_fixed[v];
            const double value = rhs / p.A(i, nz);
            if (value < lb[nz] - feas_tol || value > ub[nz] + feas_tol) {
                ps.infeasible = true;
                return ps;
            }
            ps.fixed[static_cast<size_t>(nz)] = 1;
            ps.x_fixed[nz] = value;
            ps.pin_rows.emplace_back(i, nz);
            changed = true;
        }
        for (Eigen::Index v = 0; v < n; ++v) {
            if (ps.fixed[static_cast<size_t>(v)]) continue;
            if (lb[v] > ub[v] + feas_tol) {
                ps.infeasible = true;
                return ps;
            }
            if (std::isfinite(lb[v]) && std::isfinite(ub[v]) &&
                ub[v] - lb[v] <= 1e-13 * std::max(1.0, std::abs(lb[v]))) {
                ps.fixed[static_cast<size_t>(v)] = 1;
                ps.x_fixed[v] = 0.5 * (lb[v] + ub[v]);
                changed = true;
            }
        }
    }

    for (Eigen::Index v = 0; v < n; ++v)
        if (!ps.fixed[static_cast<size_t>(v)]) ps.free_vars.push_back(v);

    const Eigen::Index nf = static_cast<Eigen::Index>(ps.free_vars.size());
    r.q.resize(nf);
    r.c.resize(nf);
    r.lb.resize(nf);
    r.ub.resize(nf);
    for (Eigen::Index k = 0; k < nf; ++k) {
        const Eigen::Index v = ps.free_vars[static_cast<size_t>(k)];
        r.q[k] = p.q[v];
        r.c[k] = p.c[v];
        r.lb[k] = lb[v];
        r.ub[k] = ub[v];
    }
    for (Eigen::Index v = 0; v < n; ++v)
        if (ps.fixed[static_cast<size_t>(v)])
            ps.extra_offset += 0.5 * p.q[v] * ps.x_fixed[v] * ps.x_fixed[v] + p.c[v] * ps.x_fixed[v];

    // Equality rows: drop rows with no free support.
    for (Eigen::Index i = 0; i < me; ++i) {
        bool any = false;
        double rhs = p.b[i];
        for (Eigen::Index v = 0; v < n; ++v) {
            if (p.A(i, v) == 0.0) continue;
            if (ps.fixed[static_cast<size_t>(v)])
                rhs -= p.A(i, v) * ps.x_fixed[v];
            else
                any = true;
        }
        if (!any) {
            if (std::abs(rhs) > feas_tol) ps.infeasible = true;
            continue;
        }
        ps.keep_eq.push_back(i);
    }
    r.A.resize(static_cast<Eigen::Index>(ps.keep_eq.size()), nf);
    r.b.resize(static_cast<Eigen::Index>(ps.keep_eq.size()));
    for (Eigen::Index ri = 0; ri < r.A.rows(); ++ri) {
        const Eigen::Index i = ps.keep_eq[static_cast<size_t>(ri)];
        double rhs = p.b[i];
        for (Eigen::Index k = 0; k < nf; ++k)
            r.A(ri, k) = p.A(i, ps.free_vars[static_cast<size_t>(k)]);
        for (Eigen::Index v = 0; v < n; ++v)
            if (ps.fixed[static_cast<size_t>(v)] && p.A(i, v) != 0.0)
                rhs -= p.A(i, v) * ps.x_fixed[v];
        r.b[ri] = rhs;
    }
    // Substituting fixed variables can leave linearly dependent equality
    // rows (pinned window sums overlapping the energy total). Keep a
    // rank-revealing subset; dropped rows must stay consistent.
    if (r.A.rows() > 1) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(r.A.transpose());
        qr.setThreshold(1e-11);
        const Eigen::Index rank = qr.rank();
        if (rank < r.A.rows()) {
            const auto& perm = qr.colsPermutation().indices();
            std::vector<Eigen::Index> kept(perm.data(), perm.data() + rank);
            std::sort(kept.begin(), kept.end());
            Eigen::MatrixXd A2(rank, nf);
            Eigen::VectorXd b2(rank);
            std::vector<Eigen::Index> keep2;
            std::vector<char> is_kept(static_cast<size_t>(r.A.rows()), 0);
            for (Eigen::Index k = 0; k < rank; ++k) {
                A2.row(k) = r.A.row(kept[static_cast<size_t>(k)]);
                b2[k] = r.b[kept[static_cast<size_t>(k)]];
                keep2.push_back(ps.keep_eq[static_cast<size_t>(kept[static_cast<size_t>(k)])]);
                is_kept[static_cast<size_t>(kept[static_cast<size_t>(k)])] = 1;
            }
            // Consistency of the dropped rows: they are combinations of the
            // kept ones, so their right-hand sides are determined.
            Eigen::LDLT<Eigen::MatrixXd> gram(
                Eigen::MatrixXd(A2 * A2.transpose()) +
                1e-14 * Eigen::MatrixXd::Identity(rank, rank));
            for (Eigen::Index ri = 0; ri < r.A.rows(); ++ri) {
                if (is_kept[static_cast<size_t>(ri)]) continue;
                const Eigen::VectorXd coef = gram.solve(A2 * r.A.row(ri).transpose());
                if (std::abs(coef.dot(b2) - r.b[ri]) > feas_tol) ps.infeasible = true;
            }
            r.A = std::move(A2);
            r.b = std::move(b2);
            ps.keep_eq = std::move(keep2);
        }
    }

    // Remaining general inequality rows.
    for (Eigen::Index i = 0; i < mg; ++i)
        if (!row_folded[static_cast<size_t>(i)]) ps.keep_ineq.push_back(i);
    r.G.resize(static_cast<Eigen::Index>(ps.keep_ineq.size()), nf);
    r.h.resize(static_cast<Eigen::Index>(ps.keep_ineq.size()));
    for (Eigen::Index ri = 0; ri < r.G.rows(); ++ri) {
        const Eigen::Index i = ps.keep_ineq[static_cast<size_t>(ri)];
        double rhs = p.h[i];
        for (Eigen::Index k = 0; k < nf; ++k)
            r.G(ri, k) = p.G(i, ps.free_vars[static_cast<size_t>(k)]);
        for (Eigen::Index v = 0; v < n; ++v)
            if (ps.fixed[static_cast<size_t>(v)] && p.G(i, v) != 0.0)
                rhs -= p.G(i, v) * ps.x_fixed[v];
        r.h[ri] = rhs;
    }
    r.objective_offset = p.objective_offset + ps.extra_offset;
    return ps;
}

struct Iterates {
    VectorXd x, y;
    VectorXd sg, zg;   // general inequalities
    VectorXd sl, zl;   // finite lower bounds (dense over vars, inactive = 1 pairs)
    VectorXd su, zu;   // finite upper bounds
};

}  // namespace detail

/// Mehrotra predictor-corrector interior point method. Designed for the
/// small, dense, well-scaled problems this project assembles; callers are
/// expected to normalize units beforehand.
inline Result solve(const Problem& input, const Options& opts = {}) {
    using detail::kInf;
    const Eigen::Index n_full = input.q.size();
    if (input.c.size() != n_full || input.lb.size() != n_full || input.ub.size() != n_full)
        throw std::invalid_argument("qp::solve: inconsistent vector sizes");
    if (input.A.rows() != input.b.size() || (input.A.rows() && input.A.cols() != n_full))
        throw std::invalid_argument("qp::solve: inconsistent equality block");
    if (input.G.rows() != input.h.size() || (input.G.rows() && input.G.cols() != n_full))
        throw std::invalid_argument("qp::solve: inconsistent inequality block");

    Problem p;
    detail::Presolve ps = detail::run_presolve(input, p);

    Result out;
    out.x = VectorXd::Zero(n_full);
    out.y = VectorXd::Zero(input.A.rows());
    out.z = VectorXd::Zero(input.G.rows());
    out.zl = VectorXd::Zero(n_full);
    out.zu = VectorXd::Zero(n_full);
    if (ps.infeasible) {
        out.status = Status::infeasible;
        return out;
    }

    const Eigen::Index n = p.q.size();
    const Eigen::Index me = p.A.rows();
    const Eigen::Index mg = p.G.rows();

    // Masks of finite bounds.
    std::vector<char> has_lb(static_cast<size_t>(n)), has_ub(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        has_lb[static_cast<size_t>(i)] = std::isfinite(p.lb[i]);
        has_ub[static_cast<size_t>(i)] = std::isfinite(p.ub[i]);
    }

    const double data_scale =
        1.0 + std::max({detail::scaled_norm(p.c), detail::scaled_norm(p.b), detail::scaled_norm(p.h)});

    auto finish = [&](Status status, const detail::Iterates& it, int iters) {
        out.status = status;
        out.iterations = iters;
        for (Eigen::Index k = 0; k < n; ++k) out.x[ps.free_vars[static_cast<size_t>(k)]] = it.x[k];
        for (Eigen::Index i = 0; i < n_full; ++i)
            if (ps.fixed[static_cast<size_t>(i)]) out.x[i] = ps.x_fixed[i];
        for (Eigen::Index ri = 0; ri < me; ++ri) out.y[ps.keep_eq[static_cast<size_t>(ri)]] = it.y[ri];
        for (Eigen::Index ri = 0; ri < mg; ++ri)
            out.z[ps.keep_ineq[static_cast<size_t>(ri)]] = it.zg[ri];
        // Bound duals; bounds that came from folded singleton rows give the
        // dual back to that row instead.
        for (Eigen::Index k = 0; k < n; ++k) {
            const Eigen::Index v = ps.free_vars[static_cast<size_t>(k)];
            if (has_lb[static_cast<size_t>(k)]) {
                const Eigen::Index row = ps.lb_from_row[static_cast<size_t>(v)];
                if (row >= 0)
                    out.z[row] = it.zl[k] / std::abs(ps.lb_row_coef[static_cast<size_t>(v)]);
                else
                    out.zl[v] = it.zl[k];
            }
            if (has_ub[static_cast<size_t>(k)]) {
                const Eigen::Index row = ps.ub_from_row[static_cast<size_t>(v)];
                if (row >= 0)
                    out.z[row] = it.zu[k] / std::abs(ps.ub_row_coef[static_cast<size_t>(v)]);
                else
                    out.zu[v] = it.zu[k];
            }
        }
        // Variables pinned by an equality row hand their gradient to that
        // row's dual (reverse pinning order makes the system triangular);
        // variables pinned at a bound absorb theirs into the bound dual.
        std::vector<char> row_pinned(static_cast<size_t>(n_full), 0);
        for (auto itp = ps.pin_rows.rbegin(); itp != ps.pin_rows.rend(); ++itp) {
            const auto [row, v] = *itp;
            row_pinned[static_cast<size_t>(v)] = 1;
            double grad = input.q[v] * out.x[v] + input.c[v];
            if (input.A.rows()) grad += input.A.col(v).dot(out.y);
            if (input.G.rows()) grad += input.G.col(v).dot(out.z);
            out.y[row] = -grad / input.A(row, v);
        }
        for (Eigen::Index v = 0; v < n_full; ++v) {
            if (!ps.fixed[static_cast<size_t>(v)] || row_pinned[static_cast<size_t>(v)]) continue;
            double grad = input.q[v] * out.x[v] + input.c[v];
            if (input.A.rows()) grad += input.A.col(v).dot(out.y);
            if (input.G.rows()) grad += input.G.col(v).dot(out.z);
            if (grad > 0.0)
                out.zl[v] = grad;
            else
                out.zu[v] = -grad;
        }
        double obj = 0.5 * out.x.dot(input.q.cwiseProduct(out.x)) + input.c.dot(out.x) +
                     input.objective_offset;
        out.objective = obj;
        out.kkt_residual = kkt_residual(input, out.x, out.y, out.z, out.zl, out.zu);
        return out;
    };

    // Active-set polish: re-solve the face suggested by the dual/slack split
    // as an equality-constrained QP. When the classification is right this
    // lands on the exact solution, removing the interior-point noise on
    // weakly active rows. Subsequent passes reclassify from the polished
    // point and drop actives whose multipliers came out negative.
    auto try_polish = [&](detail::Iterates& it) -> bool {
        std::vector<char> act_g(static_cast<size_t>(mg), 0), act_l(static_cast<size_t>(n), 0),
            act_u(static_cast<size_t>(n), 0);
        for (Eigen::Index i = 0; i < mg; ++i) act_g[static_cast<size_t>(i)] = it.zg[i] > it.sg[i];
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool la = has_lb[static_cast<size_t>(i)] && it.zl[i] > it.sl[i];
            const bool ua = has_ub[static_cast<size_t>(i)] && it.zu[i] > it.su[i];
            if (la && ua) {
                if (it.zl[i] / it.sl[i] >= it.zu[i] / it.su[i])
                    act_l[static_cast<size_t>(i)] = 1;
                else
                    act_u[static_cast<size_t>(i)] = 1;
            } else {
                act_l[static_cast<size_t>(i)] = la;
                act_u[static_cast<size_t>(i)] = ua;
            }
        }

        const double before = kkt_residual(p, it.x, it.y, it.zg, it.zl, it.zu);
        bool improved = false;
        for (int pass = 0; pass < 3; ++pass) {
            std::vector<Eigen::Index> idx_g, idx_l, idx_u;
            for (Eigen::Index i = 0; i < mg; ++i)
                if (act_g[static_cast<size_t>(i)]) idx_g.push_back(i);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (act_l[static_cast<size_t>(i)]) idx_l.push_back(i);
                if (act_u[static_cast<size_t>(i)]) idx_u.push_back(i);
            }
            const Eigen::Index m_act = me + static_cast<Eigen::Index>(idx_g.size()) +
                                       static_cast<Eigen::Index>(idx_l.size()) +
                                       static_cast<Eigen::Index>(idx_u.size());
            MatrixXd Ab = MatrixXd::Zero(m_act, n);
            VectorXd bb = VectorXd::Zero(m_act);
            if (me) {
                Ab.topRows(me) = p.A;
                bb.head(me) = p.b;
            }
            Eigen::Index r = me;
            for (Eigen::Index i : idx_g) {
                Ab.row(r) = p.G.row(i);
                bb[r] = p.h[i];
                ++r;
            }
            for (Eigen::Index i : idx_l) {
                Ab(r, i) = 1.0;
                bb[r] = p.lb[i];
                ++r;
            }
            for (Eigen::Index i : idx_u) {
                Ab(r, i) = 1.0;
                bb[r] = p.ub[i];
                ++r;
            }
            // Dense rank-revealing QR on the KKT system: robust to the
            // singular curvature and redundant active rows that show up on
            // degenerate faces.
            VectorXd x(n), ybar(m_act);
            {
                MatrixXd K = MatrixXd::Zero(n + m_act, n + m_act);
                K.topLeftCorner(n, n).diagonal() = p.q;
                if (m_act) {
                    K.topRightCorner(n, m_act) = Ab.transpose();
                    K.bottomLeftCorner(m_act, n) = Ab;
                }
                VectorXd rhs(n + m_act);
                rhs.head(n) = -p.c;
                rhs.tail(m_act) = bb;
                Eigen::ColPivHouseholderQR<MatrixXd> qr(K);
                const VectorXd sol = qr.solve(rhs);
                x = sol.head(n);
                ybar = sol.tail(m_act);
            }
            if (!x.allFinite() || !ybar.allFinite()) {
                if (std::getenv("FLEXFLEET_QP_DEBUG")) std::fprintf(stderr, "polish: non-finite\n");
                return improved;
            }

            detail::Iterates cand;
            cand.x = x;
            cand.y = ybar.head(me);
            cand.zg = VectorXd::Zero(mg);
            cand.zl = VectorXd::Zero(n);
            cand.zu = VectorXd::Zero(n);
            r = me;
            bool negative_dual = false;
            const double dual_tol = 1e-9 * data_scale;
            for (Eigen::Index i : idx_g) {
                if (ybar[r] < -dual_tol) {
                    act_g[static_cast<size_t>(i)] = 0;
                    negative_dual = true;
                }
                cand.zg[i] = std::max(0.0, ybar[r++]);
            }
            for (Eigen::Index i : idx_l) {
                if (-ybar[r] < -dual_tol) {
                    act_l[static_cast<size_t>(i)] = 0;
                    negative_dual = true;
                }
                cand.zl[i] = std::max(0.0, -ybar[r++]);
            }
            for (Eigen::Index i : idx_u) {
                if (ybar[r] < -dual_tol) {
                    act_u[static_cast<size_t>(i)] = 0;
                    negative_dual = true;
                }
                cand.zu[i] = std::max(0.0, ybar[r++]);
            }
            cand.sg = mg ? VectorXd(p.h - p.G * x) : VectorXd();
            cand.sl = it.sl;
            cand.su = it.su;

            const double after = kkt_residual(p, cand.x, cand.y, cand.zg, cand.zl, cand.zu);
            if (std::getenv("FLEXFLEET_QP_DEBUG"))
                std::fprintf(stderr, "polish pass %d: %zu/%zu/%zu actives, before %.3e after %.3e\n",
                             pass, idx_g.size(), idx_l.size(), idx_u.size(), before, after);
            if (after < kkt_residual(p, it.x, it.y, it.zg, it.zl, it.zu)) {
                it = cand;
                improved = true;
            }
            // Primal violations mean a constraint was wrongly left inactive.
            bool missing_active = false;
            if (mg)
                for (Eigen::Index i = 0; i < mg; ++i)
                    if (!act_g[static_cast<size_t>(i)] && cand.sg[i] < -1e-11 * data_scale) {
                        act_g[static_cast<size_t>(i)] = 1;
                        missing_active = true;
                    }
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)] && !act_l[static_cast<size_t>(i)] &&
                    x[i] < p.lb[i] - 1e-11 * data_scale) {
                    act_l[static_cast<size_t>(i)] = 1;
                    missing_active = true;
                }
                if (has_ub[static_cast<size_t>(i)] && !act_u[static_cast<size_t>(i)] &&
                    x[i] > p.ub[i] + 1e-11 * data_scale) {
                    act_u[static_cast<size_t>(i)] = 1;
                    missing_active = true;
                }
            }
            if (!negative_dual && !missing_active) break;
        }
        return improved;
    };

    auto final_return = [&](Status st, detail::Iterates it, int iters) {
        if (std::getenv("FLEXFLEET_QP_DEBUG")) std::fprintf(stderr, "final_return st=%d iters=%d\n", (int)st, iters);
        if (st != Status::infeasible) {
            try_polish(it);
            if (st == Status::max_iterations) {
                const double score = kkt_residual(p, it.x, it.y, it.zg, it.zl, it.zu);
                if (score <= 1e1 * opts.tol) st = Status::optimal;
            }
        }
        return finish(st, it, iters);
    };

    // Trivial case: everything fixed by presolve.
    if (n == 0) {
        detail::Iterates it;
        it.x = VectorXd::Zero(0);
        it.y = VectorXd::Zero(me);
        it.zg = VectorXd::Zero(mg);
        it.zl = it.zu = VectorXd::Zero(0);
        it.sg = VectorXd::Zero(mg);
        return finish(Status::optimal, it, 0);
    }

    // --- Starting point -----------------------------------------------------
    detail::Iterates it;
    it.x = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool fl = has_lb[static_cast<size_t>(i)], fu = has_ub[static_cast<size_t>(i)];
        if (fl && fu)
            it.x[i] = 0.5 * (p.lb[i] + p.ub[i]);
        else if (fl)
            it.x[i] = p.lb[i] + 1.0;
        else if (fu)
            it.x[i] = p.ub[i] - 1.0;
    }
    if (me > 0) {
        // Least-change projection onto the equality manifold.
        MatrixXd AAt = p.A * p.A.transpose();
        AAt.diagonal().array() += 1e-12 * (1.0 + AAt.diagonal().maxCoeff());
        Eigen::LDLT<MatrixXd> ldlt(AAt);
        it.x += p.A.transpose() * ldlt.solve(p.b - p.A * it.x);
    }
    const double margin = 0.1;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (has_lb[static_cast<size_t>(i)] && has_ub[static_cast<size_t>(i)]) {
            const double w = p.ub[i] - p.lb[i];
            it.x[i] = std::clamp(it.x[i], p.lb[i] + margin * 0.25 * w, p.ub[i] - margin * 0.25 * w);
        } else if (has_lb[static_cast<size_t>(i)]) {
            it.x[i] = std::max(it.x[i], p.lb[i] + margin);
        } else if (has_ub[static_cast<size_t>(i)]) {
            it.x[i] = std::min(it.x[i], p.ub[i] - margin);
        }
    }
    it.y = VectorXd::Zero(me);
    it.sl = VectorXd::Ones(n);
    it.su = VectorXd::Ones(n);
    it.zl = VectorXd::Ones(n);
    it.zu = VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (has_lb[static_cast<size_t>(i)]) it.sl[i] = it.x[i] - p.lb[i];
        if (has_ub[static_cast<size_t>(i)]) it.su[i] = p.ub[i] - it.x[i];
    }
    it.sg.resize(mg);
    it.zg = VectorXd::Ones(mg);
    if (mg) {
        const VectorXd gx = p.G * it.x;
        for (Eigen::Index i = 0; i < mg; ++i)
            it.sg[i] = std::max(p.h[i] - gx[i], 0.1 * (1.0 + std::abs(p.h[i])));
    }

    const double m_total = static_cast<double>(mg) +
                           static_cast<double>(std::count(has_lb.begin(), has_lb.end(), 1)) +
                           static_cast<double>(std::count(has_ub.begin(), has_ub.end(), 1));

    // No inequality structure at all: one Newton solve on the KKT system.
    if (m_total == 0.0) {
        MatrixXd H = MatrixXd::Zero(n, n);
        H.diagonal() = p.q.array() + opts.reg_primal;
        Eigen::LLT<MatrixXd> llt(H);
        MatrixXd S = p.A * llt.solve(p.A.transpose());
        S.diagonal().array() += opts.reg_dual;
        Eigen::LDLT<MatrixXd> sol(S);
        const VectorXd rhs1 = -p.c;
        it.y = sol.solve(p.A * llt.solve(rhs1) - p.b);
        it.x = llt.solve(rhs1 - p.A.transpose() * it.y);
        return finish(Status::optimal, it, 1);
    }

    auto mu_of = [&](const detail::Iterates& w) {
        double acc = w.sg.dot(w.zg);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (has_lb[static_cast<size_t>(i)]) acc += w.sl[i] * w.zl[i];
            if (has_ub[static_cast<size_t>(i)]) acc += w.su[i] * w.zu[i];
        }
        return acc / m_total;
    };

    VectorXd r_x(n), r_y(me), r_g(mg);
    VectorXd dl(n), du(n), wg(mg);
    VectorXd rhs1(n);
    MatrixXd H(n, n), S(me, me);
    VectorXd dx(n), dy(me), dsg(mg), dzg(mg), dzl(n), dzu(n);
    VectorXd dx_a(n), dy_a(me), dsg_a(mg), dzg_a(mg), dzl_a(n), dzu_a(n);

    double best_primal_res = kInf;
    int stall = 0;
    double reg_mult = 1.0;
    int reg_boosts = 0;
    double best_score = kInf;
    detail::Iterates best_it;
    bool best_valid = false;
    Status best_status = Status::max_iterations;

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        // Residuals.
        r_x = p.q.cwiseProduct(it.x) + p.c;
        if (me) r_x += p.A.transpose() * it.y;
        if (mg) r_x += p.G.transpose() * it.zg;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (has_lb[static_cast<size_t>(i)]) r_x[i] -= it.zl[i];
            if (has_ub[static_cast<size_t>(i)]) r_x[i] += it.zu[i];
        }
        if (me) r_y = p.A * it.x - p.b;
        if (mg) r_g = p.G * it.x + it.sg - p.h;

        const double mu = mu_of(it);
        const double obj = 0.5 * it.x.dot(p.q.cwiseProduct(it.x)) + p.c.dot(it.x);
        const double pres = std::max(me ? detail::scaled_norm(r_y) : 0.0,
                                     mg ? detail::scaled_norm(r_g) : 0.0) /
                            data_scale;
        const double dres = detail::scaled_norm(r_x) / data_scale;
        const double gap = mu * m_total / (1.0 + std::abs(obj));
        out.gap = gap;
        if (opts.verbose)
            std::fprintf(stderr, "ipm %3d mu=%9.2e pres=%9.2e dres=%9.2e obj=%+.6e\n", iter, mu,
                         pres, dres, obj);
        if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(mu)) {
            // Numerical collapse past convergence; fall back to the best
            // iterate seen (polish often completes it).
            if (best_valid) return final_return(Status::max_iterations, best_it, iter - 1);
            return finish(Status::max_iterations, it, iter - 1);
        }
        if (pres <= opts.tol && dres <= opts.tol && gap <= opts.tol)
            return final_return(Status::optimal, it, iter - 1);
        const double score = std::max({pres, dres, gap});
        if (score < best_score) {
            best_score = score;
            best_it = it;
            best_valid = true;
            best_status = score <= 1e1 * opts.tol ? Status::optimal : Status::max_iterations;
        }

        if (pres < best_primal_res * 0.999) {
            best_primal_res = pres;
            stall = 0;
        } else {
            ++stall;
        }
        // Diverging duals with a stuck primal residual: no feasible point.
        const double dual_mag = std::max(detail::scaled_norm(it.y),
                                         mg ? detail::scaled_norm(it.zg) : 0.0);
        if (stall > 12 && pres > 1e3 * opts.tol && dual_mag > 1e10)
            return finish(Status::infeasible, it, iter - 1);
        // Complementarity has bottomed out numerically; hand over to polish.
        if (mu < 1e-13 * (1.0 + std::abs(obj)) && iter > 5)
            return final_return(Status::max_iterations, best_valid ? best_it : it, iter - 1);

        // Scaling matrices. Ratios are clamped so the reduced systems stay
        // solvable in double precision once complementarity goes tiny.
        const double ratio_cap = 1e10;
        auto clamp_ratio = [&](double v) { return std::clamp(v, 0.0, ratio_cap); };
        for (Eigen::Index i = 0; i < n; ++i) {
            dl[i] = has_lb[static_cast<size_t>(i)] ? clamp_ratio(it.zl[i] / it.sl[i]) : 0.0;
            du[i] = has_ub[static_cast<size_t>(i)] ? clamp_ratio(it.zu[i] / it.su[i]) : 0.0;
        }
        if (mg)
            for (Eigen::Index i = 0; i < mg; ++i) wg[i] = clamp_ratio(it.zg[i] / it.sg[i]);

        H.setZero();
        if (mg) H.noalias() = p.G.transpose() * wg.asDiagonal() * p.G;
        H.diagonal() += p.q + dl + du;
        H.diagonal().array() += opts.reg_primal * data_scale * reg_mult;
        Eigen::LLT<MatrixXd> hllt(H);
        if (hllt.info() != Eigen::Success) {
            H.diagonal().array() += 1e-8 * (1.0 + H.diagonal().maxCoeff());
            hllt.compute(H);
            if (hllt.info() != Eigen::Success)
                return final_return(Status::max_iterations, best_valid ? best_it : it, iter - 1);
        }
        Eigen::LDLT<MatrixXd> sldlt;
        if (me) {
            S.noalias() = p.A * hllt.solve(p.A.transpose());
            S.diagonal().array() += opts.reg_dual * reg_mult;
            sldlt.compute(S);
        }

        auto solve_direction = [&](const VectorXd& rcl, const VectorXd& rcu, const VectorXd& rcg,
                                   VectorXd& odx, VectorXd& ody, VectorXd& odsg, VectorXd& odzg,
                                   VectorXd& odzl, VectorXd& odzu) {
            rhs1 = -r_x;
            if (mg) rhs1 -= p.G.transpose() * (it.sg.cwiseInverse().cwiseProduct(
                                it.zg.cwiseProduct(r_g) - rcg));
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)]) rhs1[i] -= rcl[i] / it.sl[i];
                if (has_ub[static_cast<size_t>(i)]) rhs1[i] += rcu[i] / it.su[i];
            }
            if (me) {
                ody = sldlt.solve(p.A * hllt.solve(rhs1) + r_y);
                odx = hllt.solve(rhs1 - p.A.transpose() * ody);
                // Refinement rounds on the reduced system; the barrier
                // conditioning makes a single solve too loose near the end.
                for (int round = 0; round < 3; ++round) {
                    VectorXd res1 = H * odx + p.A.transpose() * ody - rhs1;
                    VectorXd res2 = p.A * odx + r_y;
                    const VectorXd cy = sldlt.solve(p.A * hllt.solve(-res1) + res2);
                    const VectorXd cx = hllt.solve(-res1 - p.A.transpose() * cy);
                    odx += cx;
                    ody += cy;
                    if (res1.cwiseAbs().maxCoeff() + res2.cwiseAbs().maxCoeff() < 1e-14 * data_scale)
                        break;
                }
            } else {
                odx = hllt.solve(rhs1);
                ody.resize(0);
            }
            if (mg) {
                odsg = -r_g - p.G * odx;
                odzg = -(rcg + it.zg.cwiseProduct(odsg)).cwiseQuotient(it.sg);
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                odzl[i] = has_lb[static_cast<size_t>(i)]
                              ? -(rcl[i] + it.zl[i] * odx[i]) / it.sl[i]
                              : 0.0;
                odzu[i] = has_ub[static_cast<size_t>(i)]
                              ? -(rcu[i] - it.zu[i] * odx[i]) / it.su[i]
                              : 0.0;
            }
        };

        // Predictor (affine scaling) direction.
        VectorXd rcl(n), rcu(n), rcg(mg);
        for (Eigen::Index i = 0; i < n; ++i) {
            rcl[i] = has_lb[static_cast<size_t>(i)] ? it.sl[i] * it.zl[i] : 0.0;
            rcu[i] = has_ub[static_cast<size_t>(i)] ? it.su[i] * it.zu[i] : 0.0;
        }
        if (mg) rcg = it.sg.cwiseProduct(it.zg);
        solve_direction(rcl, rcu, rcg, dx_a, dy_a, dsg_a, dzg_a, dzl_a, dzu_a);

        auto step_lengths = [&](const VectorXd& odx, const VectorXd& odsg, const VectorXd& odzg,
                                const VectorXd& odzl, const VectorXd& odzu, double tau) {
            double ap = 1.0, ad = 1.0;
            if (mg) {
                ap = std::min(ap, detail::step_to_boundary(it.sg, odsg, tau));
                ad = std::min(ad, detail::step_to_boundary(it.zg, odzg, tau));
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)]) {
                    if (odx[i] < 0.0) ap = std::min(ap, -tau * it.sl[i] / odx[i]);
                    if (odzl[i] < 0.0) ad = std::min(ad, -tau * it.zl[i] / odzl[i]);
                }
                if (has_ub[static_cast<size_t>(i)]) {
                    if (odx[i] > 0.0) ap = std::min(ap, tau * it.su[i] / odx[i]);
                    if (odzu[i] < 0.0) ad = std::min(ad, -tau * it.zu[i] / odzu[i]);
                }
            }
            return std::pair<double, double>(ap, ad);
        };

        const auto [apa, ada] = step_lengths(dx_a, dsg_a, dzg_a, dzl_a, dzu_a, 1.0);
        // Complementarity the affine step would reach.
        double mu_aff_acc = 0.0;
        if (mg)
            mu_aff_acc += (it.sg + apa * dsg_a).dot(it.zg + ada * dzg_a);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (has_lb[static_cast<size_t>(i)])
                mu_aff_acc += (it.sl[i] + apa * dx_a[i]) * (it.zl[i] + ada * dzl_a[i]);
            if (has_ub[static_cast<size_t>(i)])
                mu_aff_acc += (it.su[i] - apa * dx_a[i]) * (it.zu[i] + ada * dzu_a[i]);
        }
        const double mu_aff = mu_aff_acc / m_total;
        const double sigma = std::pow(std::clamp(mu_aff / std::max(mu, 1e-300), 0.0, 1.0), 3);

        // Corrector.
        for (Eigen::Index i = 0; i < n; ++i) {
            if (has_lb[static_cast<size_t>(i)])
                rcl[i] = it.sl[i] * it.zl[i] + dx_a[i] * dzl_a[i] - sigma * mu;
            if (has_ub[static_cast<size_t>(i)])
                rcu[i] = it.su[i] * it.zu[i] - dx_a[i] * dzu_a[i] - sigma * mu;
        }
        if (mg)
            rcg = it.sg.cwiseProduct(it.zg) + dsg_a.cwiseProduct(dzg_a) -
                  VectorXd::Constant(mg, sigma * mu);
        solve_direction(rcl, rcu, rcg, dx, dy, dsg, dzg, dzl, dzu);

        const double tau = std::clamp(1.0 - 1e2 * mu / data_scale, 0.995, 0.99999);
        // Equal primal/dual steps: complementarity pairs stay together, which
        // keeps the dual recovery divisions well scaled.
        auto [ap, ad] = step_lengths(dx, dsg, dzg, dzl, dzu, tau);
        ap = ad = std::min(ap, ad);

        // Centrality safeguard: cut the step until every complementarity
        // product stays above a small fraction of the average, keeping the
        // iterates inside a wide neighborhood of the central path.
        const double gamma = 1e-6;
        double cur_min = kInf;
        {
            if (mg)
                for (Eigen::Index i = 0; i < mg; ++i) cur_min = std::min(cur_min, it.sg[i] * it.zg[i]);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)]) cur_min = std::min(cur_min, it.sl[i] * it.zl[i]);
                if (has_ub[static_cast<size_t>(i)]) cur_min = std::min(cur_min, it.su[i] * it.zu[i]);
            }
        }
        for (int back = 0; cur_min >= gamma * mu && back < 60; ++back) {
            double acc = 0.0, min_prod = kInf;
            auto visit = [&](double s, double z) {
                const double prod = s * z;
                acc += prod;
                min_prod = std::min(min_prod, prod);
            };
            if (mg)
                for (Eigen::Index i = 0; i < mg; ++i)
                    visit(it.sg[i] + ap * dsg[i], it.zg[i] + ad * dzg[i]);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)])
                    visit(it.sl[i] + ap * dx[i], it.zl[i] + ad * dzl[i]);
                if (has_ub[static_cast<size_t>(i)])
                    visit(it.su[i] - ap * dx[i], it.zu[i] + ad * dzu[i]);
            }
            const double mu_cand = acc / m_total;
            if (min_prod >= gamma * mu_cand || (ap < 1e-10 && ad < 1e-10)) break;
            ap *= 0.8;
            ad *= 0.8;
        }

        // A badly conditioned solve can hand back a direction that wrecks
        // the (linear) dual residual; damp the step, and if damping cannot
        // save it, redo the iteration with heavier regularization.
        const double dres_before = detail::scaled_norm(r_x);
        bool accepted = false;
        for (int attempt = 0; attempt < 5 && !accepted; ++attempt) {
            detail::Iterates cand = it;
            cand.x += ap * dx;
            if (me) cand.y += ad * dy;
            if (mg) {
                cand.sg += ap * dsg;
                cand.zg += ad * dzg;
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)]) {
                    cand.sl[i] = std::max(cand.x[i] - p.lb[i], 1e-300);
                    cand.zl[i] += ad * dzl[i];
                }
                if (has_ub[static_cast<size_t>(i)]) {
                    cand.su[i] = std::max(p.ub[i] - cand.x[i], 1e-300);
                    cand.zu[i] += ad * dzu[i];
                }
            }
            VectorXd rx_new = p.q.cwiseProduct(cand.x) + p.c;
            if (me) rx_new += p.A.transpose() * cand.y;
            if (mg) rx_new += p.G.transpose() * cand.zg;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (has_lb[static_cast<size_t>(i)]) rx_new[i] -= cand.zl[i];
                if (has_ub[static_cast<size_t>(i)]) rx_new[i] += cand.zu[i];
            }
            const double dres_after = detail::scaled_norm(rx_new);
            const double allow =
                10.0 * std::max({dres_before, mu, opts.tol * data_scale});
            if (dres_after <= allow) {
                it = std::move(cand);
                accepted = true;
            } else {
                ap *= 0.2;
                ad *= 0.2;
            }
        }
        if (!accepted) {
            reg_mult = std::min(reg_mult * 1e3, 1e9);
            if (++reg_boosts > 6)
                return final_return(Status::max_iterations, best_valid ? best_it : it, iter);
        } else {
            reg_mult = std::max(1.0, reg_mult * 0.1);
        }
    }
    return final_return(Status::max_iterations, best_valid ? best_it : it, opts.max_iterations);
}

}  // namespace flexfleet::qp
