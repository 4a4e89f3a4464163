#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flexfleet/reduction.hpp"
#include "flexfleet/scenario.hpp"
#include "flexfleet/ucsolver.hpp"

namespace flexfleet {

enum class Method { m1, m2, m3, m4, m5 };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::m1: return "m1";
        case Method::m2: return "m2";
        case Method::m3: return "m3";
        case Method::m4: return "m4";
        case Method::m5: return "m5";
    }
    return "?";
}

/// One row of a study: which method ran on which instance, what it cost, how
/// long it took, and how it compares to the oracle objective if one exists.
struct ExperimentReport {
    std::string method;
    std::string instance_id;
    int T = 0;
    int N = 0;
    uint64_t seed = 0;
    std::string status = "optimal";
    double objective = std::numeric_limits<double>::quiet_NaN();
    double solve_ms = 0.0;
    double selection_ms = 0.0;
    int n_constraints = 0;
    std::optional<bool> success;             // objective matches oracle within tol
    std::optional<double> oracle_objective;
    std::optional<double> rel_gap;
    std::optional<bool> feasible;            // profile realizable by the fleet
};

inline constexpr const char* kReportCsvHeader =
    "method,instance_id,T,N,seed,status,objective,solve_ms,selection_ms,n_constraints,success,"
    "oracle_objective,rel_gap,feasible";

inline std::string to_csv_row(const ExperimentReport& r) {
    std::ostringstream os;
    os.precision(12);
    os << r.method << ',' << r.instance_id << ',' << r.T << ',' << r.N << ',' << r.seed << ','
       << r.status << ',' << r.objective << ',' << r.solve_ms << ',' << r.selection_ms << ','
       << r.n_constraints << ',';
    if (r.success) os << (*r.success ? "1" : "0");
    os << ',';
    if (r.oracle_objective) os << *r.oracle_objective;
    os << ',';
    if (r.rel_gap) os << *r.rel_gap;
    os << ',';
    if (r.feasible) os << (*r.feasible ? "1" : "0");
    return os.str();
}

inline void write_report_csv(const std::string& path, std::vector<ExperimentReport> rows) {
    std::sort(rows.begin(), rows.end(), [](const ExperimentReport& a, const ExperimentReport& b) {
        return std::tie(a.method, a.T, a.N, a.seed, a.instance_id) <
               std::tie(b.method, b.T, b.N, b.seed, b.instance_id);
    });
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << kReportCsvHeader << "\n";
    for (const auto& r : rows) out << to_csv_row(r) << "\n";
}

namespace detail {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Run one method on one single-bus case. M1 keeps devices individual; the
/// others select a constraint family and solve the aggregate program.
inline ExperimentReport run_method(const SingleBusCase& c, Method method, uint64_t seed,
                                   const SelectionOptions& sel = {}, const SolveOptions& opts = {}) {
    ExperimentReport r;
    r.method = to_string(method);
    r.T = c.fleet.horizon().num_steps;
    r.N = static_cast<int>(c.fleet.size());
    r.seed = seed;
    r.instance_id =
        "T" + std::to_string(r.T) + "N" + std::to_string(r.N) + "s" + std::to_string(seed);

    if (method == Method::m1) {
        UcProblem p;
        p.horizon = c.fleet.horizon();
        p.generators = c.generators;
        p.inflexible_kw = c.inflexible_kw;
        p.fleet_model = PerDeviceModel{c.fleet};
        detail::Stopwatch w;
        Solution sol = solve_per_device(p, opts);
        r.solve_ms = w.ms();
        r.status = to_string(sol.status);
        if (sol.status == SolveStatus::optimal) r.objective = sol.objective;
        return r;
    }

    ConstraintSet cs;
    detail::Stopwatch sw;
    switch (method) {
        case Method::m2: cs = exhaustive_constraints(c.fleet, sel); break;
        case Method::m3: cs = combinatorial_selection(c.fleet, c.inflexible_kw, sel); break;
        case Method::m4: cs = greedy_selection_1(c.fleet, c.inflexible_kw, sel); break;
        case Method::m5: cs = greedy_selection_2(c.fleet, c.inflexible_kw, sel); break;
        default: break;
    }
    r.selection_ms = sw.ms();
    r.n_constraints = static_cast<int>(cs.constraints.size());

    UcProblem p;
    p.horizon = c.fleet.horizon();
    p.generators = c.generators;
    p.inflexible_kw = c.inflexible_kw;
    p.fleet_model = AggregateModel{std::move(cs), c.fleet.total_energy()};
    detail::Stopwatch w;
    Solution sol = solve_aggregate(p, opts);
    r.solve_ms = w.ms();
    r.status = to_string(sol.status);
    if (sol.status == SolveStatus::optimal) r.objective = sol.objective;
    return r;
}

inline void score_against_oracle(ExperimentReport& r, double oracle_objective, double tol) {
    r.oracle_objective = oracle_objective;
    const double gap = std::abs(r.objective - oracle_objective) /
                       std::max(1.0, std::abs(oracle_objective));
    r.rel_gap = gap;
    r.success = gap <= tol;
}

// ---------------------------------------------------------------------------

struct EquivalenceConfig {
    int instances = 100;
    int T = 8;
    std::vector<int> Ns{5, 10, 20};
    uint64_t seed = 1;
    double tol = 1e-7;          // m1/m2/m3 must agree this tightly
    double success_tol = 1e-6;  // greedy success threshold
};

struct EquivalenceSummary {
    std::vector<ExperimentReport> reports;
    double max_gap_m2 = 0.0;  // worst |m2 - m1| relative
    double max_gap_m3 = 0.0;
    int count = 0;
};

/// Objective agreement study: the per-device, exhaustive, and exact-selection
/// routes must coincide; greedy methods get success flags.
inline EquivalenceSummary run_equivalence(const EquivalenceConfig& cfg) {
    EquivalenceSummary out;
    int idx = 0;
    for (int n : cfg.Ns) {
        const int per_n = cfg.instances / static_cast<int>(cfg.Ns.size());
        for (int i = 0; i < per_n; ++i, ++idx) {
            const uint64_t seed = Rng::derive(cfg.seed, static_cast<uint64_t>(idx));
            SingleBusCase c = make_single_bus_case(cfg.T, n, seed);
            ExperimentReport m1 = run_method(c, Method::m1, seed);
            ExperimentReport m2 = run_method(c, Method::m2, seed);
            ExperimentReport m3 = run_method(c, Method::m3, seed);
            ExperimentReport m4 = run_method(c, Method::m4, seed);
            ExperimentReport m5 = run_method(c, Method::m5, seed);
            const double denom = std::max(1.0, std::abs(m1.objective));
            out.max_gap_m2 = std::max(out.max_gap_m2, std::abs(m2.objective - m1.objective) / denom);
            out.max_gap_m3 = std::max(out.max_gap_m3, std::abs(m3.objective - m1.objective) / denom);
            score_against_oracle(m2, m1.objective, cfg.tol);
            score_against_oracle(m3, m1.objective, cfg.tol);
            score_against_oracle(m4, m1.objective, cfg.success_tol);
            score_against_oracle(m5, m1.objective, cfg.success_tol);
            for (auto& r : {m1, m2, m3, m4, m5}) out.reports.push_back(r);
            ++out.count;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct SuccessRateConfig {
    int instances = 1000;
    int T = 24;
    int N = 10;
    uint64_t seed = 2;
    double tol = 1e-6;
};

struct SuccessRateSummary {
    int count = 0;
    int greedy1_hits = 0;
    int greedy2_hits = 0;
    double greedy1_rate = 0.0;
    double greedy2_rate = 0.0;
    double greedy1_mean_fail_gap = 0.0;
    double greedy2_mean_fail_gap = 0.0;
    std::vector<ExperimentReport> reports;
};

/// How often the two greedy families reproduce the per-device optimum.
inline SuccessRateSummary run_success_rate(const SuccessRateConfig& cfg) {
    SuccessRateSummary out;
    double fail_gap1 = 0.0, fail_gap2 = 0.0;
    int fails1 = 0, fails2 = 0;
    for (int i = 0; i < cfg.instances; ++i) {
        const uint64_t seed = Rng::derive(cfg.seed, static_cast<uint64_t>(i));
        SingleBusCase c = make_single_bus_case(cfg.T, cfg.N, seed);
        ExperimentReport m1 = run_method(c, Method::m1, seed);
        ExperimentReport m4 = run_method(c, Method::m4, seed);
        ExperimentReport m5 = run_method(c, Method::m5, seed);
        score_against_oracle(m4, m1.objective, cfg.tol);
        score_against_oracle(m5, m1.objective, cfg.tol);
        if (*m4.success)
            ++out.greedy1_hits;
        else {
            fail_gap1 += *m4.rel_gap;
            ++fails1;
        }
        if (*m5.success)
            ++out.greedy2_hits;
        else {
            fail_gap2 += *m5.rel_gap;
            ++fails2;
        }
        out.reports.push_back(m1);
        out.reports.push_back(m4);
        out.reports.push_back(m5);
        ++out.count;
    }
    out.greedy1_rate = static_cast<double>(out.greedy1_hits) / std::max(1, out.count);
    out.greedy2_rate = static_cast<double>(out.greedy2_hits) / std::max(1, out.count);
    out.greedy1_mean_fail_gap = fails1 ? fail_gap1 / fails1 : 0.0;
    out.greedy2_mean_fail_gap = fails2 ? fail_gap2 / fails2 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------

struct TimingConfig {
    std::vector<int> Ts{8, 16, 24};
    std::vector<int> Ns{10, 100, 1000, 10000};
    int instances = 5;           // per cell; medians are reported
    int selection_instances = 10;  // for the selection-time comparison cell
    uint64_t seed = 3;
    int selection_T = 24;        // cell where all three selectors are timed
    int selection_N = 10;
};

struct TimingSummary {
    std::vector<ExperimentReport> reports;
    // method -> per-(T,N) medians live in the reports; convenience pulls:
    std::vector<double> m1_median_solve_by_n;        // at Ts.back()
    std::vector<double> aggregate_median_solve_by_n; // m5 solve at Ts.back()
    double selection_median_m3 = 0.0;
    double selection_median_m4 = 0.0;
    double selection_median_m5 = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

/// Spearman rank correlation with tie-averaged ranks.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < idx.size()) {
            size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::max(1e-300, std::sqrt(da * db));
}

/// Wall-clock study. Per-device and one-slot-greedy runs cover the full
/// (T, N) grid; the three selectors are additionally timed head-to-head on
/// the designated cell. Only orderings of these numbers are meaningful.
inline TimingSummary run_timing(const TimingConfig& cfg) {
    TimingSummary out;
    for (int T : cfg.Ts)
        for (int N : cfg.Ns)
            for (int i = 0; i < cfg.instances; ++i) {
                const uint64_t seed =
                    Rng::derive(cfg.seed, static_cast<uint64_t>(T * 1000000 + N * 10 + i));
                SingleBusCase c = make_single_bus_case(T, N, seed);
                out.reports.push_back(run_method(c, Method::m1, seed));
                out.reports.push_back(run_method(c, Method::m5, seed));
            }
    for (int i = 0; i < cfg.selection_instances; ++i) {
        const uint64_t seed = Rng::derive(cfg.seed, 777000 + static_cast<uint64_t>(i));
        SingleBusCase c = make_single_bus_case(cfg.selection_T, cfg.selection_N, seed);
        out.reports.push_back(run_method(c, Method::m3, seed));
        out.reports.push_back(run_method(c, Method::m4, seed));
        out.reports.push_back(run_method(c, Method::m5, seed));
    }

    const int t_last = cfg.Ts.back();
    for (int N : cfg.Ns) {
        std::vector<double> m1_times, m5_times;
        for (const auto& r : out.reports) {
            if (r.T != t_last || r.N != N) continue;
            if (r.method == "m1") m1_times.push_back(r.solve_ms);
            if (r.method == "m5" && r.N == N) m5_times.push_back(r.solve_ms);
        }
        out.m1_median_solve_by_n.push_back(median(m1_times));
        out.aggregate_median_solve_by_n.push_back(median(m5_times));
    }
    std::vector<double> s3, s4, s5;
    for (const auto& r : out.reports) {
        if (r.T != cfg.selection_T || r.N != cfg.selection_N) continue;
        if (r.method == "m3") s3.push_back(r.selection_ms);
        if (r.method == "m4") s4.push_back(r.selection_ms);
        if (r.method == "m5") s5.push_back(r.selection_ms);
    }
    out.selection_median_m3 = median(s3);
    out.selection_median_m4 = median(s4);
    out.selection_median_m5 = median(s5);
    return out;
}

}  // namespace flexfleet
