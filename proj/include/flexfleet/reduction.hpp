#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flexfleet/fleet.hpp"
#include "flexfleet/time_set.hpp"

namespace flexfleet {

struct guard_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct partial_availability_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SelectionMethod {
    exhaustive,
    combinatorial,
    greedy1,
    greedy2,
    full_availability,
    sublevel,
};

inline const char* to_string(SelectionMethod m) {
    switch (m) {
        case SelectionMethod::exhaustive: return "exhaustive";
        case SelectionMethod::combinatorial: return "combinatorial";
        case SelectionMethod::greedy1: return "greedy1";
        case SelectionMethod::greedy2: return "greedy2";
        case SelectionMethod::full_availability: return "full_availability";
        case SelectionMethod::sublevel: return "sublevel";
    }
    return "?";
}

/// One aggregate-demand constraint: sum of d(t)*step over the support may not
/// exceed rhs_kwh. rhs always equals the fleet capacity of the support.
struct AggregateConstraint {
    TimeSet support;
    double rhs_kwh = 0.0;
};

/// A selected family of aggregate constraints plus, for reduced families, the
/// per-slot power caps that guard against gross infeasibilities.
struct ConstraintSet {
    SelectionMethod method = SelectionMethod::exhaustive;
    std::vector<AggregateConstraint> constraints;
    std::optional<std::vector<double>> per_slot_caps_kw;
};

struct SelectionOptions {
    int exhaustive_guard = 20;      // refuse 2^T enumeration beyond this T
    int combinatorial_guard = 24;   // refuse C(T,k) scans beyond this T
    bool override_guard = false;
    int frontier_width = 1;         // candidate chains kept by greedy_selection_2
    double tie_tol = 1e-9;          // relative tolerance for score ties
};

/// Sum of rated powers of the devices available at each slot, kW.
inline std::vector<double> per_slot_power_caps(const Fleet& fleet) {
    const int T = fleet.horizon().num_steps;
    std::vector<double> caps(static_cast<size_t>(T), 0.0);
    for (const Device& dev : fleet.devices())
        dev.availability.for_each([&](int slot) { caps[static_cast<size_t>(slot - 1)] += dev.p_max_kw; });
    return caps;
}

namespace detail {

inline bool tied(double a, double b, double tol) {
    if (!std::isfinite(a) || !std::isfinite(b)) return a == b;
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// Iterates all cardinality-k submasks of `universe` in ascending bitmask
/// order (Gosper successor walked within the compacted universe).
template <class F>
void for_each_k_subset(uint64_t universe, int k, F&& f) {
    const int n = std::popcount(universe);
    if (k < 0 || k > n) return;
    if (k == 0) {
        f(uint64_t{0});
        return;
    }
    std::vector<int> positions;
    positions.reserve(static_cast<size_t>(n));
    uint64_t u = universe;
    while (u) {
        positions.push_back(std::countr_zero(u));
        u &= u - 1;
    }
    const auto expand = [&](uint64_t compact) {
        uint64_t out = 0;
        while (compact) {
            const int i = std::countr_zero(compact);
            out |= uint64_t{1} << positions[static_cast<size_t>(i)];
            compact &= compact - 1;
        }
        return out;
    };
    uint64_t v = (uint64_t{1} << k) - 1;
    const uint64_t last = v << (n - k);
    while (true) {
        f(expand(v));
        if (v == last) break;
        const uint64_t c = v & (~v + 1);
        const uint64_t r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
}

struct ScoreContext {
    const Fleet* fleet;
    std::vector<double> inflexible;  // kW, indexed 0-based
    double step;

    double score(uint64_t mask) const {
        double inflex = 0.0;
        uint64_t b = mask;
        while (b) {
            inflex += inflexible[static_cast<size_t>(std::countr_zero(b))];
            b &= b - 1;
        }
        const double cap = fleet->capacity(TimeSet(mask));
        return (inflex + cap / step) / static_cast<double>(std::popcount(mask));
    }
};

inline ScoreContext make_score_context(const Fleet& fleet, std::span<const double> inflexible) {
    const int T = fleet.horizon().num_steps;
    if (static_cast<int>(inflexible.size()) != T)
        throw std::invalid_argument("constraint selection: inflexible series length != horizon");
    return ScoreContext{&fleet, std::vector<double>(inflexible.begin(), inflexible.end()),
                        fleet.horizon().step_hours};
}

inline AggregateConstraint make_constraint(const Fleet& fleet, uint64_t mask) {
    return AggregateConstraint{TimeSet(mask), fleet.capacity(TimeSet(mask))};
}

}  // namespace detail

/// All 2^T - 1 nonempty supports. Guarded: refuses large horizons unless
/// explicitly overridden.
inline ConstraintSet exhaustive_constraints(const Fleet& fleet, const SelectionOptions& opts = {}) {
    const int T = fleet.horizon().num_steps;
    if (T > opts.exhaustive_guard && !opts.override_guard)
        throw guard_error("exhaustive_constraints: horizon " + std::to_string(T) +
                          " exceeds guard " + std::to_string(opts.exhaustive_guard) +
                          " (override to proceed)");
    ConstraintSet out;
    out.method = SelectionMethod::exhaustive;
    const uint64_t full = fleet.horizon().full_mask();
    out.constraints.reserve(full);
    for (uint64_t mask = 1; mask <= full; ++mask)
        out.constraints.push_back(detail::make_constraint(fleet, mask));
    return out;
}

/// The T nested prefix supports of the slots sorted by inflexible demand
/// (ascending, ties by slot index). Valid only when every device can charge
/// in every slot.
inline ConstraintSet full_availability_constraints(const Fleet& fleet,
                                                   std::span<const double> inflexible_kw,
                                                   const SelectionOptions& opts = {}) {
    (void)opts;
    const int T = fleet.horizon().num_steps;
    if (static_cast<int>(inflexible_kw.size()) != T)
        throw std::invalid_argument("full_availability_constraints: inflexible length != horizon");
    const TimeSet full = TimeSet::full(T);
    for (size_t j = 0; j < fleet.size(); ++j)
        if (fleet.devices()[j].availability != full)
            throw partial_availability_error(
                "full_availability_constraints: device " + std::to_string(j) +
                " does not cover the whole horizon");

    std::vector<int> order(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) order[static_cast<size_t>(t)] = t;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (inflexible_kw[static_cast<size_t>(a)] != inflexible_kw[static_cast<size_t>(b)])
            return inflexible_kw[static_cast<size_t>(a)] < inflexible_kw[static_cast<size_t>(b)];
        return a < b;
    });

    ConstraintSet out;
    out.method = SelectionMethod::full_availability;
    uint64_t mask = 0;
    for (int k = 0; k < T; ++k) {
        mask |= uint64_t{1} << order[static_cast<size_t>(k)];
        out.constraints.push_back(detail::make_constraint(fleet, mask));
    }
    out.per_slot_caps_kw = per_slot_power_caps(fleet);
    return out;
}

/// Exact selection: for every cardinality k the support minimizing the
/// maximum-average-demand score, ties resolved to the smallest bitmask.
/// Cost is a full scan of C(T,k) subsets per k.
inline ConstraintSet combinatorial_selection(const Fleet& fleet,
                                             std::span<const double> inflexible_kw,
                                             const SelectionOptions& opts = {}) {
    const int T = fleet.horizon().num_steps;
    if (T > opts.combinatorial_guard && !opts.override_guard)
        throw guard_error("combinatorial_selection: horizon " + std::to_string(T) +
                          " exceeds guard " + std::to_string(opts.combinatorial_guard));
    const auto ctx = detail::make_score_context(fleet, inflexible_kw);
    const uint64_t full = fleet.horizon().full_mask();

    ConstraintSet out;
    out.method = SelectionMethod::combinatorial;
    for (int k = T; k >= 1; --k) {
        uint64_t best_mask = 0;
        double best_score = std::numeric_limits<double>::infinity();
        detail::for_each_k_subset(full, k, [&](uint64_t mask) {
            const double s = ctx.score(mask);
            if (s < best_score && !detail::tied(s, best_score, opts.tie_tol)) {
                best_score = s;
                best_mask = mask;
            }
            // Ascending enumeration: on a tie the first (smallest) mask stays.
        });
        out.constraints.push_back(detail::make_constraint(fleet, best_mask));
    }
    std::reverse(out.constraints.begin(), out.constraints.end());  // ascending cardinality
    out.per_slot_caps_kw = per_slot_power_caps(fleet);
    return out;
}

/// Nested descent from the full horizon. At each step the best subset S slots
/// smaller than the current one is computed; a tie among minimizers, or a
/// score that fails to improve, widens the step instead of emitting.
inline ConstraintSet greedy_selection_1(const Fleet& fleet, std::span<const double> inflexible_kw,
                                        const SelectionOptions& opts = {}) {
    const auto ctx = detail::make_score_context(fleet, inflexible_kw);
    const int T = fleet.horizon().num_steps;

    ConstraintSet out;
    out.method = SelectionMethod::greedy1;
    uint64_t current = fleet.horizon().full_mask();
    out.constraints.push_back(detail::make_constraint(fleet, current));
    double current_score = ctx.score(current);

    int k = T;
    int step = 1;
    while (k > 1 && k - step >= 1) {
        uint64_t best_mask = 0;
        double best_score = std::numeric_limits<double>::infinity();
        bool tie = false;
        detail::for_each_k_subset(current, k - step, [&](uint64_t mask) {
            const double s = ctx.score(mask);
            if (detail::tied(s, best_score, opts.tie_tol)) {
                tie = true;
            } else if (s < best_score) {
                best_score = s;
                best_mask = mask;
                tie = false;
            }
        });
        const bool improves =
            best_score < current_score && !detail::tied(best_score, current_score, opts.tie_tol);
        if (tie || !improves) {
            ++step;
        } else {
            out.constraints.push_back(detail::make_constraint(fleet, best_mask));
            current = best_mask;
            current_score = best_score;
            k -= step;
            step = 1;
        }
    }
    out.per_slot_caps_kw = per_slot_power_caps(fleet);
    return out;
}

/// One-slot-at-a-time descent: T constraints, each support obtained by
/// deleting the slot whose removal minimizes the score. frontier_width > 1
/// keeps that many candidate chains alive and emits the per-cardinality best.
inline ConstraintSet greedy_selection_2(const Fleet& fleet, std::span<const double> inflexible_kw,
                                        const SelectionOptions& opts = {}) {
    const auto ctx = detail::make_score_context(fleet, inflexible_kw);
    const int T = fleet.horizon().num_steps;
    const int width = std::max(1, opts.frontier_width);

    ConstraintSet out;
    out.method = SelectionMethod::greedy2;
    const uint64_t full = fleet.horizon().full_mask();
    out.constraints.push_back(detail::make_constraint(fleet, full));

    std::vector<uint64_t> frontier{full};
    for (int k = T; k >= 2; --k) {
        // Children: remove one slot from any frontier member. Tie-break keeps
        // the candidate that removed the largest slot index, i.e. the smaller
        // resulting mask among children of the same parent.
        std::vector<std::pair<double, uint64_t>> scored;
        for (uint64_t parent : frontier) {
            uint64_t b = parent;
            while (b) {
                const uint64_t bit = b & (~b + 1);
                b ^= bit;
                const uint64_t child = parent ^ bit;
                scored.emplace_back(ctx.score(child), child);
            }
        }
        std::sort(scored.begin(), scored.end());
        scored.erase(std::unique(scored.begin(), scored.end(),
                                 [](const auto& a, const auto& b) { return a.second == b.second; }),
                     scored.end());
        std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
            if (!detail::tied(a.first, b.first, opts.tie_tol)) return a.first < b.first;
            return a.second < b.second;
        });
        out.constraints.push_back(detail::make_constraint(fleet, scored.front().second));
        frontier.clear();
        for (size_t i = 0; i < scored.size() && static_cast<int>(i) < width; ++i)
            frontier.push_back(scored[i].second);
    }
    out.per_slot_caps_kw = per_slot_power_caps(fleet);
    return out;
}

/// Distinct strict sublevel sets of inflexible + d, smallest first. The last
/// entry is always the full horizon. Slots whose totals differ by less than
/// group_tol (relative to the series scale) are treated as one level.
inline std::vector<TimeSet> sublevel_supports(std::span<const double> inflexible_kw,
                                              std::span<const double> d_kw,
                                              double group_tol = 1e-7) {
    if (inflexible_kw.size() != d_kw.size())
        throw std::invalid_argument("sublevel_supports: series lengths differ");
    const int T = static_cast<int>(d_kw.size());
    std::vector<double> level(static_cast<size_t>(T));
    double scale = 1.0;
    for (int t = 0; t < T; ++t) {
        level[static_cast<size_t>(t)] =
            inflexible_kw[static_cast<size_t>(t)] + d_kw[static_cast<size_t>(t)];
        scale = std::max(scale, std::abs(level[static_cast<size_t>(t)]));
    }
    std::vector<int> order(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) order[static_cast<size_t>(t)] = t;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return level[static_cast<size_t>(a)] < level[static_cast<size_t>(b)]; });

    std::vector<TimeSet> out;
    uint64_t mask = 0;
    for (int i = 0; i < T; ++i) {
        mask |= uint64_t{1} << order[static_cast<size_t>(i)];
        const bool boundary =
            i + 1 == T || level[static_cast<size_t>(order[static_cast<size_t>(i + 1)])] -
                                  level[static_cast<size_t>(order[static_cast<size_t>(i)])] >
                              group_tol * scale;
        if (boundary) out.push_back(TimeSet(mask));
    }
    return out;
}

/// Constraint family carried by the sublevel sets of a (presumed optimal)
/// aggregate profile.
inline ConstraintSet sublevel_constraints(const Fleet& fleet,
                                          std::span<const double> inflexible_kw,
                                          std::span<const double> d_kw,
                                          double group_tol = 1e-7) {
    ConstraintSet out;
    out.method = SelectionMethod::sublevel;
    for (TimeSet w : sublevel_supports(inflexible_kw, d_kw, group_tol))
        out.constraints.push_back(detail::make_constraint(fleet, w.bits()));
    return out;
}

}  // namespace flexfleet
