#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flexfleet {

/// Convex non-decreasing generation cost. value() is currency per hour at
/// output g (same power unit as g); marginal() is currency per energy.
struct CostFunction {
    enum class Kind { affine, quadratic, piecewise_linear };

    Kind kind = Kind::affine;
    double a = 0.0;  // quadratic coefficient
    double b = 0.0;  // linear coefficient
    std::vector<double> breakpoints;  // interior breakpoints, ascending
    std::vector<double> slopes;       // breakpoints.size() + 1 segment slopes

    static CostFunction affine(double b) { return CostFunction{Kind::affine, 0.0, b, {}, {}}; }
    static CostFunction quadratic(double a, double b) {
        return CostFunction{Kind::quadratic, a, b, {}, {}};
    }
    static CostFunction piecewise_linear(std::vector<double> breakpoints,
                                         std::vector<double> slopes) {
        CostFunction f;
        f.kind = Kind::piecewise_linear;
        f.breakpoints = std::move(breakpoints);
        f.slopes = std::move(slopes);
        return f;
    }

    void validate() const {
        switch (kind) {
            case Kind::affine:
                if (b < 0.0) throw std::invalid_argument("CostFunction: affine slope must be >= 0");
                break;
            case Kind::quadratic:
                if (a < 0.0 || b < 0.0)
                    throw std::invalid_argument("CostFunction: quadratic needs a >= 0, b >= 0");
                break;
            case Kind::piecewise_linear: {
                if (slopes.size() != breakpoints.size() + 1)
                    throw std::invalid_argument("CostFunction: need breakpoints.size()+1 slopes");
                double prev = 0.0;
                for (size_t i = 0; i < slopes.size(); ++i) {
                    if (slopes[i] < prev - 1e-15)
                        throw std::invalid_argument(
                            "CostFunction: slopes must be non-negative and non-decreasing");
                    prev = slopes[i];
                }
                for (size_t i = 1; i < breakpoints.size(); ++i)
                    if (breakpoints[i] < breakpoints[i - 1])
                        throw std::invalid_argument("CostFunction: breakpoints must ascend");
                break;
            }
        }
    }

    /// Cost rate at output g, measured from g = 0.
    double value(double g) const {
        switch (kind) {
            case Kind::affine: return b * g;
            case Kind::quadratic: return a * g * g + b * g;
            case Kind::piecewise_linear: {
                double acc = 0.0, prev = 0.0;
                size_t seg = 0;
                for (; seg < breakpoints.size() && g > breakpoints[seg]; ++seg) {
                    acc += slopes[seg] * (breakpoints[seg] - prev);
                    prev = breakpoints[seg];
                }
                return acc + slopes[seg] * (g - prev);
            }
        }
        return 0.0;
    }

    double marginal(double g) const {
        switch (kind) {
            case Kind::affine: return b;
            case Kind::quadratic: return 2.0 * a * g + b;
            case Kind::piecewise_linear: {
                size_t seg = 0;
                while (seg < breakpoints.size() && g > breakpoints[seg]) ++seg;
                return slopes[seg];
            }
        }
        return 0.0;
    }
};

struct Generator {
    double g_min_kw = 0.0;
    double g_max_kw = 0.0;
    CostFunction cost;

    void validate() const {
        if (g_min_kw < 0.0 || g_max_kw < g_min_kw)
            throw std::invalid_argument("Generator: need 0 <= g_min <= g_max");
        cost.validate();
    }
};

enum class SolveStatus { optimal, infeasible, max_iterations };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::max_iterations: return "max_iterations";
    }
    return "?";
}

struct SolveOptions {
    double tol = 1e-9;
    int max_iterations = 200;
    bool want_schedules = false;  // per-device model: return u profiles
};

}  // namespace flexfleet
