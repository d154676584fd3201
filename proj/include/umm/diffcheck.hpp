#pragma once

#include <functional>

#include "core.hpp"

namespace umm {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    bool passed = true;
    double step = 1e-5;
};

using ScalarFn = std::function<double(const Vec&)>;

// Central-difference gradient of f at x: (f(x + h e_i) - f(x - h e_i)) / 2h.
inline Vec finite_difference(const ScalarFn& f, const Vec& x, double step = 1e-5) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference: step must be positive");
    Vec g(x.size());
    Vec p = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = x[i] + step;
        double fp = f(p);
        p[i] = x[i] - step;
        double fm = f(p);
        p[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference: non-finite function value");
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// Per-coordinate relative error |a - n| / max(1e-8, |a| + |n|); the floor
// keeps near-zero coordinates from dominating.
inline GradCheckReport check_gradient(const Vec& analytic, const Vec& numeric,
                                      double tolerance = 1e-4, double step = 1e-5) {
    if (analytic.size() != numeric.size())
        throw std::invalid_argument("check_gradient: gradient length mismatch");
    GradCheckReport r;
    r.step = step;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric[i]));
        double rel = std::abs(analytic[i] - numeric[i]) / denom;
        if (rel > r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst_coordinate = i;
        }
    }
    r.passed = r.max_rel_error < tolerance;
    return r;
}

inline GradCheckReport check_gradient(const ScalarFn& f, const Vec& x, const Vec& analytic,
                                      double tolerance = 1e-4, double step = 1e-5) {
    return check_gradient(analytic, finite_difference(f, x, step), tolerance, step);
}

}  // namespace umm
