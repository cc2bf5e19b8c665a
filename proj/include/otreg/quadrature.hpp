#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace otreg {

/// Result of an adaptive quadrature: value, error estimate and whether the tolerance was met.
struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
    bool converged = true;
};

/// Adaptive 15-point Gauss-Kronrod on [a, b] to relative tolerance rel_tol.
inline QuadratureResult adaptive_integrate(const std::function<double(double)>& f, double a, double b,
                                           double rel_tol = 1e-10, unsigned max_depth = 30) {
    QuadratureResult r;
    if (a == b) return r;
    double l1 = 0.0;
    r.value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, max_depth, rel_tol, &r.error, &l1);
    r.converged = std::isfinite(r.value) && r.error <= 10.0 * rel_tol * std::max(l1, 1e-300);
    return r;
}

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) return std::nan("");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0.0 ? sxy / sxx : std::nan("");
}

} // namespace otreg
