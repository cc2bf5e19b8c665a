#pragma once

#include <cmath>

#include "otreg/grid.hpp"

namespace otreg {

/// Averaged L^p distance of a density from 1 on B_r:  (avg_{B_r} |rho - 1|^p)^{1/p}.
/// Nodes outside the support count as density 0.
inline double lp_deviation(const DensityField& rho, double p, double r) {
    if (!(p > rho.grid.dim())) throw InputError("lp_deviation needs p > dimension");
    if (r > rho.grid.halfwidth()) throw DomainError("radius exceeds grid halfwidth");
    const BallQuadrature q = ball_quadrature(rho.grid, r);
    double acc = 0.0, wsum = 0.0;
    for (const auto& n : q.nodes) {
        const double v = rho.support[n.index] ? rho.values[n.index] : 0.0;
        acc += n.weight * std::pow(std::abs(v - 1.0), p);
        wsum += n.weight;
    }
    return std::pow(acc / wsum, 1.0 / p);
}

/// Excess energy (1/R^2) avg_{B_R} |T(x) - x|^2 rho0(x).
inline double excess_energy(const DensityField& rho0, const VectorField& T, double R) {
    require_same_grid(rho0.grid, T.grid, "excess_energy(rho0, T)");
    if (R > rho0.grid.halfwidth()) throw DomainError("radius exceeds grid halfwidth");
    const BallQuadrature q = ball_quadrature(rho0.grid, R);
    double acc = 0.0, wsum = 0.0;
    for (const auto& n : q.nodes) {
        const double r0 = rho0.support[n.index] ? rho0.values[n.index] : 0.0;
        acc += n.weight * norm2(T.values[n.index] - rho0.grid.node(n.index)) * r0;
        wsum += n.weight;
    }
    return acc / wsum / (R * R);
}

/// avg_{B_r} |f|^power.
inline double ball_average(const ScalarField& f, double r, double power) {
    if (!(power > 0.0)) throw InputError("ball_average needs a positive power");
    if (r > f.grid.halfwidth()) throw DomainError("radius exceeds grid halfwidth");
    const BallQuadrature q = ball_quadrature(f.grid, r);
    double acc = 0.0, wsum = 0.0;
    for (const auto& n : q.nodes) {
        acc += n.weight * std::pow(std::abs(f.values[n.index]), power);
        wsum += n.weight;
    }
    return acc / wsum;
}

/// Raw integral over B_r of a per-node integrand (fractional boundary weights).
template <class F>
double ball_integral(const Grid& g, double r, F&& integrand) {
    const BallQuadrature q = ball_quadrature(g, r);
    double acc = 0.0;
    for (const auto& n : q.nodes) acc += n.weight * integrand(n.index);
    return acc * q.cell_volume;
}

/// Volume of the unit ball in R^n.
inline double unit_ball_volume(int n) {
    return std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n + 1.0);
}

/// Surface measure of the unit sphere in R^n.
inline double unit_sphere_area(int n) { return n * unit_ball_volume(n); }

} // namespace otreg
