#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "otreg/field_io.hpp"
#include "otreg/functionals.hpp"
#include "otreg/grid.hpp"
#include "otreg/mccann.hpp"

namespace otreg {

/// Number of angular samples on a circle of radius R for grid spacing h: about one per
/// arc length h, rounded up to a multiple of 8.
inline int angular_samples(double R, double h) {
    const int m = static_cast<int>(std::ceil(2.0 * M_PI * R / h / 8.0)) * 8;
    return std::max(m, 16);
}

/// Normal flux data f(theta, t) = j.nu on the circle of radius R, its time average, and the
/// compatibility correction.
struct BoundaryFlux {
    double R = 0.75;
    std::vector<double> theta;                  ///< uniform angles 2 pi i / M
    std::vector<double> times;                  ///< empty for time-independent data
    std::vector<std::vector<double>> samples;   ///< samples[k][i] = f(theta_i, t_k)
    std::vector<double> fbar;                   ///< time average per angle
    double correction = 0.0;                    ///< (1/|dB_R|) int_{B_R} (rho_1 - rho_0)
    double removed_mean = 0.0;                  ///< angular mean of fbar + correction subtracted before solving

    std::size_t size() const { return theta.size(); }

    /// Raw compatibility defect R sum (fbar + correction) dtheta before the mean removal.
    double raw_compatibility() const {
        double s = 0.0;
        for (double f : fbar) s += f + correction;
        return s * R * 2.0 * M_PI / static_cast<double>(theta.size());
    }

    /// Compatible boundary datum at angle th: periodic quadratic B-spline smoothing of the samples.
    double value(double th) const {
        const long M = static_cast<long>(theta.size());
        const double u = th / (2.0 * M_PI) * static_cast<double>(M);
        const long c = static_cast<long>(std::lround(u));
        double v = 0.0;
        for (long i = c - 1; i <= c + 1; ++i) {
            const double x = std::abs(u - static_cast<double>(i));
            const double w = x <= 0.5 ? 0.75 - x * x : (x < 1.5 ? 0.5 * (1.5 - x) * (1.5 - x) : 0.0);
            v += w * fbar[static_cast<std::size_t>(((i % M) + M) % M)];
        }
        return v + correction - removed_mean;
    }

    void enforce_compatibility() {
        double s = 0.0;
        for (double f : fbar) s += f + correction;
        removed_mean = s / static_cast<double>(fbar.size());
    }

    static BoundaryFlux from_function(double R, int M, const std::function<double(double)>& g) {
        if (!(R > 0.0)) throw InputError("boundary radius must be positive");
        if (M < 8) throw InputError("need at least 8 angular samples");
        BoundaryFlux b;
        b.R = R;
        for (int i = 0; i < M; ++i) {
            const double th = 2.0 * M_PI * i / M;
            b.theta.push_back(th);
            b.fbar.push_back(g(th));
        }
        b.samples.push_back(b.fbar);
        b.enforce_compatibility();
        return b;
    }

    /// Samples j.nu of every slice at R, averages them in time (trapezoid) and computes the
    /// correction from the first and last slice densities.
    static BoundaryFlux from_path(const InterpolationPath& path, double R, int M = 0) {
        const Grid& g = path.grid();
        if (M <= 0) M = angular_samples(R, g.spacing());
        BoundaryFlux b;
        b.R = R;
        for (int i = 0; i < M; ++i) b.theta.push_back(2.0 * M_PI * i / M);
        for (const auto& s : path.slices) {
            b.times.push_back(s.t);
            std::vector<double> row(static_cast<std::size_t>(M));
            for (int i = 0; i < M; ++i) {
                const double th = b.theta[static_cast<std::size_t>(i)];
                const Point nu{std::cos(th), std::sin(th), 0.0};
                row[static_cast<std::size_t>(i)] = dot(sample(s.j, R * nu), nu);
            }
            b.samples.push_back(std::move(row));
        }
        b.fbar.assign(static_cast<std::size_t>(M), 0.0);
        for (std::size_t k = 1; k < b.times.size(); ++k) {
            const double dt = b.times[k] - b.times[k - 1];
            for (std::size_t i = 0; i < b.fbar.size(); ++i) b.fbar[i] += 0.5 * dt * (b.samples[k][i] + b.samples[k - 1][i]);
        }
        const auto& r0 = path.slices.front().rho;
        const auto& r1 = path.slices.back().rho;
        const double drho = ball_integral(g, R, [&](std::size_t i) { return r1.values[i] - r0.values[i]; });
        b.correction = drho / (2.0 * M_PI * R);
        b.enforce_compatibility();
        return b;
    }

    /// CSV theta,t,f (t = -1 marks time-independent data).
    CsvTable csv() const {
        CsvTable tab({"theta", "t", "f"});
        for (std::size_t k = 0; k < samples.size(); ++k)
            for (std::size_t i = 0; i < theta.size(); ++i)
                tab.row({CsvTable::num(theta[i]), CsvTable::num(times.empty() ? -1.0 : times[k]), CsvTable::num(samples[k][i])});
        return tab;
    }
};

/// Solution of the Neumann problem on B_R, normalized to zero mean.
struct HarmonicField {
    double R = 0.0;
    ScalarField phi;
    std::vector<std::uint8_t> inside;   ///< nodes with |x| < R
    double residual = 0.0;              ///< max |discrete Laplacian| over inside nodes
    double mean_constant = 0.0;         ///< ball average of phi after the solve (0 up to rounding)
    double flux_shift = 0.0;            ///< constant absorbed by the boundary rows (discrete incompatibility)
    double removed_mean = 0.0;          ///< angular mean removed from the data
};

namespace detail {

/// Biquadratic (3^n node) interpolation weights of point p around its nearest node.
struct QuadStencil {
    std::vector<std::size_t> nodes;
    std::vector<double> weights;
};

inline QuadStencil quadratic_stencil(const Grid& g, const Point& p) {
    const int d = g.dim();
    const double h = g.spacing();
    Index c{0, 0, 0};
    std::array<std::array<double, 3>, 3> w{};
    for (int a = 0; a < d; ++a) {
        const double u = (p[a] + g.halfwidth()) / h;
        c[a] = static_cast<int>(std::lround(u));
        const double t = u - c[a];
        w[a] = {0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)};
    }
    QuadStencil s;
    int total = 1;
    for (int a = 0; a < d; ++a) total *= 3;
    for (int k = 0; k < total; ++k) {
        int rem = k;
        Index idx = c;
        double wt = 1.0;
        for (int a = 0; a < d; ++a) {
            const int o = rem % 3;
            rem /= 3;
            idx[a] += o - 1;
            wt *= w[a][static_cast<std::size_t>(o)];
        }
        if (!g.contains(idx)) throw GeometryError("interpolation stencil leaves the grid");
        s.nodes.push_back(g.flat(idx));
        s.weights.push_back(wt);
    }
    return s;
}

/// Derivative at 0 of the quadratic through (s_i, v_i): weights on v_i.
inline std::array<double, 3> derivative_weights(const std::array<double, 3>& s) {
    std::array<double, 3> w{};
    for (int i = 0; i < 3; ++i) {
        double denom = 1.0;
        for (int j = 0; j < 3; ++j)
            if (j != i) denom *= s[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(j)];
        double num = 0.0;
        for (int k = 0; k < 3; ++k) {
            if (k == i) continue;
            double prod = 1.0;
            for (int j = 0; j < 3; ++j)
                if (j != i && j != k) prod *= -s[static_cast<std::size_t>(j)];
            num += prod;
        }
        w[static_cast<std::size_t>(i)] = num / denom;
    }
    return w;
}

} // namespace detail

/// Five-point Laplacian on nodes inside B_R; nodes in a band of width 2.5h outside the circle
/// carry ghost equations: the one-sided second-order normal derivative at the projection x_b,
/// built from the ghost value and biquadratic interpolants at x_b - h nu and x_b - 2h nu,
/// equals the boundary datum. A Lagrange multiplier pins the ball mean to zero.
inline HarmonicField solve_neumann(double R, const BoundaryFlux& fbar, double h, double tol = 1e-9) {
    if (!(R > 0.0) || !(h > 0.0)) throw InputError("radius and spacing must be positive");
    if (R < 6.0 * h) throw InputError("Neumann disc must span at least 6 grid cells in radius");
    const int half = static_cast<int>(std::ceil(R / h)) + 4;
    const Grid g(2, 2 * half + 1, half * h);
    const double band = R + 2.5 * h;

    std::vector<int> unknown(g.size(), -1);
    std::vector<std::size_t> nodes;
    HarmonicField out;
    out.R = R;
    out.inside.assign(g.size(), 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = norm(g.node(i));
        if (r < band) {
            unknown[i] = static_cast<int>(nodes.size());
            nodes.push_back(i);
        }
        if (r < R) out.inside[i] = 1;
    }
    const int N = static_cast<int>(nodes.size());
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N + 1);
    const double h2 = h * h;
    for (int row = 0; row < N; ++row) {
        const std::size_t i = nodes[static_cast<std::size_t>(row)];
        const Point x = g.node(i);
        if (out.inside[i]) {
            const Index idx = g.multi_index(i);
            trip.emplace_back(row, row, -4.0 / h2);
            for (int a = 0; a < 2; ++a)
                for (int sgn : {-1, 1}) {
                    Index nb = idx;
                    nb[a] += sgn;
                    const int col = unknown[g.flat(nb)];
                    if (col < 0) throw GeometryError("Laplacian stencil leaves the unknown band");
                    trip.emplace_back(row, col, 1.0 / h2);
                }
            continue;
        }
        const double r = norm(x);
        const Point nu = (1.0 / r) * x;
        const Point xb = R * nu;
        const double dist = r - R;
        const auto w = detail::derivative_weights({dist, -h, -2.0 * h});
        // scale rows by h so they are commensurate with the Laplacian rows times h^2
        trip.emplace_back(row, row, w[0] * h);
        for (int m = 1; m <= 2; ++m) {
            const auto st = detail::quadratic_stencil(g, xb - (m * h) * nu);
            for (std::size_t k = 0; k < st.nodes.size(); ++k) {
                const int col = unknown[st.nodes[k]];
                if (col < 0) throw GeometryError("ghost interpolation stencil leaves the unknown band");
                trip.emplace_back(row, col, w[static_cast<std::size_t>(m)] * st.weights[k] * h);
            }
        }
        trip.emplace_back(row, N, -h);
        rhs[row] = fbar.value(std::atan2(x[1], x[0])) * h;
    }
    const BallQuadrature q = ball_quadrature(g, R);
    double wsum = 0.0;
    for (const auto& n : q.nodes) {
        const int col = unknown[n.index];
        if (col < 0) throw GeometryError("mean constraint touches a node outside the band");
        trip.emplace_back(N, col, n.weight);
        wsum += n.weight;
    }
    Eigen::SparseMatrix<double> A(N + 1, N + 1);
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(A);
    lu.factorize(A);
    if (lu.info() != Eigen::Success) throw ConvergenceError("Neumann system factorization failed", std::numeric_limits<double>::infinity());
    Eigen::VectorXd sol = lu.solve(rhs);
    std::vector<double> history;
    for (int it = 0; it < 3; ++it) {
        const Eigen::VectorXd res = rhs - A * sol;
        history.push_back(res.lpNorm<Eigen::Infinity>());
        if (history.back() <= tol * h * h * 1e-3) break;
        sol += lu.solve(res);
    }
    out.phi = ScalarField(g, 0.0);
    for (int k = 0; k < N; ++k) out.phi.values[nodes[static_cast<std::size_t>(k)]] = sol[k];
    out.flux_shift = sol[N];
    out.removed_mean = fbar.removed_mean;

    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!out.inside[i]) continue;
        const Index idx = g.multi_index(i);
        double lap = -4.0 * out.phi.values[i];
        for (int a = 0; a < 2; ++a)
            for (int sgn : {-1, 1}) {
                Index nb = idx;
                nb[a] += sgn;
                lap += out.phi.values[g.flat(nb)];
            }
        worst = std::max(worst, std::abs(lap / h2));
    }
    out.residual = worst;
    double mean = 0.0;
    for (const auto& n : q.nodes) mean += n.weight * out.phi.values[n.index];
    out.mean_constant = mean / wsum;
    history.push_back(worst);
    if (!(worst <= tol)) throw ConvergenceError("Neumann solve did not reach the Laplacian tolerance", worst, history);
    return out;
}

/// Centered-difference gradient of phi at every node (one-sided at the grid edge).
inline VectorField gradient(const ScalarField& phi) {
    const Grid& g = phi.grid;
    const double h = g.spacing();
    VectorField out(g, Point{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Index idx = g.multi_index(i);
        for (int a = 0; a < g.dim(); ++a) {
            Index p = idx, m = idx;
            ++p[a];
            --m[a];
            const bool hp = g.contains(p), hm = g.contains(m);
            if (hp && hm) out.values[i][a] = (phi.values[g.flat(p)] - phi.values[g.flat(m)]) / (2.0 * h);
            else if (hp) out.values[i][a] = (phi.values[g.flat(p)] - phi.values[i]) / h;
            else if (hm) out.values[i][a] = (phi.values[i] - phi.values[g.flat(m)]) / h;
        }
    }
    return out;
}

/// Derivatives of phi at the origin by centered differences of width w.
struct InteriorDerivatives {
    int dim = 2;
    double width = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    std::vector<double> third;          ///< third[(i*n + j)*n + k]
    double energy = 0.0;                ///< int_{B_R} |grad phi|^2
    double grad_ratio = 0.0;            ///< |grad phi(0)|^2 / energy
    double hess_ratio = 0.0;
    double third_ratio = 0.0;

    double d3(int i, int j, int k) const { return third[static_cast<std::size_t>((i * dim + j) * dim + k)]; }
};

inline InteriorDerivatives interior_derivatives(const HarmonicField& phi, int order = 3) {
    if (order < 1 || order > 3) throw InputError("derivative order must be 1, 2 or 3");
    const Grid& g = phi.phi.grid;
    const int n = g.dim();
    const double h = g.spacing();
    const int m = static_cast<int>(std::ceil(std::max(2.0 * h, phi.R / 32.0) / h - 1e-9));
    const double w = m * h;
    const Index c{g.center_index(), g.center_index(), g.center_index()};
    auto at = [&](std::array<int, 3> off) {
        Index idx = c;
        for (int a = 0; a < n; ++a) idx[a] += off[static_cast<std::size_t>(a)] * m;
        if (!g.contains(idx) || !phi.inside[g.flat(idx)]) throw GeometryError("derivative stencil exits B_R");
        return phi.phi.values[g.flat(idx)];
    };
    const int reach = order == 3 ? 2 : 1;
    if (reach * w * std::sqrt(2.0) >= phi.R) throw GeometryError("derivative stencil exits B_R");

    InteriorDerivatives d;
    d.dim = n;
    d.width = w;
    d.grad = Eigen::VectorXd::Zero(n);
    d.hess = Eigen::MatrixXd::Zero(n, n);
    auto e = [&](int a, int s) {
        std::array<int, 3> o{0, 0, 0};
        o[static_cast<std::size_t>(a)] = s;
        return o;
    };
    for (int a = 0; a < n; ++a) d.grad[a] = (at(e(a, 1)) - at(e(a, -1))) / (2.0 * w);
    if (order >= 2) {
        const double f0 = at({0, 0, 0});
        for (int a = 0; a < n; ++a) {
            d.hess(a, a) = (at(e(a, 1)) - 2.0 * f0 + at(e(a, -1))) / (w * w);
            for (int b = a + 1; b < n; ++b) {
                std::array<int, 3> pp{0, 0, 0}, pm{0, 0, 0}, mp{0, 0, 0}, mm{0, 0, 0};
                pp[static_cast<std::size_t>(a)] = 1, pp[static_cast<std::size_t>(b)] = 1;
                pm[static_cast<std::size_t>(a)] = 1, pm[static_cast<std::size_t>(b)] = -1;
                mp[static_cast<std::size_t>(a)] = -1, mp[static_cast<std::size_t>(b)] = 1;
                mm[static_cast<std::size_t>(a)] = -1, mm[static_cast<std::size_t>(b)] = -1;
                d.hess(a, b) = d.hess(b, a) = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * w * w);
            }
        }
    }
    if (order >= 3) {
        d.third.assign(static_cast<std::size_t>(n * n * n), 0.0);
        // second difference along a of the centered first difference along b, at offset o
        auto dab = [&](int a, int b) {
            if (a == b) {
                return (at(e(a, 2)) - 2.0 * at(e(a, 1)) + 2.0 * at(e(a, -1)) - at(e(a, -2))) / (2.0 * w * w * w);
            }
            auto val = [&](int sa, int sb) {
                std::array<int, 3> o{0, 0, 0};
                o[static_cast<std::size_t>(a)] = sa;
                o[static_cast<std::size_t>(b)] = sb;
                return at(o);
            };
            const double plus = val(1, 1) - 2.0 * val(0, 1) + val(-1, 1);
            const double minus = val(1, -1) - 2.0 * val(0, -1) + val(-1, -1);
            return (plus - minus) / (2.0 * w * w * w);
        };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) {
                    // fully symmetric tensor: count multiplicities
                    std::array<int, 3> cnt{0, 0, 0};
                    ++cnt[static_cast<std::size_t>(i)];
                    ++cnt[static_cast<std::size_t>(j)];
                    ++cnt[static_cast<std::size_t>(k)];
                    int a = -1, b = -1;
                    for (int s = 0; s < n; ++s) {
                        if (cnt[static_cast<std::size_t>(s)] == 3) a = b = s;
                        if (cnt[static_cast<std::size_t>(s)] == 2) a = s;
                    }
                    double v;
                    if (a >= 0 && b >= 0) {
                        v = dab(a, a);
                    } else if (a >= 0) {
                        for (int s = 0; s < n; ++s)
                            if (cnt[static_cast<std::size_t>(s)] == 1) b = s;
                        v = dab(a, b);
                    } else {
                        // three distinct indices (n = 3): mixed third difference
                        std::array<int, 3> ids{i, j, k};
                        double acc = 0.0;
                        for (int sx : {-1, 1})
                            for (int sy : {-1, 1})
                                for (int sz : {-1, 1}) {
                                    std::array<int, 3> o{0, 0, 0};
                                    o[static_cast<std::size_t>(ids[0])] = sx;
                                    o[static_cast<std::size_t>(ids[1])] = sy;
                                    o[static_cast<std::size_t>(ids[2])] = sz;
                                    acc += sx * sy * sz * at(o);
                                }
                        v = acc / (8.0 * w * w * w);
                    }
                    d.third[static_cast<std::size_t>((i * n + j) * n + k)] = v;
                }
    }
    const VectorField grad = gradient(phi.phi);
    const double r_in = phi.R - 2.0 * h;
    d.energy = ball_integral(g, r_in, [&](std::size_t i) { return norm2(grad.values[i]); });
    if (d.energy > 0.0) {
        d.grad_ratio = d.grad.squaredNorm() / d.energy;
        d.hess_ratio = d.hess.squaredNorm() / d.energy;
        double t2 = 0.0;
        for (double v : d.third) t2 += v * v;
        d.third_ratio = t2 / d.energy;
    }
    return d;
}

/// Boundary flux energy int_0^1 int_{dB_R} |j|^2 for one radius (trapezoid in t).
inline double boundary_energy(const InterpolationPath& path, double R) {
    const Grid& g = path.grid();
    const int M = angular_samples(R, g.spacing());
    std::vector<double> per;
    for (const auto& s : path.slices) {
        double acc = 0.0;
        for (int i = 0; i < M; ++i) {
            const double th = 2.0 * M_PI * i / M;
            acc += norm2(sample(s.j, Point{R * std::cos(th), R * std::sin(th), 0.0}));
        }
        per.push_back(acc * 2.0 * M_PI * R / M);
    }
    double e = 0.0;
    for (std::size_t k = 1; k < per.size(); ++k) e += 0.5 * (per[k] + per[k - 1]) * (path.slices[k].t - path.slices[k - 1].t);
    return e;
}

/// Candidate radius with the smallest boundary flux energy; ties go to the smallest radius.
inline double good_radius(const InterpolationPath& path, const std::vector<double>& candidates,
                          std::vector<double>* energies = nullptr) {
    if (candidates.size() < 3) throw UsageError("good_radius needs at least three candidates");
    std::vector<double> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    double best_r = std::numeric_limits<double>::quiet_NaN();
    double best_e = std::numeric_limits<double>::infinity();
    if (energies) energies->clear();
    for (double R : sorted) {
        const double e = boundary_energy(path, R);
        if (energies) energies->push_back(e);
        if (!std::isfinite(e)) continue;
        if (e < best_e * (1.0 - 1e-12) || std::isnan(best_r)) {
            best_e = e;
            best_r = R;
        }
    }
    if (std::isnan(best_r)) throw InputError("all candidate radii give non-finite boundary energy");
    return best_r;
}

/// Default candidates 0.55, 0.60, ..., 0.95 (times the scale).
inline std::vector<double> default_radius_candidates(double scale = 1.0) {
    std::vector<double> c;
    for (int k = 11; k <= 19; ++k) c.push_back(scale * 0.05 * k);
    return c;
}

/// Gradient of the harmonic field at a point (multilinear sampling of centered differences).
struct HarmonicGradient {
    VectorField grad;
    explicit HarmonicGradient(const HarmonicField& phi) : grad(gradient(phi.phi)) {}
    Point operator()(const Point& x) const { return sample(grad, x); }
};

struct HarmonicDefect {
    double defect = 0.0;    ///< int_{B_{1/8}} |T - x - grad phi|^2 rho0
    double energy = 0.0;    ///< int_{B_{1/8}} |grad phi|^2
};

inline HarmonicDefect harmonic_defect(const VectorField& T, const DensityField& rho0, const HarmonicField& phi,
                                      double radius = 0.125) {
    require_same_grid(T.grid, rho0.grid, "harmonic_defect(T, rho0)");
    if (phi.R < radius) throw GeometryError("harmonic field does not cover B_{1/8}");
    const HarmonicGradient dphi(phi);
    const Grid& g = rho0.grid;
    HarmonicDefect out;
    out.defect = ball_integral(g, radius, [&](std::size_t i) {
        const Point x = g.node(i);
        const double r0 = rho0.support[i] ? rho0.values[i] : 0.0;
        return norm2(T.values[i] - x - dphi(x)) * r0;
    });
    out.energy = ball_integral(g, radius, [&](std::size_t i) { return norm2(dphi(g.node(i))); });
    return out;
}

/// Per-run report R,boundary_energy,defect,energy,ratio_lag1,ratio_lag2 where
/// ratio_lag1 = defect / (E^{(n+3)/(n+2)} + gamma^2) and ratio_lag2 = energy / (E + gamma^2).
inline CsvTable harmonic_report(double R, double boundary_e, const HarmonicDefect& d, double E, double gamma, int n = 2) {
    CsvTable tab({"R", "boundary_energy", "defect", "energy", "ratio_lag1", "ratio_lag2"});
    const double l1 = std::pow(E, (n + 3.0) / (n + 2.0)) + gamma * gamma;
    const double l2 = E + gamma * gamma;
    tab.row({CsvTable::num(R), CsvTable::num(boundary_e), CsvTable::num(d.defect), CsvTable::num(d.energy),
             CsvTable::num(l1 > 0 ? d.defect / l1 : 0.0), CsvTable::num(l2 > 0 ? d.energy / l2 : 0.0)});
    return tab;
}

} // namespace otreg
