#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "otreg/convex.hpp"
#include "otreg/field_io.hpp"
#include "otreg/functionals.hpp"
#include "otreg/grid.hpp"
#include "otreg/quadrature.hpp"

namespace otreg {

/// Parameters of the anisotropic counterexample density.
struct CounterexampleSpec {
    double alpha = 0.5;
    double p = 2.0;
    double c = 1.0;
    double d = 1.0;
    double m = 4.0;
    double gamma = 0.0;
    double a = 0.0;
    double b = 0.0;

    static CounterexampleSpec make(double alpha, double p, double c = 1.0, double d = 1.0, double m = 4.0) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
        if (!(p >= 1.0)) throw InputError("p must be at least 1");
        if (!(c > 0.0 && d > 0.0 && m > 0.0)) throw InputError("c, d and m must be positive");
        CounterexampleSpec s;
        s.alpha = alpha;
        s.p = p;
        s.c = c;
        s.d = d;
        s.m = m;
        s.gamma = 2.0 / (2.0 - alpha) + p * alpha + 1.0;
        const double g2 = s.gamma * s.gamma;
        s.a = 2.0 * c * d * (s.gamma + 1.0) / g2;
        s.b = 2.0 * d * d * (2.0 * g2 + 3.0 * s.gamma - 1.0) / g2;
        s.validate();
        return s;
    }

    void validate() const {
        if (!(gamma > 1.0)) throw SpecError("gamma must exceed 1");
        if (!(a > 0.0) || !(b >= 0.0)) throw SpecError("profile constants must give a > 0 and b >= 0");
        if (std::abs(2.0 * p / gamma - 1.0) < 1e-12) throw SpecError("degenerate exponent 2p/gamma = 1");
    }

    /// Constant value on the complement of A_r (the formula on the bounding curves).
    double clamp() const { return a + b * std::pow(m, -2.0 / gamma); }

    bool in_region(double x, double y) const { return y != 0.0 && std::abs(y) >= m * std::pow(std::abs(x), gamma); }

    double operator()(double x, double y) const {
        if (!in_region(x, y)) return clamp();
        return a + b * x * x * std::pow(std::abs(y), -2.0 / gamma);
    }
};

/// Counterexample density sampled on a grid over the square R_r.
inline ScalarField counterexample_density(const CounterexampleSpec& spec, const Grid& g) {
    spec.validate();
    if (g.dim() != 2) throw InputError("counterexample density is two-dimensional");
    return ScalarField::from_function(g, [&](const Point& x) { return spec(x[0], x[1]); });
}

struct CounterexampleRow {
    double r = 0.0;
    double value = 0.0;         ///< (1/r^2) int_{R_r} |f - a|^p
    double root = 0.0;          ///< value^{1/p}
    double ratio = 0.0;         ///< value / r^{p alpha}
    double region = 0.0;        ///< A_r part by adaptive quadrature
    double region_oracle = 0.0; ///< A_r part in closed form
    double complement = 0.0;    ///< clamped complement part
    bool closed_form_inner = false;
};

struct CounterexampleTable {
    std::vector<CounterexampleRow> rows;
    double slope = 0.0;         ///< least-squares slope of log root against log r

    CsvTable csv() const {
        CsvTable tab({"r", "value", "root", "ratio", "region", "region_oracle", "complement", "closed_form_inner"});
        for (const auto& d : rows)
            tab.row({CsvTable::num(d.r), CsvTable::num(d.value), CsvTable::num(d.root), CsvTable::num(d.ratio),
                     CsvTable::num(d.region), CsvTable::num(d.region_oracle), CsvTable::num(d.complement),
                     CsvTable::flag(d.closed_form_inner)});
        return tab;
    }
};

namespace detail {

/// int_0^X b^p x^{2p} [Y^{1-q} - (m x^gamma)^{1-q}] / (1 - q) dx with q = 2p/gamma, Y = r/2.
inline double counterexample_region_oracle(const CounterexampleSpec& s, double r) {
    const double Y = 0.5 * r;
    const double X = std::min(Y, std::pow(Y / s.m, 1.0 / s.gamma));
    const double q = 2.0 * s.p / s.gamma;
    const double bp = std::pow(s.b, s.p);
    const double e1 = 2.0 * s.p + 1.0;
    const double e2 = s.gamma + 1.0;   // 2p + gamma(1 - q) + 1
    const double t1 = std::pow(Y, 1.0 - q) * std::pow(X, e1) / e1;
    const double t2 = std::pow(s.m, 1.0 - q) * std::pow(X, e2) / e2;
    return bp * (t1 - t2) / (1.0 - q);
}

} // namespace detail

/// Quadrature of (1/r^2) int_{R_r} |f - a|^p split into A_r (iterated adaptive Gauss-Kronrod, inner
/// integral in log coordinates) and the clamped complement (exact area of the cusp region).
inline CounterexampleTable counterexample_decay_check(const CounterexampleSpec& spec, const std::vector<double>& radii,
                                             double rel_tol = 1e-9) {
    spec.validate();
    CounterexampleTable out;
    const double q = 2.0 * spec.p / spec.gamma;
    const double bp = std::pow(spec.b, spec.p);
    std::vector<double> lx, ly;
    for (double r : radii) {
        if (!(r > 0.0 && r <= 0.5)) throw InputError("radii must lie in (0, 1/2]");
        CounterexampleRow row;
        row.r = r;
        const double Y = 0.5 * r;
        const double X = std::min(Y, std::pow(Y / spec.m, 1.0 / spec.gamma));
        row.region_oracle = 4.0 * detail::counterexample_region_oracle(spec, r);
        if (bp > 0.0) {
            bool fallback = false;
            auto inner = [&](double x) {
                if (x <= 0.0) return 0.0;
                const double lo = spec.m * std::pow(x, spec.gamma);
                if (lo >= Y) return 0.0;
                auto g = [&](double s) { return std::exp((1.0 - q) * s); };
                const QuadratureResult in = adaptive_integrate(g, std::log(lo), std::log(Y), 1e-12);
                double v = in.value;
                if (!in.converged) {
                    v = (std::pow(Y, 1.0 - q) - std::pow(lo, 1.0 - q)) / (1.0 - q);
                    fallback = true;
                }
                return bp * std::pow(x, 2.0 * spec.p) * v;
            };
            const QuadratureResult outer = adaptive_integrate(inner, 0.0, X, rel_tol);
            row.region = 4.0 * outer.value;
            row.closed_form_inner = fallback;
        }
        const double xc = std::min(Y, std::pow(Y / spec.m, 1.0 / spec.gamma));
        const double cusp = spec.m * std::pow(xc, spec.gamma + 1.0) / (spec.gamma + 1.0) + Y * (Y - xc);
        row.complement = 4.0 * cusp * std::pow(spec.clamp() - spec.a, spec.p);
        row.value = (row.region + row.complement) / (r * r);
        row.root = std::pow(row.value, 1.0 / spec.p);
        row.ratio = row.value / std::pow(r, spec.p * spec.alpha);
        if (row.root > 0.0) {
            lx.push_back(std::log(r));
            ly.push_back(std::log(row.root));
        }
        out.rows.push_back(row);
    }
    out.slope = fit_slope(lx, ly);
    return out;
}

/// Radii 2^{-lo}, ..., 2^{-hi}.
inline std::vector<double> dyadic_radii(int lo, int hi) {
    std::vector<double> r;
    for (int k = lo; k <= hi; ++k) r.push_back(std::ldexp(1.0, -k));
    return r;
}

/// Balls B_{r_k}(z_k), r_k = scale 2^{-k(1 + 2 alpha/(n+4))}, z_k = (2^{-k} - r_k) e_1, k = 1..N_max.
struct SharpnessSpec {
    double alpha = 0.5;
    int n = 2;
    int depth = 10;
    double radius_scale = 0.01;

    double radius(int k) const { return radius_scale * std::pow(2.0, -k * (1.0 + 2.0 * alpha / (n + 4.0))); }
    double offset(int k) const { return std::ldexp(1.0, -k) - radius(k); }
    Point center(int k) const { return {offset(k), 0.0, 0.0}; }

    /// Checks pairwise disjointness and containment in B_{2^{-k}}.
    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw SpecError("alpha must lie in (0, 1)");
        if (n < 2 || n > 3) throw SpecError("dimension must be 2 or 3");
        if (depth < 0) throw SpecError("depth must be nonnegative");
        for (int k = 1; k <= depth; ++k) {
            if (offset(k) + radius(k) > std::ldexp(1.0, -k) * (1.0 + 1e-12) || offset(k) < radius(k))
                throw SpecError("ball " + std::to_string(k) + " is not inside B_{2^-k} away from the origin");
            for (int j = 1; j < k; ++j)
                if (offset(j) - offset(k) < radius(j) + radius(k)) throw SpecError("balls " + std::to_string(j) + " and " + std::to_string(k) + " overlap");
        }
    }

    /// u(x) = max(|x|^2/2, L_k(x)) with L_k the tangent plane of Q at z_k lifted by r_k^2/2.
    double operator()(const Point& x) const {
        double u = 0.5 * norm2(x);
        for (int k = 1; k <= depth; ++k) {
            const Point z = center(k);
            const double r = radius(k);
            u = std::max(u, 0.5 * norm2(z) + dot(z, x - z) + 0.5 * r * r);
        }
        return u;
    }

    /// Exact int_{B_{r_k}(z_k)} (u - Q)^2 = |S^{n-1}| r^{n+4} (1/(n) - 2/(n+2) + 1/(n+4)) / 4.
    double ball_l2(int k) const {
        const double r = radius(k);
        const double nn = n;
        return unit_sphere_area(n) * std::pow(r, n + 4) * (1.0 / nn - 2.0 / (nn + 2.0) + 1.0 / (nn + 4.0)) / 4.0;
    }
};

inline ScalarField sharpness_function(const SharpnessSpec& spec, const Grid& g) {
    spec.validate();
    if (g.dim() != spec.n) throw InputError("grid dimension does not match the spec");
    if (spec.depth >= 1 && 2.0 * spec.radius(spec.depth) / g.spacing() < 8.0)
        throw DomainError("grid does not resolve the smallest ball (need 8 nodes across)");
    return ScalarField::from_function(g, [&](const Point& x) { return spec(x); });
}

struct SharpnessLevel {
    int N = 0;
    double l2_avg = 0.0;        ///< avg_{B_{2^{-N}}} |u - Q|^2
    double l2_ratio = 0.0;      ///< / (2^{-N})^{2(2+alpha)}
    double linf = 0.0;          ///< sup_{B_{2^{-N-1}}} |u - Q|
    double linf_ratio = 0.0;    ///< / (2^{-N})^{2 + 4 alpha/(4+n)}
    bool analytic = true;
};

struct SharpnessReport {
    std::vector<SharpnessLevel> levels;
    double l2_exponent = 0.0;
    double linf_exponent = 0.0;

    CsvTable csv() const {
        CsvTable tab({"N", "l2_avg", "l2_ratio", "linf", "linf_ratio", "analytic"});
        for (const auto& l : levels)
            tab.row({CsvTable::num(l.N), CsvTable::num(l.l2_avg), CsvTable::num(l.l2_ratio), CsvTable::num(l.linf),
                     CsvTable::num(l.linf_ratio), CsvTable::flag(l.analytic)});
        return tab;
    }
};

/// Exponent report over levels N = n_lo..n_hi. Levels resolved by the optional grid field
/// (8 nodes across r_{N+1}) are measured on it; the rest use the exact ball integrals and r_k^2/2.
inline SharpnessReport sharpness_check(const SharpnessSpec& spec, int n_lo, int n_hi, const ScalarField* u = nullptr) {
    spec.validate();
    if (n_lo < 0 || n_hi < n_lo) throw InputError("bad level range");
    SharpnessReport rep;
    std::vector<double> lr, l2, li;
    const double ball_vol = unit_ball_volume(spec.n);
    for (int N = n_lo; N <= n_hi; ++N) {
        SharpnessLevel lv;
        lv.N = N;
        const double rN = std::ldexp(1.0, -N);
        bool numeric = false;
        if (u) {
            const double h = u->grid.spacing();
            numeric = N + 1 <= spec.depth && 2.0 * spec.radius(N + 1) / h >= 8.0 && rN <= u->grid.halfwidth();
        }
        if (numeric) {
            const Grid& g = u->grid;
            double acc = 0.0, w = 0.0;
            for (const auto& nd : ball_quadrature(g, rN).nodes) {
                const double d = u->values[nd.index] - 0.5 * norm2(g.node(nd.index));
                acc += nd.weight * d * d;
                w += nd.weight;
            }
            lv.l2_avg = acc / w;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (norm(g.node(i)) <= 0.5 * rN) lv.linf = std::max(lv.linf, std::abs(u->values[i] - 0.5 * norm2(g.node(i))));
            lv.analytic = false;
        } else {
            double s = 0.0;
            for (int k = std::max(N, 1); k <= spec.depth; ++k) s += spec.ball_l2(k);
            lv.l2_avg = s / (ball_vol * std::pow(rN, spec.n));
            const int k = std::max(N + 1, 1);
            lv.linf = k <= spec.depth ? 0.5 * spec.radius(k) * spec.radius(k) : 0.0;
        }
        lv.l2_ratio = lv.l2_avg / std::pow(rN, 2.0 * (2.0 + spec.alpha));
        lv.linf_ratio = lv.linf / std::pow(rN, 2.0 + 4.0 * spec.alpha / (4.0 + spec.n));
        if (lv.l2_avg > 0.0 && lv.linf > 0.0) {
            lr.push_back(std::log(rN));
            l2.push_back(std::log(lv.l2_avg));
            li.push_back(std::log(lv.linf));
        }
        rep.levels.push_back(lv);
    }
    rep.l2_exponent = fit_slope(lr, l2);
    rep.linf_exponent = fit_slope(lr, li);
    return rep;
}

/// Convex-lemma quantities for the rescaled sharpness function u_N(x) = 4^N u(2^{-N} x):
/// delta^2 = avg_{B_1} |u_N - Q|^2 and sup_{B_{1/2}} |u_N - Q|, both exact.
struct ConvexLemmaRow {
    int N = 0;
    double delta = 0.0;
    double sup_norm = 0.0;
    double ratio = 0.0;   ///< sup / delta^{4/(4+n)}
};

inline ConvexLemmaRow convex_lemma_exact(const SharpnessSpec& spec, int N) {
    const SharpnessLevel lv = sharpness_check(spec, N, N).levels.front();
    ConvexLemmaRow row;
    row.N = N;
    const double s = std::ldexp(1.0, 2 * N);
    row.delta = std::sqrt(s * s * lv.l2_avg);
    row.sup_norm = s * lv.linf;
    row.ratio = row.sup_norm / std::pow(row.delta, 4.0 / (4.0 + spec.n));
    return row;
}

/// u_N = 4^N u(2^{-N} x) sampled on g.
inline ScalarField rescaled_sharpness(const SharpnessSpec& spec, int N, const Grid& g) {
    spec.validate();
    const double s = std::ldexp(1.0, -N);
    return ScalarField::from_function(g, [&](const Point& x) { return spec(s * x) / (s * s); });
}

} // namespace otreg
