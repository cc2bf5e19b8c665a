#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "otreg/field_io.hpp"
#include "otreg/functionals.hpp"
#include "otreg/grid.hpp"

namespace otreg {

/// Density and flux of the displacement interpolation at one time.
struct InterpolationSlice {
    double t = 0.0;
    DensityField rho;
    VectorField j;
    double escaped_mass = 0.0;
    bool truncated = false;

    double linf_density() const {
        double m = 0.0;
        for (std::size_t i = 0; i < rho.size(); ++i)
            if (rho.support[i]) m = std::max(m, rho.values[i]);
        return m;
    }
};

struct InterpolationPath {
    std::vector<InterpolationSlice> slices;
    VectorField map;
    double source_mass = 0.0;

    std::size_t size() const { return slices.size(); }
    const Grid& grid() const { return map.grid; }
};

/// Uniform times 0, 1/(count-1), ..., 1.
inline std::vector<double> uniform_times(int count = 17) {
    if (count < 2) throw InputError("need at least two time slices");
    std::vector<double> t(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) t[static_cast<std::size_t>(k)] = static_cast<double>(k) / (count - 1);
    return t;
}

/// Pushes rho0 along T_t = tT + (1-t)Id by multilinear particle deposition: each node carries
/// mass rho0 h^n to T_t(x) and momentum (T(x) - x) rho0 h^n.
inline InterpolationPath interpolate(const DensityField& rho0, const VectorField& T, const std::vector<double>& times) {
    require_same_grid(rho0.grid, T.grid, "interpolate(rho0, T)");
    if (times.size() < 2) throw UsageError("interpolate needs at least two times");
    if (times.front() != 0.0 || times.back() != 1.0) throw InputError("times must start at 0 and end at 1");
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] < 0.0 || times[k] > 1.0) throw InputError("times must lie in [0, 1]");
        if (k && !(times[k] > times[k - 1])) throw InputError("times must be strictly increasing");
    }
    const Grid& g = rho0.grid;
    const double vol = g.cell_volume();
    InterpolationPath path;
    path.map = T;
    path.source_mass = rho0.mass();
    for (double t : times) {
        InterpolationSlice s;
        s.t = t;
        std::vector<double> mass(g.size(), 0.0);
        s.j = VectorField(g, Point{0.0, 0.0, 0.0});
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!rho0.support[i] || !(rho0.values[i] > 0.0)) continue;
            const double m = rho0.values[i] * vol;
            const Point x = g.node(i);
            const Point v = T.values[i] - x;
            const Point y = x + t * v;
            const Stencil st = multilinear_stencil(g, y);
            if (!st.inside) {
                s.escaped_mass += m;
                s.truncated = true;
                continue;
            }
            for (int k = 0; k < st.count; ++k) {
                const std::size_t node = st.index[static_cast<std::size_t>(k)];
                const double w = st.weight[static_cast<std::size_t>(k)] * m;
                mass[node] += w;
                s.j.values[node] += (w / vol) * v;
            }
        }
        for (double& v : mass) v /= vol;
        s.rho = DensityField::from_values(g, std::move(mass));
        path.slices.push_back(std::move(s));
    }
    return path;
}

namespace detail {

/// Smooth radial test function of support radius s centered at c, scaled so max |grad| = 1.
struct TestBump {
    Point center;
    double radius;

    double operator()(const Point& x) const {
        const double r2 = norm2(x - center) / (radius * radius);
        if (r2 >= 1.0) return 0.0;
        const double w = 1.0 - r2;
        // profile (1 - r^2)^3 has max slope 96/(25 sqrt 5) at r = 1/sqrt 5
        return radius * w * w * w / (96.0 / (25.0 * std::sqrt(5.0)));
    }
};

inline std::vector<TestBump> test_family(const Grid& g) {
    std::vector<TestBump> fam;
    const double hw = g.halfwidth();
    for (double s : {0.25 * hw, 0.5 * hw}) {
        const double step = 0.5 * s;
        const int m = static_cast<int>(std::floor((hw - s) / step));
        for (int i = -m; i <= m; ++i)
            for (int k = (g.dim() > 1 ? -m : 0); k <= (g.dim() > 1 ? m : 0); ++k) {
                Point c{i * step, k * step, 0.0};
                fam.push_back({c, s});
            }
    }
    return fam;
}

} // namespace detail

/// Weak-form residual of d_t rho + div j = 0: the largest over interior slices and over a fixed
/// family of compactly supported test fields zeta with max|grad zeta| = 1 of
/// |sum_x [ (rho_{k+1} - rho_{k-1})/(t_{k+1} - t_{k-1}) zeta + (D_+ . j_k) zeta ] h^n|,
/// where D_+ is the forward-difference divergence.
inline double continuity_residual(const InterpolationPath& path) {
    if (path.size() < 3) throw UsageError("continuity_residual needs at least three slices");
    const Grid& g = path.grid();
    const int d = g.dim();
    const double h = g.spacing();
    const double vol = g.cell_volume();
    const auto family = detail::test_family(g);

    // Backward differences of each test field at every node (adjoint of the forward divergence).
    std::vector<std::vector<double>> zeta(family.size());
    std::vector<std::vector<Point>> dzeta(family.size());
    for (std::size_t f = 0; f < family.size(); ++f) {
        zeta[f].resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) zeta[f][i] = family[f](g.node(i));
        dzeta[f].assign(g.size(), Point{0.0, 0.0, 0.0});
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Index idx = g.multi_index(i);
            for (int a = 0; a < d; ++a) {
                Index m = idx;
                --m[a];
                const double zm = g.contains(m) ? zeta[f][g.flat(m)] : 0.0;
                dzeta[f][i][a] = (zeta[f][i] - zm) / h;
            }
        }
    }
    double worst = 0.0;
    for (std::size_t k = 1; k + 1 < path.size(); ++k) {
        const auto& lo = path.slices[k - 1];
        const auto& hi = path.slices[k + 1];
        const auto& mid = path.slices[k];
        const double dt = hi.t - lo.t;
        for (std::size_t f = 0; f < family.size(); ++f) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double drho = (hi.rho.values[i] - lo.rho.values[i]) / dt;
                acc += drho * zeta[f][i] - dot(mid.j.values[i], dzeta[f][i]);
            }
            worst = std::max(worst, std::abs(acc * vol));
        }
    }
    return worst;
}

/// sup over nodes with |x| <= radius of |T(x) - x|.
inline double displacement_sup(const VectorField& T, double radius) {
    if (radius > T.grid.halfwidth()) throw DomainError("radius exceeds grid halfwidth");
    double s = 0.0;
    for (std::size_t i = 0; i < T.size(); ++i) {
        const Point x = T.grid.node(i);
        if (norm(x) <= radius) s = std::max(s, norm(T.values[i] - x));
    }
    return s;
}

/// Trapezoidal-in-time integral of int_{B_radius} |rho_t - 1| dx.
inline double density_closeness(const InterpolationPath& path, double radius = 0.5) {
    if (path.size() < 2) throw UsageError("density_closeness needs at least two slices");
    const Grid& g = path.grid();
    std::vector<double> vals;
    for (const auto& s : path.slices)
        vals.push_back(ball_integral(g, radius, [&](std::size_t i) { return std::abs((s.rho.support[i] ? s.rho.values[i] : 0.0) - 1.0); }));
    double acc = 0.0;
    for (std::size_t k = 1; k < path.size(); ++k) acc += 0.5 * (vals[k] + vals[k - 1]) * (path.slices[k].t - path.slices[k - 1].t);
    return acc;
}

/// Largest nodewise excess of |j_t| over rho_t * sup|T - x| (nonpositive up to rounding).
inline double flux_domination_defect(const InterpolationPath& path) {
    double sup = 0.0;
    for (std::size_t i = 0; i < path.map.size(); ++i)
        sup = std::max(sup, norm(path.map.values[i] - path.map.grid.node(i)));
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& s : path.slices)
        for (std::size_t i = 0; i < s.rho.size(); ++i) worst = std::max(worst, norm(s.j.values[i]) - s.rho.values[i] * sup);
    return worst;
}

/// Manifest CSV t,mass,escaped_mass,linf_density.
inline CsvTable path_manifest(const InterpolationPath& path) {
    CsvTable tab({"t", "mass", "escaped_mass", "linf_density"});
    for (const auto& s : path.slices)
        tab.row({CsvTable::num(s.t), CsvTable::num(s.rho.mass()), CsvTable::num(s.escaped_mass), CsvTable::num(s.linf_density())});
    return tab;
}

/// Writes slice_KKK_rho.txt / slice_KKK_j.txt per slice plus manifest.csv into dir.
inline void save_path(const InterpolationPath& path, const std::string& dir) {
    std::filesystem::create_directories(dir);
    char name[64];
    for (std::size_t k = 0; k < path.size(); ++k) {
        std::snprintf(name, sizeof name, "slice_%03zu_rho.txt", k);
        save_field(dir + "/" + name, path.slices[k].rho);
        std::snprintf(name, sizeof name, "slice_%03zu_j.txt", k);
        save_field(dir + "/" + name, path.slices[k].j);
    }
    path_manifest(path).save(dir + "/manifest.csv");
}

} // namespace otreg
