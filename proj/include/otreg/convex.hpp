#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "otreg/grid.hpp"

namespace otreg {

/// Worst negative second difference of u along lattice directions, and where it occurs.
struct ConvexityReport {
    double worst_violation = 0.0;   ///< max over nodes/directions of -(u(x+v) - 2u(x) + u(x-v)), >= 0
    std::size_t worst_node = 0;
    bool convex(double tol) const { return worst_violation <= tol; }
};

/// Lattice directions with coprime integer components up to max_step, one per +/- pair.
inline std::vector<Index> lattice_directions(int dim, int max_step) {
    std::vector<Index> dirs;
    const int lo = -max_step, hi = max_step;
    Index v{0, 0, 0};
    for (v[0] = lo; v[0] <= hi; ++v[0])
        for (v[1] = (dim > 1 ? lo : 0); v[1] <= (dim > 1 ? hi : 0); ++v[1])
            for (v[2] = (dim > 2 ? lo : 0); v[2] <= (dim > 2 ? hi : 0); ++v[2]) {
                int first = 0;
                for (int a = 0; a < 3; ++a)
                    if (v[a] != 0) {
                        first = v[a];
                        break;
                    }
                if (first <= 0) continue;
                int g = 0;
                for (int a = 0; a < 3; ++a) g = std::gcd(g, std::abs(v[a]));
                if (g != 1) continue;
                dirs.push_back(v);
            }
    return dirs;
}

/// Necessary condition for discrete convexity: nonnegative second differences along
/// lattice directions with components up to max_step.
inline ConvexityReport lattice_convexity(const ScalarField& u, int max_step = 2) {
    const Grid& g = u.grid;
    ConvexityReport rep;
    const auto dirs = lattice_directions(g.dim(), max_step);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Index idx = g.multi_index(i);
        for (const Index& v : dirs) {
            Index p = idx, m = idx;
            for (int a = 0; a < g.dim(); ++a) {
                p[a] += v[a];
                m[a] -= v[a];
            }
            if (!g.contains(p) || !g.contains(m)) continue;
            const double d2 = u.values[g.flat(p)] - 2.0 * u.values[i] + u.values[g.flat(m)];
            const double scale = std::max({1.0, std::abs(u.values[i])});
            const double viol = -d2 / scale;
            if (viol > rep.worst_violation) {
                rep.worst_violation = viol;
                rep.worst_node = i;
            }
        }
    }
    return rep;
}

/// Supremum of the planes x -> u(z) + slope(z).(x - z) over the given nodes z, at every node.
inline ScalarField plane_envelope(const ScalarField& u, const VectorField& slope, const std::vector<std::size_t>& nodes) {
    require_same_grid(u.grid, slope.grid, "plane_envelope(u, slope)");
    const Grid& g = u.grid;
    const int d = g.dim();
    const std::size_t m = nodes.size();
    std::vector<double> c(m), s(m * static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t z = nodes[k];
        const Point xz = g.node(z);
        c[k] = u.values[z] - dot(slope.values[z], xz);
        for (int a = 0; a < d; ++a) s[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)] = slope.values[z][a];
    }
    ScalarField out(g, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point x = g.node(i);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m; ++k) {
            double v = c[k];
            for (int a = 0; a < d; ++a) v += s[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)] * x[a];
            best = std::max(best, v);
        }
        out.values[i] = best;
    }
    return out;
}

/// Worst amount by which u drops below a supporting plane of the given slopes, relative to max(1,|u|).
inline ConvexityReport plane_convexity(const ScalarField& u, const VectorField& slope, const std::vector<std::size_t>& nodes) {
    const ScalarField env = plane_envelope(u, slope, nodes);
    ConvexityReport rep;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double viol = (env.values[i] - u.values[i]) / std::max(1.0, std::abs(u.values[i]));
        if (viol > rep.worst_violation) {
            rep.worst_violation = viol;
            rep.worst_node = i;
        }
    }
    return rep;
}

/// Throws InputError naming the worst node when u fails the lattice convexity check.
inline void require_convex(const ScalarField& u, double tol = 1e-10) {
    const ConvexityReport rep = lattice_convexity(u);
    if (!rep.convex(tol)) {
        const Point x = u.grid.node(rep.worst_node);
        throw InputError("field is not convex: second difference " + std::to_string(-rep.worst_violation) + " at node " +
                         std::to_string(rep.worst_node) + " (" + std::to_string(x[0]) + ", " + std::to_string(x[1]) + ")");
    }
}

} // namespace otreg
