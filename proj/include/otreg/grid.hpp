#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "otreg/errors.hpp"

namespace otreg {

/// Point or displacement in R^n, n <= 3. Unused trailing components stay zero.
using Point = std::array<double, 3>;

inline Point operator+(const Point& a, const Point& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Point operator-(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Point operator*(double s, const Point& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline Point& operator+=(Point& a, const Point& b) {
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
    return a;
}
inline double dot(const Point& a, const Point& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Point& a) { return dot(a, a); }
inline double norm(const Point& a) { return std::sqrt(norm2(a)); }

using Index = std::array<int, 3>;

/// Regular grid with an odd number of nodes per axis covering [-halfwidth, halfwidth]^dim.
/// The origin is always a node.
class Grid {
public:
    Grid() = default;

    Grid(int dim, int nodes_per_axis, double halfwidth)
        : dim_(dim), n_(nodes_per_axis), halfwidth_(halfwidth) {
        if (dim < 1 || dim > 3) throw InputError("grid dimension must be 1, 2 or 3");
        if (nodes_per_axis < 3 || nodes_per_axis % 2 == 0)
            throw InputError("grid needs an odd number (>= 3) of nodes per axis");
        if (!(halfwidth > 0.0)) throw InputError("grid halfwidth must be positive");
        h_ = 2.0 * halfwidth / (nodes_per_axis - 1);
        size_ = 1;
        for (int a = 0; a < dim; ++a) size_ *= static_cast<std::size_t>(n_);
    }

    /// Grid with prescribed spacing; halfwidth must be an integer multiple of h.
    static Grid from_spacing(int dim, double h, double halfwidth) {
        if (!(h > 0.0)) throw InputError("grid spacing must be positive");
        const double cells = halfwidth / h;
        const long half = std::lround(cells);
        if (half < 1 || std::abs(cells - static_cast<double>(half)) > 1e-9 * std::max(1.0, cells))
            throw InputError("halfwidth must be an integer multiple of the spacing");
        return Grid(dim, static_cast<int>(2 * half + 1), halfwidth);
    }

    int dim() const { return dim_; }
    int nodes_per_axis() const { return n_; }
    double spacing() const { return h_; }
    double halfwidth() const { return halfwidth_; }
    std::size_t size() const { return size_; }
    double cell_volume() const { return std::pow(h_, dim_); }
    int center_index() const { return (n_ - 1) / 2; }

    Index multi_index(std::size_t flat) const {
        Index idx{0, 0, 0};
        for (int a = 0; a < dim_; ++a) {
            idx[a] = static_cast<int>(flat % static_cast<std::size_t>(n_));
            flat /= static_cast<std::size_t>(n_);
        }
        return idx;
    }

    std::size_t flat(const Index& idx) const {
        std::size_t f = 0;
        for (int a = dim_ - 1; a >= 0; --a) f = f * static_cast<std::size_t>(n_) + static_cast<std::size_t>(idx[a]);
        return f;
    }

    bool contains(const Index& idx) const {
        for (int a = 0; a < dim_; ++a)
            if (idx[a] < 0 || idx[a] >= n_) return false;
        return true;
    }

    double coordinate(int i) const { return -halfwidth_ + i * h_; }

    Point node(const Index& idx) const {
        Point p{0.0, 0.0, 0.0};
        for (int a = 0; a < dim_; ++a) p[a] = coordinate(idx[a]);
        return p;
    }
    Point node(std::size_t flat_index) const { return node(multi_index(flat_index)); }

    /// Flat index of the node nearest to p (clamped to the grid).
    std::size_t nearest(const Point& p) const {
        Index idx{0, 0, 0};
        for (int a = 0; a < dim_; ++a)
            idx[a] = std::clamp(static_cast<int>(std::lround((p[a] + halfwidth_) / h_)), 0, n_ - 1);
        return flat(idx);
    }

    std::size_t origin() const {
        Index idx{0, 0, 0};
        for (int a = 0; a < dim_; ++a) idx[a] = center_index();
        return flat(idx);
    }

    bool operator==(const Grid& o) const {
        return dim_ == o.dim_ && n_ == o.n_ && std::abs(halfwidth_ - o.halfwidth_) <= 1e-12 * halfwidth_;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }

private:
    int dim_ = 2;
    int n_ = 3;
    double halfwidth_ = 1.0;
    double h_ = 1.0;
    std::size_t size_ = 9;
};

/// Values attached to every node of a grid.
template <class T>
struct NodeField {
    Grid grid;
    std::vector<T> values;

    NodeField() = default;
    explicit NodeField(const Grid& g, const T& fill = T{}) : grid(g), values(g.size(), fill) {}

    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }
    std::size_t size() const { return values.size(); }

    template <class F>
    static NodeField from_function(const Grid& g, F&& f) {
        NodeField out(g);
        for (std::size_t i = 0; i < g.size(); ++i) out.values[i] = f(g.node(i));
        return out;
    }
};

/// Real value per node (potentials, quadratics, rescaled potentials).
using ScalarField = NodeField<double>;
/// n-vector per node (maps, displacements, gradients, fluxes).
using VectorField = NodeField<Point>;

/// Nonnegative mass density per node with an explicit support mask.
struct DensityField {
    Grid grid;
    std::vector<double> values;
    std::vector<std::uint8_t> support;

    DensityField() = default;
    explicit DensityField(const Grid& g) : grid(g), values(g.size(), 0.0), support(g.size(), 0) {}

    static DensityField from_values(const Grid& g, std::vector<double> vals) {
        if (vals.size() != g.size()) throw UsageError("density values do not match grid size");
        DensityField d(g);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (!(vals[i] >= 0.0) || !std::isfinite(vals[i])) throw InputError("density values must be finite and >= 0");
            d.support[i] = vals[i] > 0.0 ? 1 : 0;
        }
        d.values = std::move(vals);
        return d;
    }

    template <class F>
    static DensityField from_function(const Grid& g, F&& f) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) v[i] = f(g.node(i));
        return from_values(g, std::move(v));
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }

    double mass() const {
        double m = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (support[i]) m += values[i];
        return m * grid.cell_volume();
    }

    std::size_t support_size() const {
        return static_cast<std::size_t>(std::count(support.begin(), support.end(), std::uint8_t{1}));
    }

    /// Scales values so the discrete mass equals target.
    void normalize_mass(double target) {
        const double m = mass();
        if (!(m > 0.0)) throw InputError("cannot normalize a density with zero mass");
        const double s = target / m;
        for (double& v : values) v *= s;
    }

    bool mass_within(double target, double rel_tol = 1e-8) const {
        return std::abs(mass() - target) <= rel_tol * std::max(std::abs(target), 1e-300);
    }
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (a != b) throw UsageError(std::string("mismatched grids: ") + what);
}

/// One node of a quadrature rule over a ball: flat index and the fraction of its cell inside.
struct WeightedNode {
    std::size_t index;
    double weight;
};

/// Nodes of a grid whose cells meet B_r(center), weighted by cell-in-ball volume fraction.
struct BallQuadrature {
    std::vector<WeightedNode> nodes;
    double cell_volume = 0.0;
    double radius = 0.0;

    /// Discrete volume sum_i w_i h^n.
    double volume() const {
        double s = 0.0;
        for (const auto& n : nodes) s += n.weight;
        return s * cell_volume;
    }
};

/// Cell fractions are measured by 4^n midpoint subsampling of every boundary cell.
inline BallQuadrature ball_quadrature(const Grid& g, double r, const Point& center = {0.0, 0.0, 0.0}) {
    if (!(r > 0.0)) throw DomainError("ball radius must be positive");
    if (r < g.spacing()) throw DomainError("ball radius below grid spacing (empty ball)");
    for (int a = 0; a < g.dim(); ++a)
        if (std::abs(center[a]) + r > g.halfwidth() * (1.0 + 1e-12))
            throw DomainError("ball exceeds grid halfwidth");

    BallQuadrature q;
    q.cell_volume = g.cell_volume();
    q.radius = r;
    const double h = g.spacing();
    const double half_diag = 0.5 * h * std::sqrt(static_cast<double>(g.dim()));
    const int sub = 4;
    int sub_total = 1;
    for (int a = 0; a < g.dim(); ++a) sub_total *= sub;

    Index lo{0, 0, 0}, hi{0, 0, 0};
    for (int a = 0; a < g.dim(); ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((center[a] - r + g.halfwidth()) / h)) - 1);
        hi[a] = std::min(g.nodes_per_axis() - 1, static_cast<int>(std::ceil((center[a] + r + g.halfwidth()) / h)) + 1);
    }
    Index idx = lo;
    const int d = g.dim();
    while (true) {
        const Point x = g.node(idx);
        const double dist = norm(x - center);
        double w = 0.0;
        if (dist + half_diag <= r) {
            w = 1.0;
        } else if (dist - half_diag < r) {
            int inside = 0;
            for (int s = 0; s < sub_total; ++s) {
                int rem = s;
                Point y = x;
                for (int a = 0; a < d; ++a) {
                    const int k = rem % sub;
                    rem /= sub;
                    y[a] += h * ((k + 0.5) / sub - 0.5);
                }
                if (norm2(y - center) < r * r) ++inside;
            }
            w = static_cast<double>(inside) / sub_total;
        }
        if (w > 0.0) q.nodes.push_back({g.flat(idx), w});

        int a = 0;
        for (; a < d; ++a) {
            if (++idx[a] <= hi[a]) break;
            idx[a] = lo[a];
        }
        if (a == d) break;
    }
    return q;
}

/// Multilinear interpolation stencil of a point: up to 2^n (node, weight) pairs.
struct Stencil {
    std::array<std::size_t, 8> index{};
    std::array<double, 8> weight{};
    int count = 0;
    bool inside = true;
};

/// Multilinear weights of p. Points outside the grid get inside = false and clamped weights.
inline Stencil multilinear_stencil(const Grid& g, const Point& p) {
    Stencil s;
    const double h = g.spacing();
    const int n = g.nodes_per_axis();
    std::array<int, 3> base{0, 0, 0};
    std::array<double, 3> frac{0.0, 0.0, 0.0};
    for (int a = 0; a < g.dim(); ++a) {
        double t = (p[a] + g.halfwidth()) / h;
        if (t < 0.0 || t > n - 1) {
            s.inside = false;
            t = std::clamp(t, 0.0, static_cast<double>(n - 1));
        }
        int i = static_cast<int>(std::floor(t));
        if (i >= n - 1) i = n - 2;
        base[a] = i;
        frac[a] = t - i;
    }
    const int corners = 1 << g.dim();
    for (int c = 0; c < corners; ++c) {
        Index idx{0, 0, 0};
        double w = 1.0;
        for (int a = 0; a < g.dim(); ++a) {
            const int bit = (c >> a) & 1;
            idx[a] = base[a] + bit;
            w *= bit ? frac[a] : 1.0 - frac[a];
        }
        s.index[static_cast<std::size_t>(s.count)] = g.flat(idx);
        s.weight[static_cast<std::size_t>(s.count)] = w;
        ++s.count;
    }
    return s;
}

template <class T>
T sample(const NodeField<T>& f, const Point& p) {
    const Stencil s = multilinear_stencil(f.grid, p);
    T out{};
    for (int k = 0; k < s.count; ++k) out = out + s.weight[static_cast<std::size_t>(k)] * f.values[s.index[static_cast<std::size_t>(k)]];
    return out;
}

inline double sample(const DensityField& f, const Point& p) {
    const Stencil s = multilinear_stencil(f.grid, p);
    if (!s.inside) return 0.0;
    double out = 0.0;
    for (int k = 0; k < s.count; ++k) out += s.weight[static_cast<std::size_t>(k)] * f.values[s.index[static_cast<std::size_t>(k)]];
    return out;
}

} // namespace otreg
