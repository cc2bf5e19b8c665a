#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <string>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "otreg/convex.hpp"
#include "otreg/grid.hpp"

namespace otreg {

/// Finite weighted point cloud. Atoms built from a grid remember their node index.
struct DiscreteMeasure {
    int dim = 2;
    std::vector<Point> points;
    std::vector<double> masses;
    std::vector<std::size_t> nodes;

    std::size_t size() const { return points.size(); }
    double total() const { return std::accumulate(masses.begin(), masses.end(), 0.0); }
    bool on_grid() const { return nodes.size() == points.size(); }

    static DiscreteMeasure from_density(const DensityField& rho) {
        DiscreteMeasure m;
        m.dim = rho.grid.dim();
        const double vol = rho.grid.cell_volume();
        for (std::size_t i = 0; i < rho.size(); ++i) {
            if (!rho.support[i] || !(rho.values[i] > 0.0)) continue;
            m.points.push_back(rho.grid.node(i));
            m.masses.push_back(rho.values[i] * vol);
            m.nodes.push_back(i);
        }
        return m;
    }
};

enum class Provenance { exact, entropic };

struct PlanEntry {
    std::size_t source;
    std::size_t target;
    double weight;
};

/// Sparse coupling between two discrete measures, with Kantorovich potentials when known.
/// Potentials use the cost |x-y|^2/2:  source_potential[i] + target_potential[j] <= |x_i-y_j|^2/2.
struct TransportPlan {
    DiscreteMeasure source;
    DiscreteMeasure target;
    std::vector<PlanEntry> entries;
    Provenance provenance = Provenance::exact;
    double reg = 0.0;
    std::vector<double> source_potential;
    std::vector<double> target_potential;
    double marginal_error = 0.0;

    bool has_duals() const {
        return source_potential.size() == source.size() && target_potential.size() == target.size();
    }

    /// sum pi(x,y) |x-y|^2.
    double cost() const {
        double c = 0.0;
        for (const auto& e : entries) c += e.weight * norm2(source.points[e.source] - target.points[e.target]);
        return c;
    }

    std::vector<double> row_sums() const {
        std::vector<double> r(source.size(), 0.0);
        for (const auto& e : entries) r[e.source] += e.weight;
        return r;
    }

    std::vector<double> column_sums() const {
        std::vector<double> c(target.size(), 0.0);
        for (const auto& e : entries) c[e.target] += e.weight;
        return c;
    }

    /// max(|rows - a|_1, |cols - b|_1) / total mass.
    double measured_marginal_error() const {
        const auto r = row_sums();
        const auto c = column_sums();
        double er = 0.0, ec = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) er += std::abs(r[i] - source.masses[i]);
        for (std::size_t j = 0; j < c.size(); ++j) ec += std::abs(c[j] - target.masses[j]);
        return std::max(er, ec) / std::max(source.total(), 1e-300);
    }
};

struct ExactOptions {
    std::size_t max_support = 4096;
    double mass_tolerance = 1e-8;
};

namespace detail {

inline double half_sq_dist(const Point& a, const Point& b) { return 0.5 * norm2(a - b); }

inline void check_balanced(const DiscreteMeasure& a, const DiscreteMeasure& b, double tol) {
    if (a.dim != b.dim) throw UsageError("measures live in different dimensions");
    if (a.size() == 0 || b.size() == 0) throw InputError("empty measure");
    const double ma = a.total(), mb = b.total();
    if (std::abs(ma - mb) > tol * std::max(ma, mb))
        throw InputError("unequal total masses: " + std::to_string(ma) + " vs " + std::to_string(mb));
}

/// Primal network simplex on the complete bipartite transportation graph with an
/// artificial root. Uncapacitated arcs; strongly feasible leaving-arc rule; block pricing.
class TransportSimplex {
public:
    TransportSimplex(const DiscreteMeasure& src, const DiscreteMeasure& dst)
        : src_(src), dst_(dst), m_(src.size()), n_(dst.size()) {
        const std::size_t V = m_ + n_ + 1;
        root_ = m_ + n_;
        parent_.assign(V, kNone);
        arc_.assign(V, kNone);
        up_.assign(V, 0);
        flow_.assign(V, 0.0);
        depth_.assign(V, 0);
        pi_.assign(V, 0.0);

        double max_cost = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) max_cost = std::max(max_cost, cost(i, j));
        art_cost_ = (max_cost + 1.0) * static_cast<double>(V);
        tol_ = 1e-12 * std::max(1.0, max_cost);

        const double scale = src.total() / dst.total();
        for (std::size_t v = 0; v < m_ + n_; ++v) {
            parent_[v] = root_;
            arc_[v] = m_ * n_ + v;
            depth_[v] = 1;
            if (v < m_) {
                up_[v] = 1;
                flow_[v] = src.masses[v];
                pi_[v] = 0.0;
            } else {
                up_[v] = 0;
                flow_[v] = dst.masses[v - m_] * scale;
                pi_[v] = art_cost_;
            }
        }
        arc_count_ = m_ * n_ + m_ + n_;
        block_ = std::max<std::size_t>(static_cast<std::size_t>(std::sqrt(static_cast<double>(arc_count_))), 10);
    }

    void run(std::size_t max_pivots) {
        std::size_t pivots = 0;
        std::size_t entering;
        while (find_entering(entering)) {
            pivot(entering);
            if (++pivots > max_pivots) throw ConvergenceError("network simplex pivot limit reached", static_cast<double>(pivots));
        }
        pivots_ = pivots;
    }

    TransportPlan extract() const {
        TransportPlan plan;
        plan.source = src_;
        plan.target = dst_;
        plan.provenance = Provenance::exact;
        for (std::size_t v = 0; v < m_ + n_; ++v) {
            if (arc_[v] < m_ * n_ && flow_[v] > 0.0) {
                const std::size_t e = arc_[v];
                plan.entries.push_back({e / n_, e % n_, flow_[v]});
            }
        }
        std::sort(plan.entries.begin(), plan.entries.end(), [](const PlanEntry& a, const PlanEntry& b) {
            return a.source != b.source ? a.source < b.source : a.target < b.target;
        });
        plan.source_potential.resize(m_);
        plan.target_potential.resize(n_);
        for (std::size_t i = 0; i < m_; ++i) plan.source_potential[i] = -pi_[i];
        for (std::size_t j = 0; j < n_; ++j) plan.target_potential[j] = pi_[m_ + j];
        plan.marginal_error = plan.measured_marginal_error();
        return plan;
    }

    /// Largest flow left on artificial arcs (nonzero only for infeasible inputs).
    double artificial_flow() const {
        double f = 0.0;
        for (std::size_t v = 0; v < m_ + n_; ++v)
            if (arc_[v] >= m_ * n_) f = std::max(f, flow_[v]);
        return f;
    }

    std::size_t pivots() const { return pivots_; }

private:
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    double cost(std::size_t i, std::size_t j) const { return half_sq_dist(src_.points[i], dst_.points[j]); }

    void arc_ends(std::size_t e, std::size_t& s, std::size_t& t, double& c) const {
        if (e < m_ * n_) {
            s = e / n_;
            t = m_ + e % n_;
            c = cost(s, t - m_);
        } else {
            const std::size_t v = e - m_ * n_;
            if (v < m_) {
                s = v;
                t = root_;
                c = 0.0;
            } else {
                s = root_;
                t = v;
                c = art_cost_;
            }
        }
    }

    bool find_entering(std::size_t& entering) {
        double best = -tol_;
        std::size_t best_arc = kNone;
        std::size_t scanned = 0, in_block = 0;
        std::size_t e = next_arc_;
        for (; scanned < arc_count_; ++scanned) {
            std::size_t s, t;
            double c;
            arc_ends(e, s, t, c);
            const double rc = c + pi_[s] - pi_[t];
            if (rc < best && !(parent_[s] == t && arc_[s] == e) && !(parent_[t] == s && arc_[t] == e)) {
                best = rc;
                best_arc = e;
            }
            if (++e == arc_count_) e = 0;
            if (++in_block == block_) {
                if (best_arc != kNone) break;
                in_block = 0;
            }
        }
        next_arc_ = e;
        if (best_arc == kNone) return false;
        entering = best_arc;
        return true;
    }

    void pivot(std::size_t e) {
        std::size_t s, t;
        double c;
        arc_ends(e, s, t, c);

        std::size_t a = s, b = t;
        while (a != b) {
            if (depth_[a] >= depth_[b]) a = parent_[a];
            else b = parent_[b];
        }
        const std::size_t join = a;

        const double inf = std::numeric_limits<double>::infinity();
        double delta = inf;
        std::size_t out = kNone;
        int side = 0;
        for (std::size_t u = s; u != join; u = parent_[u]) {
            const double d = up_[u] ? flow_[u] : inf;
            if (d < delta) {
                delta = d;
                out = u;
                side = 1;
            }
        }
        for (std::size_t u = t; u != join; u = parent_[u]) {
            const double d = up_[u] ? inf : flow_[u];
            if (d <= delta) {
                delta = d;
                out = u;
                side = 2;
            }
        }
        if (out == kNone) throw InputError("transport problem is unbounded");

        if (delta > 0.0) {
            for (std::size_t u = s; u != join; u = parent_[u]) flow_[u] += up_[u] ? -delta : delta;
            for (std::size_t u = t; u != join; u = parent_[u]) flow_[u] += up_[u] ? delta : -delta;
        }

        const std::size_t u_in = side == 1 ? s : t;
        const std::size_t v_in = side == 1 ? t : s;
        std::size_t prev = v_in;
        std::size_t prev_arc = e;
        std::uint8_t prev_up = u_in == s ? 1 : 0;
        double prev_flow = delta;
        std::size_t w = u_in;
        while (true) {
            const std::size_t old_parent = parent_[w];
            const std::size_t old_arc = arc_[w];
            const std::uint8_t old_up = up_[w];
            const double old_flow = flow_[w];
            parent_[w] = prev;
            arc_[w] = prev_arc;
            up_[w] = prev_up;
            flow_[w] = std::max(prev_flow, 0.0);
            if (w == out) break;
            prev = w;
            prev_arc = old_arc;
            prev_up = old_up ? 0 : 1;
            prev_flow = old_flow;
            w = old_parent;
        }
        refresh_tree();
    }

    void refresh_tree() {
        const std::size_t V = m_ + n_ + 1;
        if (child_start_.size() != V + 1) {
            child_start_.resize(V + 1);
            children_.resize(V);
            order_.resize(V);
        }
        std::fill(child_start_.begin(), child_start_.end(), 0);
        for (std::size_t v = 0; v < V; ++v)
            if (v != root_) ++child_start_[parent_[v] + 1];
        for (std::size_t v = 0; v < V; ++v) child_start_[v + 1] += child_start_[v];
        std::vector<std::size_t> fill(child_start_.begin(), child_start_.end() - 1);
        for (std::size_t v = 0; v < V; ++v)
            if (v != root_) children_[fill[parent_[v]]++] = v;

        std::size_t head = 0, tail = 0;
        order_[tail++] = root_;
        depth_[root_] = 0;
        pi_[root_] = 0.0;
        while (head < tail) {
            const std::size_t p = order_[head++];
            for (std::size_t k = child_start_[p]; k < child_start_[p + 1]; ++k) {
                const std::size_t v = children_[k];
                std::size_t s, t;
                double c;
                arc_ends(arc_[v], s, t, c);
                depth_[v] = depth_[p] + 1;
                pi_[v] = up_[v] ? pi_[p] - c : pi_[p] + c;
                order_[tail++] = v;
            }
        }
    }

    const DiscreteMeasure& src_;
    const DiscreteMeasure& dst_;
    std::size_t m_, n_, root_;
    std::vector<std::size_t> parent_, arc_;
    std::vector<std::uint8_t> up_;
    std::vector<double> flow_;
    std::vector<std::size_t> depth_;
    std::vector<double> pi_;
    std::vector<std::size_t> child_start_, children_, order_;
    double art_cost_ = 0.0;
    double tol_ = 0.0;
    std::size_t arc_count_ = 0;
    std::size_t block_ = 10;
    std::size_t next_arc_ = 0;
    std::size_t pivots_ = 0;
};

} // namespace detail

/// Exact quadratic-cost transport plan by network simplex, with certified duals.
inline TransportPlan solve_exact(const DiscreteMeasure& rho0, const DiscreteMeasure& rho1, const ExactOptions& opt = {}) {
    detail::check_balanced(rho0, rho1, opt.mass_tolerance);
    if (rho0.size() > opt.max_support || rho1.size() > opt.max_support)
        throw CapacityError("support exceeds max_support=" + std::to_string(opt.max_support) +
                            " for the exact solver; use solve_entropic instead");
    detail::TransportSimplex simplex(rho0, rho1);
    const std::size_t V = rho0.size() + rho1.size();
    simplex.run(std::max<std::size_t>(1000000, 200 * V * V));
    if (simplex.artificial_flow() > 1e-9 * rho0.total())
        throw InputError("exact solver left flow on artificial arcs (unbalanced input)");
    return simplex.extract();
}

inline TransportPlan solve_exact(const DensityField& rho0, const DensityField& rho1, std::size_t max_support = 4096) {
    require_same_grid(rho0.grid, rho1.grid, "solve_exact(rho0, rho1)");
    ExactOptions opt;
    opt.max_support = max_support;
    if (rho0.support_size() > max_support || rho1.support_size() > max_support)
        throw CapacityError("support exceeds max_support=" + std::to_string(max_support) +
                            " for the exact solver; use solve_entropic instead");
    return solve_exact(DiscreteMeasure::from_density(rho0), DiscreteMeasure::from_density(rho1), opt);
}

/// Optimality certificate of a plan with duals: worst dual infeasibility and worst
/// complementary-slackness gap, both in cost units.
struct DualCertificate {
    double dual_infeasibility = 0.0;
    double slackness_gap = 0.0;
};

inline DualCertificate certify(const TransportPlan& plan) {
    if (!plan.has_duals()) throw UsageError("plan carries no duals");
    DualCertificate c;
    for (std::size_t i = 0; i < plan.source.size(); ++i)
        for (std::size_t j = 0; j < plan.target.size(); ++j) {
            const double rc = detail::half_sq_dist(plan.source.points[i], plan.target.points[j]) -
                              plan.source_potential[i] - plan.target_potential[j];
            c.dual_infeasibility = std::max(c.dual_infeasibility, -rc);
        }
    for (const auto& e : plan.entries) {
        const double rc = detail::half_sq_dist(plan.source.points[e.source], plan.target.points[e.target]) -
                          plan.source_potential[e.source] - plan.target_potential[e.target];
        c.slackness_gap = std::max(c.slackness_gap, std::abs(rc));
    }
    return c;
}

struct EntropicOptions {
    double reg = 1e-3;           ///< final regularization (cost |x-y|^2/2)
    double tol = 1e-8;           ///< final relative L1 marginal error
    std::size_t max_iter = 200000;
    bool anneal = true;          ///< reg_start -> reg_start/2 -> ... -> reg
    double reg_start = 0.0;      ///< 0 picks the squared diameter of the supports
    double stage_tol = 1e-4;     ///< marginal error to reach before halving reg
    double mass_tolerance = 1e-8;
};

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, v[k]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k] - m);
    return m + std::log(s);
}

inline std::vector<double> anneal_schedule(double start, double target, bool anneal) {
    std::vector<double> regs;
    if (anneal && start > target) {
        for (double r = start; r > target; r *= 0.5) regs.push_back(r);
    }
    regs.push_back(target);
    return regs;
}

} // namespace detail

/// Log-domain Sinkhorn on explicit point clouds. Cost |x-y|^2/2; plan
/// pi_ij = a_i b_j exp((f_i + g_j - c_ij)/reg).
inline TransportPlan solve_entropic(const DiscreteMeasure& rho0, const DiscreteMeasure& rho1, const EntropicOptions& opt = {}) {
    detail::check_balanced(rho0, rho1, opt.mass_tolerance);
    if (!(opt.reg > 0.0)) throw InputError("entropic regularization must be positive");
    const std::size_t m = rho0.size(), n = rho1.size();
    const double ma = rho0.total();
    const double scale_b = ma / rho1.total();

    std::vector<double> C(m * n);
    double diam2 = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            C[i * n + j] = detail::half_sq_dist(rho0.points[i], rho1.points[j]);
            diam2 = std::max(diam2, 2.0 * C[i * n + j]);
        }
    std::vector<double> loga(m), logb(n);
    for (std::size_t i = 0; i < m; ++i) loga[i] = std::log(rho0.masses[i]);
    for (std::size_t j = 0; j < n; ++j) logb[j] = std::log(rho1.masses[j] * scale_b);

    std::vector<double> f(m, 0.0), g(n, 0.0), buf(std::max(m, n));
    const double start = opt.reg_start > 0.0 ? opt.reg_start : std::max(diam2, opt.reg);
    const auto regs = detail::anneal_schedule(start, opt.reg, opt.anneal);

    auto update_f = [&](double eps) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) buf[j] = (g[j] - C[i * n + j]) / eps + logb[j];
            f[i] = -eps * detail::log_sum_exp(buf.data(), n);
        }
    };
    auto update_g = [&](double eps) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) buf[i] = (f[i] - C[i * n + j]) / eps + loga[i];
            g[j] = -eps * detail::log_sum_exp(buf.data(), m);
        }
    };
    // Column error after an f-update (rows are then exact).
    auto column_error = [&](double eps) {
        double err = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                s += std::exp(loga[i] + logb[j] + (f[i] + g[j] - C[i * n + j]) / eps);
            err += std::abs(s - rho1.masses[j] * scale_b);
        }
        return err / ma;
    };

    std::size_t iters = 0;
    double err = 1.0;
    for (std::size_t s = 0; s < regs.size(); ++s) {
        const double eps = regs[s];
        const bool last = s + 1 == regs.size();
        const double goal = last ? opt.tol : std::max(opt.tol, opt.stage_tol);
        std::vector<double> history;
        while (true) {
            update_g(eps);
            update_f(eps);
            ++iters;
            if (iters % 10 == 0 || last) {
                err = column_error(eps);
                if (last) history.push_back(err);
                if (err <= goal) break;
            }
            if (iters >= opt.max_iter) {
                if (!last) break;
                throw ConvergenceError("entropic solver did not reach the marginal tolerance", err, history);
            }
        }
    }

    TransportPlan plan;
    plan.source = rho0;
    plan.target = rho1;
    plan.provenance = Provenance::entropic;
    plan.reg = opt.reg;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double w = std::exp(loga[i] + logb[j] + (f[i] + g[j] - C[i * n + j]) / opt.reg);
            if (w > 0.0) plan.entries.push_back({i, j, w});
        }
    // Potentials of the unweighted form pi = exp((F + G - c)/reg): F = f + reg log a, G = g + reg log b.
    plan.source_potential.resize(m);
    plan.target_potential.resize(n);
    for (std::size_t i = 0; i < m; ++i) plan.source_potential[i] = f[i];
    for (std::size_t j = 0; j < n; ++j) plan.target_potential[j] = g[j] + opt.reg * logb[j];
    plan.marginal_error = plan.measured_marginal_error();
    return plan;
}

inline TransportPlan solve_entropic(const DensityField& rho0, const DensityField& rho1, double reg, double tol,
                                    std::size_t max_iter) {
    require_same_grid(rho0.grid, rho1.grid, "solve_entropic(rho0, rho1)");
    EntropicOptions opt;
    opt.reg = reg;
    opt.tol = tol;
    opt.max_iter = max_iter;
    return solve_entropic(DiscreteMeasure::from_density(rho0), DiscreteMeasure::from_density(rho1), opt);
}

/// Entropic plan between two densities on one grid, kept implicit through its potentials.
/// pi(x,y) = a(x) b(y) exp((f(x) + g(y) - |x-y|^2/2)/reg).
struct GridEntropicPlan {
    Grid grid;
    double reg = 0.0;
    std::vector<double> log_a, log_b;   ///< -inf off support
    std::vector<double> f, g;           ///< f defined at every node (soft c-transform)
    double marginal_error = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

/// Separable log-domain Gibbs transform:
/// out(x) = log sum_y exp(in(y) - |x-y|^2/(2 reg)) on a grid, one axis at a time.
/// Each line is shifted by its maximum before the kernel product; lines whose shifted
/// sums lose all significant terms are recomputed term-by-term.
class SeparableGibbs {
public:
    SeparableGibbs(const Grid& g, double reg) : grid_(g), reg_(reg) {
        const int N = g.nodes_per_axis();
        const double h = g.spacing();
        K_.resize(N, N);
        pen_.resize(N, N);
        for (int i = 0; i < N; ++i)
            for (int k = 0; k < N; ++k) {
                const double d = (i - k) * h;
                pen_(i, k) = d * d / (2.0 * reg);
                K_(i, k) = std::exp(-pen_(i, k));
            }
    }

    void apply(std::vector<double>& v) const {
        for (int a = 0; a < grid_.dim(); ++a) apply_axis(v, a);
    }

private:
    void apply_axis(std::vector<double>& v, int axis) const {
        const int N = grid_.nodes_per_axis();
        const int d = grid_.dim();
        std::size_t stride = 1;
        for (int a = 0; a < axis; ++a) stride *= static_cast<std::size_t>(N);
        const std::size_t lines = grid_.size() / static_cast<std::size_t>(N);

        Eigen::MatrixXd E(N, static_cast<Eigen::Index>(lines));
        std::vector<double> shift(lines);
        std::vector<std::size_t> base(lines);
        std::size_t l = 0;
        for (std::size_t start = 0; start < grid_.size(); ++start) {
            if ((start / stride) % static_cast<std::size_t>(N) != 0) continue;
            base[l] = start;
            double m = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < N; ++k) m = std::max(m, v[start + static_cast<std::size_t>(k) * stride]);
            shift[l] = m;
            for (int k = 0; k < N; ++k) {
                const double x = v[start + static_cast<std::size_t>(k) * stride];
                E(k, static_cast<Eigen::Index>(l)) = std::isfinite(m) ? std::exp(x - m) : 0.0;
            }
            ++l;
        }
        (void)d;
        const Eigen::MatrixXd S = K_ * E;
        std::vector<double> col(static_cast<std::size_t>(N));
        for (l = 0; l < lines; ++l) {
            const std::size_t start = base[l];
            if (!std::isfinite(shift[l])) continue;
            for (int k = 0; k < N; ++k) col[static_cast<std::size_t>(k)] = v[start + static_cast<std::size_t>(k) * stride];
            for (int i = 0; i < N; ++i) {
                const double s = S(i, static_cast<Eigen::Index>(l));
                double out;
                if (s > 1e-250) {
                    out = shift[l] + std::log(s);
                } else {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int k = 0; k < N; ++k) mx = std::max(mx, col[static_cast<std::size_t>(k)] - pen_(i, k));
                    double acc = 0.0;
                    if (std::isfinite(mx))
                        for (int k = 0; k < N; ++k) acc += std::exp(col[static_cast<std::size_t>(k)] - pen_(i, k) - mx);
                    out = std::isfinite(mx) ? mx + std::log(acc) : mx;
                }
                v[start + static_cast<std::size_t>(i) * stride] = out;
            }
        }
    }

    Grid grid_;
    double reg_;
    Eigen::MatrixXd K_, pen_;
};

} // namespace detail

/// Log-domain Sinkhorn for two densities on the same grid using the separable Gibbs kernel.
inline GridEntropicPlan solve_entropic_grid(const DensityField& rho0, const DensityField& rho1, const EntropicOptions& opt = {}) {
    require_same_grid(rho0.grid, rho1.grid, "solve_entropic_grid(rho0, rho1)");
    if (!(opt.reg > 0.0)) throw InputError("entropic regularization must be positive");
    const Grid& G = rho0.grid;
    const double ma = rho0.mass(), mb = rho1.mass();
    if (!(ma > 0.0) || !(mb > 0.0)) throw InputError("empty density");
    if (std::abs(ma - mb) > opt.mass_tolerance * std::max(ma, mb))
        throw InputError("unequal total masses: " + std::to_string(ma) + " vs " + std::to_string(mb));

    GridEntropicPlan plan;
    plan.grid = G;
    const double vol = G.cell_volume();
    const double ninf = -std::numeric_limits<double>::infinity();
    plan.log_a.assign(G.size(), ninf);
    plan.log_b.assign(G.size(), ninf);
    for (std::size_t i = 0; i < G.size(); ++i) {
        if (rho0.support[i] && rho0.values[i] > 0.0) plan.log_a[i] = std::log(rho0.values[i] * vol);
        if (rho1.support[i] && rho1.values[i] > 0.0) plan.log_b[i] = std::log(rho1.values[i] * vol * ma / mb);
    }
    plan.f.assign(G.size(), 0.0);
    plan.g.assign(G.size(), 0.0);

    double diam2 = 0.0;
    for (std::size_t i = 0; i < G.size(); ++i)
        if (std::isfinite(plan.log_a[i]) || std::isfinite(plan.log_b[i])) diam2 = std::max(diam2, 4.0 * norm2(G.node(i)));
    const double start = opt.reg_start > 0.0 ? opt.reg_start : std::max(std::min(diam2, 1.0), opt.reg);
    const auto regs = detail::anneal_schedule(start, opt.reg, opt.anneal);

    std::vector<double> work(G.size());

    // f(x) = -eps log sum_y b(y) exp((g(y) - c(x,y))/eps)
    auto soft_transform = [&](const detail::SeparableGibbs& K, const std::vector<double>& pot,
                              const std::vector<double>& logw, double eps, std::vector<double>& out) {
        for (std::size_t i = 0; i < G.size(); ++i) work[i] = pot[i] / eps + logw[i];
        K.apply(work);
        for (std::size_t i = 0; i < G.size(); ++i) out[i] = -eps * work[i];
    };
    auto column_error = [&](const detail::SeparableGibbs& K, double eps) {
        // column sums: b(y) exp(g/eps) sum_x a(x) exp((f - c)/eps) = b exp((g - g_new)/eps)
        std::vector<double> gnew(G.size());
        soft_transform(K, plan.f, plan.log_a, eps, gnew);
        double err = 0.0;
        for (std::size_t i = 0; i < G.size(); ++i) {
            if (!std::isfinite(plan.log_b[i])) continue;
            const double b = std::exp(plan.log_b[i]);
            err += std::abs(b * std::exp((plan.g[i] - gnew[i]) / eps) - b);
        }
        return err / ma;
    };

    std::size_t iters = 0;
    double err = 1.0;
    for (std::size_t s = 0; s < regs.size(); ++s) {
        const double eps = regs[s];
        const detail::SeparableGibbs K(G, eps);
        const bool last = s + 1 == regs.size();
        const double goal = last ? opt.tol : std::max(opt.tol, opt.stage_tol);
        std::vector<double> history;
        while (true) {
            soft_transform(K, plan.f, plan.log_a, eps, plan.g);
            soft_transform(K, plan.g, plan.log_b, eps, plan.f);
            ++iters;
            if (iters % 5 == 0) {
                err = column_error(K, eps);
                history.push_back(err);
                if (err <= goal) break;
            }
            if (iters >= opt.max_iter) {
                if (!last) break;
                throw ConvergenceError("grid entropic solver did not reach the marginal tolerance", err, history);
            }
        }
    }
    plan.reg = opt.reg;
    plan.marginal_error = err;
    plan.iterations = iters;
    return plan;
}

/// T(x) = sum_y pi(x,y) y / sum_y pi(x,y), with a monotonicity defect estimate.
struct TransportMap {
    VectorField map;
    Provenance provenance = Provenance::exact;
    double monotonicity_defect = 0.0;
    std::vector<std::size_t> excluded;   ///< grid nodes with zero row mass (map set to identity)
};

/// Worst violation max(0, -(T(x)-T(y)).(x-y)) over a seeded random sample of support pairs.
inline double monotonicity_defect(const VectorField& T, const std::vector<std::size_t>& nodes, std::size_t pairs = 10000,
                                  std::uint64_t seed = 12345) {
    if (nodes.size() < 2) return 0.0;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    double worst = 0.0;
    const bool all = nodes.size() * (nodes.size() - 1) / 2 <= pairs;
    auto check = [&](std::size_t a, std::size_t b) {
        const Point dx = T.grid.node(a) - T.grid.node(b);
        const Point dT = T.values[a] - T.values[b];
        worst = std::max(worst, -dot(dT, dx));
    };
    if (all) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (std::size_t j = i + 1; j < nodes.size(); ++j) check(nodes[i], nodes[j]);
    } else {
        for (std::size_t k = 0; k < pairs; ++k) {
            const std::size_t i = pick(rng), j = pick(rng);
            if (i != j) check(nodes[i], nodes[j]);
        }
    }
    return worst;
}

/// Per-atom barycentric images of a plan (no grid needed).
inline std::vector<Point> barycentric_points(const TransportPlan& plan) {
    std::vector<Point> num(plan.source.size(), Point{0.0, 0.0, 0.0});
    std::vector<double> den(plan.source.size(), 0.0);
    for (const auto& e : plan.entries) {
        num[e.source] += e.weight * plan.target.points[e.target];
        den[e.source] += e.weight;
    }
    for (std::size_t i = 0; i < num.size(); ++i) num[i] = den[i] > 0.0 ? (1.0 / den[i]) * num[i] : plan.source.points[i];
    return num;
}

inline TransportMap barycentric_map(const TransportPlan& plan, const Grid& grid) {
    if (!plan.source.on_grid()) throw UsageError("barycentric_map needs a plan whose source atoms are grid nodes");
    TransportMap T;
    T.provenance = plan.provenance;
    T.map = VectorField::from_function(grid, [](const Point& x) { return x; });
    std::vector<Point> num(plan.source.size(), Point{0.0, 0.0, 0.0});
    std::vector<double> den(plan.source.size(), 0.0);
    for (const auto& e : plan.entries) {
        num[e.source] += e.weight * plan.target.points[e.target];
        den[e.source] += e.weight;
    }
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < plan.source.size(); ++i) {
        const std::size_t node = plan.source.nodes[i];
        if (node >= grid.size()) throw UsageError("plan atom outside the grid");
        if (den[i] > 0.0) {
            T.map.values[node] = (1.0 / den[i]) * num[i];
            nodes.push_back(node);
        } else {
            T.excluded.push_back(node);
        }
    }
    T.monotonicity_defect = monotonicity_defect(T.map, nodes);
    return T;
}

inline TransportMap barycentric_map(const GridEntropicPlan& plan) {
    const Grid& G = plan.grid;
    const detail::SeparableGibbs K(G, plan.reg);
    // numerator_a(x) = sum_y b(y) exp((g(y) - c)/eps) y_a; y_a can be negative, so shift
    // coordinates by the halfwidth to keep logs real.
    std::vector<double> base(G.size()), work(G.size());
    for (std::size_t i = 0; i < G.size(); ++i) base[i] = plan.g[i] / plan.reg + plan.log_b[i];
    std::vector<double> logden = base;
    K.apply(logden);
    TransportMap T;
    T.provenance = Provenance::entropic;
    T.map = VectorField::from_function(G, [](const Point& x) { return x; });
    const double shift = G.halfwidth() + G.spacing();
    for (int a = 0; a < G.dim(); ++a) {
        for (std::size_t i = 0; i < G.size(); ++i) work[i] = base[i] + std::log(G.node(i)[a] + shift);
        K.apply(work);
        for (std::size_t i = 0; i < G.size(); ++i)
            if (std::isfinite(plan.log_a[i]) && std::isfinite(logden[i])) T.map.values[i][a] = std::exp(work[i] - logden[i]) - shift;
    }
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < G.size(); ++i) {
        if (!std::isfinite(plan.log_a[i])) continue;
        if (std::isfinite(logden[i])) nodes.push_back(i);
        else T.excluded.push_back(i);
    }
    T.monotonicity_defect = monotonicity_defect(T.map, nodes);
    return T;
}

/// Plan cost sum pi |x-y|^2 of an implicit grid plan (sum over x of a(x) E[|x-y|^2 | x]).
inline double transport_cost(const GridEntropicPlan& plan) {
    const Grid& G = plan.grid;
    const detail::SeparableGibbs K(G, plan.reg);
    std::vector<double> base(G.size());
    for (std::size_t i = 0; i < G.size(); ++i) base[i] = plan.g[i] / plan.reg + plan.log_b[i];
    std::vector<double> logden = base;
    K.apply(logden);
    // E|x-y|^2 = |x|^2 - 2 x.E[y] + E|y|^2
    std::vector<double> w2 = base;
    for (std::size_t i = 0; i < G.size(); ++i) w2[i] += std::log(norm2(G.node(i)) + 1e-300);
    K.apply(w2);
    const TransportMap T = barycentric_map(plan);
    double c = 0.0;
    for (std::size_t i = 0; i < G.size(); ++i) {
        if (!std::isfinite(plan.log_a[i]) || !std::isfinite(logden[i])) continue;
        const double rowmass = std::exp(plan.log_a[i] + (plan.f[i] + 0.0) / plan.reg + logden[i]);
        const Point x = G.node(i);
        const double ey2 = std::exp(w2[i] - logden[i]);
        c += rowmass * (norm2(x) - 2.0 * dot(x, T.map.values[i]) + ey2);
    }
    return c;
}

/// Materializes entries of an implicit grid plan with weight above rel_threshold times the row maximum.
inline TransportPlan materialize(const GridEntropicPlan& plan, const DensityField& rho0, const DensityField& rho1,
                                 double rel_threshold = 1e-14) {
    TransportPlan out;
    out.source = DiscreteMeasure::from_density(rho0);
    out.target = DiscreteMeasure::from_density(rho1);
    out.provenance = Provenance::entropic;
    out.reg = plan.reg;
    const double scale = rho0.mass() / rho1.mass();
    for (std::size_t i = 0; i < out.source.size(); ++i) {
        const std::size_t xi = out.source.nodes[i];
        std::vector<double> lw(out.target.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < out.target.size(); ++j) {
            const std::size_t yj = out.target.nodes[j];
            lw[j] = plan.log_a[xi] + plan.log_b[yj] +
                    (plan.f[xi] + plan.g[yj] - detail::half_sq_dist(out.source.points[i], out.target.points[j])) / plan.reg;
            mx = std::max(mx, lw[j]);
        }
        for (std::size_t j = 0; j < out.target.size(); ++j)
            if (lw[j] - mx > std::log(rel_threshold)) out.entries.push_back({i, j, std::exp(lw[j])});
    }
    out.source_potential.resize(out.source.size());
    out.target_potential.resize(out.target.size());
    for (std::size_t i = 0; i < out.source.size(); ++i) out.source_potential[i] = plan.f[out.source.nodes[i]];
    for (std::size_t j = 0; j < out.target.size(); ++j)
        out.target_potential[j] = plan.g[out.target.nodes[j]] + plan.reg * plan.log_b[out.target.nodes[j]];
    (void)scale;
    out.marginal_error = out.measured_marginal_error();
    return out;
}

/// Convex potential u = |x|^2/2 - psi with T = grad u, after plane-envelope projection.
struct BrenierPotential {
    ScalarField u;
    ScalarField psi;                    ///< source-side Kantorovich potential, extended to every node
    Provenance provenance = Provenance::exact;
    double envelope_change = 0.0;       ///< max |u_envelope - u_dual| over support nodes
};

namespace detail {

/// Potentials of a plan without stored duals. Exact plans: solve phi_i + psi_j = c_ij on the
/// support graph of the plan. Entropic plans: one half-iteration of the scaling algorithm.
inline void recover_duals(TransportPlan& plan) {
    const std::size_t m = plan.source.size(), n = plan.target.size();
    plan.source_potential.assign(m, 0.0);
    plan.target_potential.assign(n, 0.0);
    if (plan.provenance == Provenance::exact) {
        // Shortest paths from a virtual root: p_j - p_i <= c_ij on every pair, p_i - p_j <= -c_ij on
        // the support of the plan. Then phi_i = -p_i, psi_j = p_j is feasible and tight on the support.
        std::vector<std::vector<std::size_t>> back(n);
        for (const auto& e : plan.entries)
            if (e.weight > 0.0) back[e.target].push_back(e.source);
        std::vector<double> p(m + n, 0.0);
        std::vector<std::uint8_t> queued(m + n, 1);
        std::vector<std::size_t> queue(m + n);
        std::iota(queue.begin(), queue.end(), std::size_t{0});
        std::size_t head = 0, relaxations = 0;
        const std::size_t limit = 50 * (m + n) * (m + n) + 1000;
        while (head < queue.size()) {
            const std::size_t v = queue[head++];
            queued[v] = 0;
            auto relax = [&](std::size_t w, double cand) {
                if (cand < p[w] - 1e-15 * std::max(1.0, std::abs(p[w]))) {
                    p[w] = cand;
                    if (!queued[w]) {
                        queued[w] = 1;
                        queue.push_back(w);
                    }
                }
            };
            if (v < m) {
                for (std::size_t j = 0; j < n; ++j) relax(m + j, p[v] + half_sq_dist(plan.source.points[v], plan.target.points[j]));
            } else {
                const std::size_t j = v - m;
                for (std::size_t i : back[j]) relax(i, p[v] - half_sq_dist(plan.source.points[i], plan.target.points[j]));
            }
            if (++relaxations > limit) throw InputError("plan is not optimal: dual recovery found a negative cycle");
            if (head > 4 * (m + n) && head * 2 > queue.size()) {
                queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(head));
                head = 0;
            }
        }
        for (std::size_t i = 0; i < m; ++i) plan.source_potential[i] = -p[i];
        for (std::size_t j = 0; j < n; ++j) plan.target_potential[j] = p[m + j];
        return;
    }
    const double eps = plan.reg > 0.0 ? plan.reg : 1e-3;
    std::vector<double> buf(std::max(m, n));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i)
            buf[i] = std::log(plan.source.masses[i]) - half_sq_dist(plan.source.points[i], plan.target.points[j]) / eps;
        plan.target_potential[j] = -eps * log_sum_exp(buf.data(), m) + eps * std::log(plan.target.masses[j]);
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            buf[j] = (plan.target_potential[j] - half_sq_dist(plan.source.points[i], plan.target.points[j])) / eps;
        plan.source_potential[i] = -eps * log_sum_exp(buf.data(), n);
    }
}

inline BrenierPotential finish_potential(ScalarField u, const TransportMap& T, const std::vector<std::size_t>& nodes,
                                         Provenance prov) {
    BrenierPotential out;
    out.provenance = prov;
    if (!nodes.empty()) {
        ScalarField env = plane_envelope(u, T.map, nodes);
        for (std::size_t i : nodes) out.envelope_change = std::max(out.envelope_change, std::abs(env.values[i] - u.values[i]));
        u = std::move(env);
    }
    out.psi = ScalarField(u.grid);
    for (std::size_t i = 0; i < u.size(); ++i) out.psi.values[i] = 0.5 * norm2(u.grid.node(i)) - u.values[i];
    out.u = std::move(u);
    return out;
}

} // namespace detail

/// Brenier potential from a plan with grid-node source atoms. The source dual is extended to
/// all nodes by the (soft, for entropic plans) c-transform of the target dual, then projected
/// onto the envelope of the planes u(z) + T(z).(x - z) over support nodes z.
inline BrenierPotential brenier_potential(const TransportPlan& plan_in, const Grid& grid) {
    TransportPlan plan = plan_in;
    if (!plan.has_duals()) detail::recover_duals(plan);
    const TransportMap T = barycentric_map(plan, grid);
    const std::size_t n = plan.target.size();
    ScalarField u(grid);
    std::vector<double> buf(n);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Point x = grid.node(i);
        if (plan.provenance == Provenance::exact) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                const Point& y = plan.target.points[j];
                best = std::max(best, dot(x, y) - 0.5 * norm2(y) + plan.target_potential[j]);
            }
            u.values[i] = best;
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                const Point& y = plan.target.points[j];
                buf[j] = (dot(x, y) - 0.5 * norm2(y) + plan.target_potential[j]) / plan.reg;
            }
            u.values[i] = plan.reg * detail::log_sum_exp(buf.data(), n);
        }
    }
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < plan.source.size(); ++i) nodes.push_back(plan.source.nodes[i]);
    std::sort(nodes.begin(), nodes.end());
    std::vector<std::size_t> excl = T.excluded;
    std::sort(excl.begin(), excl.end());
    std::vector<std::size_t> keep;
    std::set_difference(nodes.begin(), nodes.end(), excl.begin(), excl.end(), std::back_inserter(keep));
    return detail::finish_potential(std::move(u), T, keep, plan.provenance);
}

/// Brenier potential of an implicit grid plan: u = |x|^2/2 - f with f the soft c-transform,
/// which is a log-sum-exp of affine functions and hence convex at every node.
inline BrenierPotential brenier_potential(const GridEntropicPlan& plan) {
    const Grid& G = plan.grid;
    ScalarField u(G);
    for (std::size_t i = 0; i < G.size(); ++i) u.values[i] = 0.5 * norm2(G.node(i)) - plan.f[i];
    const TransportMap T = barycentric_map(plan);
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < G.size(); ++i)
        if (std::isfinite(plan.log_a[i])) nodes.push_back(i);
    std::vector<std::size_t> keep;
    std::sort(nodes.begin(), nodes.end());
    std::vector<std::size_t> excl = T.excluded;
    std::sort(excl.begin(), excl.end());
    std::set_difference(nodes.begin(), nodes.end(), excl.begin(), excl.end(), std::back_inserter(keep));
    return detail::finish_potential(std::move(u), T, keep, Provenance::entropic);
}

/// Plans as CSV triples source_index,target_index,weight.
inline std::string plan_csv(const TransportPlan& plan) {
    std::string out = "source_index,target_index,weight\n";
    char buf[96];
    for (const auto& e : plan.entries) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", e.source, e.target, e.weight);
        out += buf;
    }
    return out;
}

} // namespace otreg
