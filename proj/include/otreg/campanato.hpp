#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otreg/convex.hpp"
#include "otreg/field_io.hpp"
#include "otreg/functionals.hpp"
#include "otreg/harmonic.hpp"
#include "otreg/instances.hpp"
#include "otreg/mccann.hpp"

namespace otreg {

/// Constants of the iteration and the admissible smallness of the initial data.
struct RegularityBudget {
    double eps = 0.1;
    double theta = 0.1;
    double alpha = 0.5;
    double alpha_prime = 0.75;
    double C0 = 1.0;
    double C1 = 0.0, C2 = 0.0, C3 = 0.0, C4 = 0.0;
    double series = 0.0;        ///< sum_{i>=1} theta^{2i(alpha' - alpha)}
    double holder_sum = 0.0;    ///< sum_{i>=1} theta^{i alpha}
    double gate_factor = 0.0;   ///< (C1+C2) + 8 C3^2 S^4 + sqrt(C4) S
    double eps1 = 0.0;          ///< largest eps1 with gate_factor sqrt(eps1) <= eps

    /// Left side of the smallness condition for a given eps1.
    double gate_value(double e1) const { return gate_factor * std::sqrt(e1); }
    bool admissible(double e1) const { return gate_value(e1) < eps || (e1 == eps1 && gate_value(e1) <= eps); }

    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "eps = " << eps << "\ntheta = " << theta << "\nalpha = " << alpha << "\nalpha_prime = " << alpha_prime
           << "\nC0 = " << C0 << "\nC1 = " << C1 << "\nC2 = " << C2 << "\nC3 = " << C3 << "\nC4 = " << C4
           << "\nseries = " << series << "\nholder_sum = " << holder_sum << "\ngate_factor = " << gate_factor
           << "\neps1 = " << eps1 << "\n";
        return os.str();
    }
};

inline RegularityBudget budget_constants(double eps, double theta, double alpha, double alpha_prime, double C0) {
    if (!(theta > 0.0 && theta < 0.125)) throw InputError("theta must lie in (0, 1/8)");
    if (!(alpha > 0.0 && alpha < alpha_prime && alpha_prime < 1.0)) throw InputError("need 0 < alpha < alpha' < 1");
    if (!(eps >= 0.0 && eps < 0.125)) throw InputError("eps must lie in [0, 1/8)");
    if (!(C0 > 0.0)) throw InputError("C0 must be positive");
    RegularityBudget b;
    b.eps = eps;
    b.theta = theta;
    b.alpha = alpha;
    b.alpha_prime = alpha_prime;
    b.C0 = C0;
    const double g = std::pow(theta, 2.0 * (alpha_prime - alpha));
    const double inv = std::pow(theta, -2.0 * alpha);
    b.series = g / (1.0 - g);
    b.C2 = C0 * (8.0 + eps);
    b.C1 = 1.0 + C0 * b.C2 * inv * b.series;
    b.C3 = C0 * (b.C1 + b.C2) * inv;
    b.C4 = b.C3;
    const double ta = std::pow(theta, alpha);
    b.holder_sum = ta / (1.0 - ta);
    const double S = b.holder_sum;
    b.gate_factor = (b.C1 + b.C2) + 8.0 * b.C3 * b.C3 * S * S * S * S + std::sqrt(b.C4) * S;
    b.eps1 = (eps / b.gate_factor) * (eps / b.gate_factor);
    return b;
}

/// Parses "eps,theta,alpha,alpha_prime,C0".
inline RegularityBudget budget_from_string(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw InputError("bad number in budget: " + item);
        } catch (const std::logic_error&) {
            throw InputError("bad number in budget: " + item);
        }
    }
    if (v.size() != 5) throw InputError("budget needs eps,theta,alpha,alpha_prime,C0");
    return budget_constants(v[0], v[1], v[2], v[3], v[4]);
}

/// e^{-A/2} of a symmetric matrix by eigendecomposition.
inline Eigen::MatrixXd matrix_exp_sym(const Eigen::MatrixXd& A) {
    if (A.rows() != A.cols()) throw InputError("matrix must be square");
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw InputError("matrix is not symmetric");
    const Eigen::MatrixXd S = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const Eigen::VectorXd d = (-0.5 * es.eigenvalues()).array().exp();
    Eigen::MatrixXd B = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (B + B.transpose());
}

/// Trace-free part of a square matrix.
inline Eigen::MatrixXd trace_free(const Eigen::MatrixXd& A) {
    const double n = static_cast<double>(A.rows());
    return A - (A.trace() / n) * Eigen::MatrixXd::Identity(A.rows(), A.cols());
}

/// Largest singular value.
inline double operator_norm(const Eigen::MatrixXd& M) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()(0);
}

/// Affine renormalization x = B x_hat, y_hat = B (y - b).
struct AffineFrame {
    Eigen::MatrixXd B;
    Eigen::VectorXd b;

    static AffineFrame identity(int dim) { return {Eigen::MatrixXd::Identity(dim, dim), Eigen::VectorXd::Zero(dim)}; }
    int dim() const { return static_cast<int>(B.rows()); }
    double deviation() const { return (B - Eigen::MatrixXd::Identity(dim(), dim())).norm(); }
    double determinant() const { return B.determinant(); }
};

/// The hatted instance: rho0_hat(x) = rho0(Bx), rho1_hat(y) = rho1(B^{-1}y + b), T_hat(x) = B(T(Bx) - b).
inline TransportInstance apply_frame(const TransportInstance& inst, const AffineFrame& F) {
    const int n = inst.dim;
    const Eigen::MatrixXd B = F.B;
    const Eigen::MatrixXd Binv = F.B.inverse();
    const Eigen::VectorXd b = F.b;
    TransportInstance out = inst;
    out.rho0 = [=, f = inst.rho0](const Point& x) { return f(to_point(B * to_vector(x, n))); };
    out.rho1 = [=, f = inst.rho1](const Point& y) { return f(to_point(Binv * to_vector(y, n) + b)); };
    out.T = [=, f = inst.T](const Point& x) { return to_point(B * (to_vector(f(to_point(B * to_vector(x, n))), n) - b)); };
    if (inst.potential) {
        // u_hat(x) = u(Bx) - b.(Bx) keeps grad u_hat = B(grad u(Bx) - b)
        out.potential = [=, f = inst.potential](const Point& x) {
            const Eigen::VectorXd bx = B * to_vector(x, n);
            return f(to_point(bx)) - b.dot(bx);
        };
    }
    return out;
}

/// Numerical settings shared by one_step and iterate.
struct StepOptions {
    int nodes = 129;                ///< working grid nodes per axis
    double halfwidth = 1.25;        ///< working grid halfwidth at unit scale
    int slices = 17;
    double p = 4.0;
    std::vector<double> radius_candidates = default_radius_candidates();
    double neumann_tol = 1e-6;
};

/// Measured smallness quantities of an instance at scale R.
struct ScaleMeasures {
    double E = 0.0;
    double p0 = 0.0;
    double p1 = 0.0;
    double p_sq() const { return p0 * p0 + p1 * p1; }
};

inline Grid working_grid(const TransportInstance& inst, const StepOptions& opt) {
    return Grid(inst.dim, opt.nodes, opt.halfwidth);
}

inline ScaleMeasures measure(const SampledInstance& s, double p) {
    return {excess_energy(s.rho0, s.T, 1.0), lp_deviation(s.rho0, p, 1.0), lp_deviation(s.rho1, p, 1.0)};
}

inline ScaleMeasures measure(const TransportInstance& inst, double R, const StepOptions& opt = {}) {
    return measure(sample_instance(inst, working_grid(inst, opt), R), opt.p);
}

struct StepResult {
    AffineFrame frame;          ///< b at the scale of the input
    Eigen::VectorXd b_unit;     ///< b / R
    Eigen::MatrixXd A;          ///< trace-free Hessian of phi at the origin
    TransportInstance next;     ///< hatted instance, same coordinates scale
    ScaleMeasures before;       ///< at scale R
    ScaleMeasures after;        ///< hatted instance at scale theta R
    double good_radius = 0.0;
    double flux_shift = 0.0;
    double moreover_ratio = 0.0;   ///< (|B - Id|^2 + |b|^2/R^2) / (E + p^2)

    double E_new() const { return after.E; }
};

/// One affine improvement step at scale R: harmonic approximation of the unit-scale problem,
/// b = grad phi(0), A = trace-free Hessian, B = e^{-A/2}.
inline StepResult one_step(const TransportInstance& inst, double R, const RegularityBudget& budget,
                           const StepOptions& opt = {}) {
    if (!(R > 0.0)) throw InputError("scale must be positive");
    const Grid g = working_grid(inst, opt);
    const SampledInstance s = sample_instance(inst, g, R);
    StepResult res;
    res.before = measure(s, opt.p);
    const double lhs = res.before.E + res.before.p_sq();
    if (!(lhs <= budget.eps)) throw PreconditionError("one-step smallness gate violated", lhs);

    const InterpolationPath path = interpolate(s.rho0, s.T, uniform_times(opt.slices));
    res.good_radius = good_radius(path, opt.radius_candidates);
    const BoundaryFlux flux = BoundaryFlux::from_path(path, res.good_radius);
    const HarmonicField phi = solve_neumann(res.good_radius, flux, g.spacing(), opt.neumann_tol);
    res.flux_shift = phi.flux_shift;
    const InteriorDerivatives d = interior_derivatives(phi, 2);

    const int n = inst.dim;
    res.b_unit = d.grad.head(n);
    res.A = trace_free(0.5 * (d.hess + d.hess.transpose()).topLeftCorner(n, n));
    res.frame.B = matrix_exp_sym(res.A);
    res.frame.b = R * res.b_unit;
    res.next = apply_frame(inst, res.frame);
    res.after = measure(res.next, budget.theta * R, opt);
    const double dev = res.frame.deviation();
    res.moreover_ratio = lhs > 0.0 ? (dev * dev + res.b_unit.squaredNorm()) / lhs : 0.0;
    return res;
}

struct TraceRow {
    int k = 0;
    double E = 0.0;
    double p_sq = 0.0;
    double B_dev = 0.0;
    double b_norm = 0.0;        ///< unit-scale |b_k|
    double scale = 1.0;
    bool gate_ok = true;
    bool envelope_ok = true;
};

struct IterationTrace {
    RegularityBudget budget;
    std::vector<TraceRow> rows;
    std::vector<AffineFrame> frames;     ///< frames[k-1] produced by step k, b at original scale
    Eigen::MatrixXd product;             ///< B_1 B_2 ... B_k
    std::string reason;
    double nested_sum = 0.0;             ///< |b_1| + |B_1^{-1}||b_2| + ...

    bool within_budget() const {
        for (const auto& r : rows)
            if (!r.envelope_ok || !r.gate_ok) return false;
        return !rows.empty();
    }

    CsvTable csv() const {
        CsvTable tab({"k", "E_k", "p_sq_k", "B_dev", "b_norm", "scale", "gate_ok", "envelope_ok"});
        for (const auto& r : rows)
            tab.row({CsvTable::num(r.k), CsvTable::num(r.E), CsvTable::num(r.p_sq), CsvTable::num(r.B_dev),
                     CsvTable::num(r.b_norm), CsvTable::num(r.scale), CsvTable::flag(r.gate_ok), CsvTable::flag(r.envelope_ok)});
        return tab;
    }
};

struct IterateOptions {
    StepOptions step;
    int k_max = 3;
    bool strict = false;
    int floor_nodes = 32;      ///< minimum data nodes across the ball of radius theta^k
};

/// Geometric envelope of the iteration at step k.
inline bool envelope_holds(const RegularityBudget& b, const TraceRow& r) {
    const double th = std::pow(b.theta, 2.0 * b.alpha * r.k);
    bool ok = r.E <= b.C1 * b.eps1 * th && r.p_sq <= b.C2 * b.eps1 * th;
    if (r.k >= 1) {
        const double prev = std::pow(b.theta, 2.0 * b.alpha * (r.k - 1));
        ok = ok && r.B_dev * r.B_dev <= b.C3 * b.eps1 * prev && r.b_norm * r.b_norm <= b.C4 * b.eps1 * prev;
    }
    return ok;
}

/// Repeated one-step improvement at scales theta^k. Stops at k_max, at the data resolution floor,
/// or (strict mode) at the first failed gate or envelope.
inline IterationTrace iterate(const TransportInstance& inst, const RegularityBudget& budget, const IterateOptions& opt = {}) {
    IterationTrace tr;
    tr.budget = budget;
    const int n = inst.dim;
    tr.product = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd inv_product = tr.product;
    TransportInstance cur = inst;
    double R = 1.0;
    TraceRow pending;
    for (int k = 0;; ++k) {
        const ScaleMeasures m = measure(cur, R, opt.step);
        TraceRow row = pending;
        row.k = k;
        row.E = m.E;
        row.p_sq = m.p_sq();
        row.scale = R;
        row.gate_ok = (k > 0 || m.E + m.p0 * m.p0 <= budget.eps1) && m.E + m.p_sq() <= budget.eps && tr.nested_sum <= 0.5;
        row.envelope_ok = envelope_holds(budget, row);
        tr.rows.push_back(row);
        if (opt.strict && (!row.gate_ok || !row.envelope_ok)) {
            tr.reason = !row.gate_ok ? "gate failed at step " + std::to_string(k) : "envelope failed at step " + std::to_string(k);
            break;
        }
        if (k >= opt.k_max) {
            tr.reason = "k_max reached";
            break;
        }
        if (!inst.analytic() && 2.0 * R / inst.data_spacing < opt.floor_nodes) {
            tr.reason = "resolution floor at step " + std::to_string(k);
            break;
        }
        StepResult st;
        try {
            st = one_step(cur, R, budget, opt.step);
        } catch (const PreconditionError& e) {
            tr.reason = std::string("one-step gate failed at step ") + std::to_string(k) + ": " + e.what();
            break;
        }
        tr.nested_sum += operator_norm(inv_product) * st.frame.b.norm();
        tr.frames.push_back(st.frame);
        tr.product = tr.product * st.frame.B;
        inv_product = inv_product * st.frame.B.inverse();
        pending = TraceRow{};
        pending.B_dev = st.frame.deviation();
        pending.b_norm = st.b_unit.norm();
        cur = st.next;
        R *= budget.theta;
    }
    return tr;
}

/// Mean of f^2 over B_r(0) using a local grid with the given nodes per axis.
template <class F>
double ball_mean_square(F&& f, double r, int dim = 2, int nodes = 129) {
    const Grid g(dim, nodes, r);
    const BallQuadrature q = ball_quadrature(g, r);
    double acc = 0.0, w = 0.0;
    for (const auto& nd : q.nodes) {
        const double v = f(g.node(nd.index));
        acc += nd.weight * v * v;
        w += nd.weight;
    }
    return acc / w;
}

/// Quadratic Q(x) = x.P x / 2 + c.x + q0.
struct QuadraticPolynomial {
    Eigen::MatrixXd P;
    Eigen::VectorXd c;
    double q0 = 0.0;

    double operator()(const Point& x) const {
        const Eigen::VectorXd v = to_vector(x, static_cast<int>(c.size()));
        return 0.5 * v.dot(P * v) + c.dot(v) + q0;
    }
};

struct DecayRow {
    double r = 0.0;
    double mean_sq = 0.0;      ///< avg_{B_r} |u - Q|^2
    double normalized = 0.0;   ///< mean_sq / r^{2(2+alpha)}
};

struct QuadraticExtraction {
    QuadraticPolynomial Q;
    std::vector<DecayRow> table;
    bool within_budget = false;

    CsvTable csv() const {
        CsvTable tab({"r", "mean_sq", "normalized"});
        for (const auto& d : table) tab.row({CsvTable::num(d.r), CsvTable::num(d.mean_sq), CsvTable::num(d.normalized)});
        return tab;
    }
};

/// Composes the frames into Q with Hessian (M M^T)^{-1}, M = B_1...B_k, and gradient at 0
/// c = b_1 + B_1^{-1} b_2 + (B_1 B_2)^{-1} b_3 + ...; tabulates the decay of u - Q at r = theta^j.
template <class U>
QuadraticExtraction extract_quadratic(const IterationTrace& trace, U&& u, int levels = 0) {
    if (trace.frames.size() < 2) throw UsageError("quadratic extraction needs at least two recorded steps");
    const int n = trace.frames.front().dim();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (const auto& F : trace.frames) {
        c += M.inverse() * F.b;
        M = M * F.B;
    }
    QuadraticExtraction out;
    out.within_budget = trace.within_budget();
    out.Q.P = (M * M.transpose()).inverse();
    out.Q.P = 0.5 * (out.Q.P + out.Q.P.transpose());
    out.Q.c = c;
    out.Q.q0 = u(Point{0.0, 0.0, 0.0});
    if (levels <= 0) levels = static_cast<int>(trace.frames.size());
    const double alpha = trace.budget.alpha;
    for (int j = 1; j <= levels; ++j) {
        const double r = std::pow(trace.budget.theta, j);
        DecayRow d;
        d.r = r;
        d.mean_sq = ball_mean_square([&](const Point& x) { return u(x) - out.Q(x); }, r, n);
        d.normalized = d.mean_sq / std::pow(r, 2.0 * (2.0 + alpha));
        out.table.push_back(d);
    }
    return out;
}

struct ConvexSupBound {
    double sup_norm = 0.0;
    double ratio = 0.0;
    double mu = 0.0;
};

/// sup_{B_{1/2}} |u - |x|^2/2| and its ratio to delta^mu, mu = 4/(4+n); u must be convex.
inline ConvexSupBound convex_sup_bound(const ScalarField& u, double delta, double convex_tol = 1e-10) {
    if (!(delta > 0.0)) throw InputError("delta must be positive");
    require_convex(u, convex_tol);
    const Grid& g = u.grid;
    if (g.halfwidth() < 0.5) throw DomainError("field must cover B_{1/2}");
    ConvexSupBound out;
    out.mu = 4.0 / (4.0 + g.dim());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point x = g.node(i);
        if (norm2(x) <= 0.25 + 1e-12) out.sup_norm = std::max(out.sup_norm, std::abs(u.values[i] - 0.5 * norm2(x)));
    }
    out.ratio = out.sup_norm / std::pow(delta, out.mu);
    return out;
}

} // namespace otreg
