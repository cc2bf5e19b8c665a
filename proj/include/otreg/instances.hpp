#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "otreg/grid.hpp"

namespace otreg {

/// A transport problem given by pointwise sources: densities, map and (optionally) the
/// Brenier potential. Grid-backed sources carry their data spacing; analytic ones carry 0.
struct TransportInstance {
    std::string name = "custom";
    int dim = 2;
    std::function<double(const Point&)> rho0;
    std::function<double(const Point&)> rho1;
    std::function<Point(const Point&)> T;
    std::function<double(const Point&)> potential;   ///< may be empty
    double data_spacing = 0.0;                        ///< 0 for analytic sources

    bool analytic() const { return data_spacing <= 0.0; }

    /// Samples multilinearly from grid fields (densities vanish outside the grid).
    static TransportInstance from_fields(const DensityField& rho0, const DensityField& rho1, const VectorField& T,
                                         const ScalarField* u = nullptr) {
        require_same_grid(rho0.grid, T.grid, "TransportInstance(rho0, T)");
        TransportInstance inst;
        inst.name = "custom-file";
        inst.dim = rho0.grid.dim();
        auto r0 = std::make_shared<DensityField>(rho0);
        auto r1 = std::make_shared<DensityField>(rho1);
        auto map = std::make_shared<VectorField>(T);
        inst.rho0 = [r0](const Point& x) { return sample(*r0, x); };
        inst.rho1 = [r1](const Point& y) { return sample(*r1, y); };
        inst.T = [map](const Point& x) { return sample(*map, x); };
        if (u) {
            auto pot = std::make_shared<ScalarField>(*u);
            inst.potential = [pot](const Point& x) { return sample(*pot, x); };
        }
        inst.data_spacing = rho0.grid.spacing();
        return inst;
    }
};

inline Eigen::VectorXd to_vector(const Point& p, int dim) {
    Eigen::VectorXd v(dim);
    for (int a = 0; a < dim; ++a) v[a] = p[a];
    return v;
}

inline Point to_point(const Eigen::VectorXd& v) {
    Point p{0.0, 0.0, 0.0};
    for (int a = 0; a < v.size(); ++a) p[a] = v[a];
    return p;
}

namespace instances {

/// Radius of the uniform support used by the unit-scale instances; it strictly contains B_1.
constexpr double support_radius = 1.15;

inline double ball_indicator(const Point& x, double r, const Point& c = {0.0, 0.0, 0.0}) {
    return norm2(x - c) < r * r ? 1.0 : 0.0;
}

inline TransportInstance identity(int dim = 2) {
    TransportInstance inst;
    inst.name = "identity";
    inst.dim = dim;
    inst.rho0 = [](const Point& x) { return ball_indicator(x, support_radius); };
    inst.rho1 = inst.rho0;
    inst.T = [](const Point& x) { return x; };
    inst.potential = [](const Point& x) { return 0.5 * norm2(x); };
    return inst;
}

inline TransportInstance translation(const Point& b, int dim = 2) {
    TransportInstance inst;
    inst.name = "translation";
    inst.dim = dim;
    inst.rho0 = [](const Point& x) { return ball_indicator(x, support_radius); };
    inst.rho1 = [b](const Point& y) { return ball_indicator(y, support_radius, b); };
    inst.T = [b](const Point& x) { return x + b; };
    inst.potential = [b](const Point& x) { return 0.5 * norm2(x) + dot(b, x); };
    return inst;
}

/// T = lambda x from the ball of radius r0 onto the ball of radius lambda r0.
inline TransportInstance dilation(double lambda, double r0 = 0.5, int dim = 2) {
    if (!(lambda > 0.0)) throw InputError("dilation factor must be positive");
    TransportInstance inst;
    inst.name = "dilation";
    inst.dim = dim;
    const double jac = std::pow(lambda, -dim);
    inst.rho0 = [r0](const Point& x) { return ball_indicator(x, r0); };
    inst.rho1 = [=](const Point& y) { return jac * ball_indicator(y, lambda * r0); };
    inst.T = [lambda](const Point& x) { return lambda * x; };
    inst.potential = [lambda](const Point& x) { return 0.5 * lambda * norm2(x); };
    return inst;
}

/// T = (I + sS)x for symmetric S; requires I + sS positive definite.
inline TransportInstance linear_map(double s, const Eigen::MatrixXd& S) {
    const int dim = static_cast<int>(S.rows());
    if (S.cols() != dim || (S - S.transpose()).norm() > 1e-12) throw InputError("linear map needs a symmetric matrix");
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(dim, dim) + s * S;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.eigenvalues().minCoeff() <= 0.0) throw InputError("I + sS must be positive definite");
    const Eigen::MatrixXd Minv = M.inverse();
    const double det = M.determinant();
    TransportInstance inst;
    inst.name = "linear-map";
    inst.dim = dim;
    inst.rho0 = [](const Point& x) { return ball_indicator(x, support_radius); };
    inst.rho1 = [=](const Point& y) { return ball_indicator(to_point(Minv * to_vector(y, dim)), support_radius) / det; };
    inst.T = [=](const Point& x) { return to_point(M * to_vector(x, dim)); };
    inst.potential = [=](const Point& x) {
        const Eigen::VectorXd v = to_vector(x, dim);
        return 0.5 * v.dot(M * v);
    };
    return inst;
}

/// Manufactured smooth perturbation u = |x|^2/2 + amp psi with psi = beta h, where
/// beta(x) = (1 - |x|^2/s^2)^4 on B_s and h = x1^3 - 3 x1 x2^2 is harmonic. T = grad u,
/// rho1 uniform on B_{1.15} and rho0 = det D^2 u there, so rho0 - 1 vanishes to second order at 0.
struct SmoothBump {
    double amp = 0.01;
    double scale = 0.9;

    double weight(const Point& x) const {
        const double w = 1.0 - norm2(x) / (scale * scale);
        return w > 0.0 ? w : 0.0;
    }

    static double harmonic(const Point& x) { return x[0] * x[0] * x[0] - 3.0 * x[0] * x[1] * x[1]; }

    double psi(const Point& x) const {
        const double w = weight(x);
        return w * w * w * w * harmonic(x);
    }

    Point grad_psi(const Point& x) const {
        const double w = weight(x);
        if (w <= 0.0) return {0.0, 0.0, 0.0};
        const double s2 = scale * scale;
        const Point dbeta = (-8.0 * w * w * w / s2) * x;
        const Point dh{3.0 * x[0] * x[0] - 3.0 * x[1] * x[1], -6.0 * x[0] * x[1], 0.0};
        return harmonic(x) * dbeta + (w * w * w * w) * dh;
    }

    Eigen::Matrix2d hess_psi(const Point& x) const {
        const double w = weight(x);
        if (w <= 0.0) return Eigen::Matrix2d::Zero();
        const double s2 = scale * scale;
        const Eigen::Vector2d v(x[0], x[1]);
        const Eigen::Matrix2d d2beta =
            (-8.0 * w * w * w / s2) * Eigen::Matrix2d::Identity() + (48.0 * w * w / (s2 * s2)) * (v * v.transpose());
        const Eigen::Vector2d dbeta = (-8.0 * w * w * w / s2) * v;
        const Eigen::Vector2d dh(3.0 * x[0] * x[0] - 3.0 * x[1] * x[1], -6.0 * x[0] * x[1]);
        Eigen::Matrix2d d2h;
        d2h << 6.0 * x[0], -6.0 * x[1], -6.0 * x[1], -6.0 * x[0];
        return harmonic(x) * d2beta + dbeta * dh.transpose() + dh * dbeta.transpose() + (w * w * w * w) * d2h;
    }

    double density(const Point& x) const {
        const Eigen::Matrix2d D = Eigen::Matrix2d::Identity() + amp * hess_psi(x);
        return D.determinant();
    }
};

inline TransportInstance smooth_bump(const SmoothBump& sb = {}) {
    TransportInstance inst;
    inst.name = "smooth-bump";
    inst.dim = 2;
    inst.rho0 = [sb](const Point& x) { return ball_indicator(x, support_radius) * sb.density(x); };
    inst.rho1 = [](const Point& y) { return ball_indicator(y, support_radius); };
    inst.T = [sb](const Point& x) { return x + sb.amp * sb.grad_psi(x); };
    inst.potential = [sb](const Point& x) { return 0.5 * norm2(x) + sb.amp * sb.psi(x); };
    return inst;
}

inline TransportInstance by_name(const std::string& kind, double param = 0.05) {
    if (kind == "identity") return identity();
    if (kind == "translation") return translation({param, 0.0, 0.0});
    if (kind == "dilation") return dilation(1.0 + param);
    if (kind == "linear-map") {
        Eigen::MatrixXd S(2, 2);
        S << 1.0, 0.5, 0.5, -1.0;
        return linear_map(param, S);
    }
    if (kind == "smooth-bump") return smooth_bump();
    throw InputError("unknown instance kind: " + kind);
}

} // namespace instances

/// Samples the instance at scale R onto a unit-scale grid: rho(R x), T(R x)/R.
struct SampledInstance {
    DensityField rho0, rho1;
    VectorField T;
};

inline SampledInstance sample_instance(const TransportInstance& inst, const Grid& g, double R = 1.0) {
    SampledInstance s{DensityField(g), DensityField(g), VectorField(g)};
    std::vector<double> v0(g.size()), v1(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point x = g.node(i);
        const Point xr = R * x;
        v0[i] = inst.rho0(xr);
        v1[i] = inst.rho1(xr);
        s.T.values[i] = (1.0 / R) * inst.T(xr);
    }
    s.rho0 = DensityField::from_values(g, std::move(v0));
    s.rho1 = DensityField::from_values(g, std::move(v1));
    return s;
}

} // namespace otreg
