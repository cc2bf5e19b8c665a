#include <gtest/gtest.h>

#include <cmath>

#include "otreg/harmonic.hpp"

using namespace otreg;

namespace {

/// Max |phi - p| over nodes with |x| <= R - 2h for the harmonic polynomial p = Re z^deg.
double manufactured_error(int deg, double R, int cells) {
    const double h = R / cells;
    auto data = [&](double th) { return deg * std::pow(R, deg - 1) * std::cos(deg * th); };
    const auto flux = BoundaryFlux::from_function(R, angular_samples(R, h), data);
    const HarmonicField phi = solve_neumann(R, flux, h, 1e-6);
    double worst = 0.0;
    for (std::size_t i = 0; i < phi.phi.size(); ++i) {
        const Point x = phi.phi.grid.node(i);
        if (!phi.inside[i] || norm(x) > R - 2.0 * h) continue;
        const double exact = deg == 2 ? x[0] * x[0] - x[1] * x[1] : x[0] * x[0] * x[0] - 3.0 * x[0] * x[1] * x[1];
        worst = std::max(worst, std::abs(phi.phi.values[i] - exact));
    }
    return worst;
}

InterpolationPath translation_path(int n, const Point& b, int slices = 9) {
    const Grid g(2, n, 1.25);
    const auto rho = DensityField::from_function(g, [](const Point& x) { return norm2(x) < 1.15 * 1.15 ? 1.0 : 0.0; });
    const auto T = VectorField::from_function(g, [&](const Point& x) { return x + b; });
    return interpolate(rho, T, uniform_times(slices));
}

} // namespace

TEST(AngularSamples, MultipleOfEightAndAtLeastSixteen) {
    for (double h : {0.5, 0.1, 0.01, 0.003}) {
        const int M = angular_samples(0.75, h);
        EXPECT_EQ(M % 8, 0);
        EXPECT_GE(M, 16);
    }
    EXPECT_GT(angular_samples(0.75, 0.01), angular_samples(0.75, 0.02));
}

TEST(BoundaryFlux, ConstantDataIsMadeCompatible) {
    const auto f = BoundaryFlux::from_function(0.75, 32, [](double) { return 0.3; });
    EXPECT_NEAR(f.removed_mean, 0.3, 1e-15);
    EXPECT_NEAR(f.raw_compatibility(), 0.3 * 2.0 * M_PI * 0.75, 1e-13);
    for (double th : {0.0, 1.0, 4.0}) EXPECT_NEAR(f.value(th), 0.0, 1e-15);
    EXPECT_THROW(BoundaryFlux::from_function(0.75, 4, [](double) { return 0.0; }), InputError);
}

TEST(BoundaryFlux, CsvMarksSteadyData) {
    const auto f = BoundaryFlux::from_function(0.75, 16, [](double th) { return std::cos(th); });
    const std::string s = f.csv().str();
    EXPECT_EQ(s.rfind("theta,t,f\n0,-1,1\n", 0), 0u);
    EXPECT_EQ(f.csv().rows(), 16u);
}

TEST(BoundaryFlux, TranslationPathHasCosineFlux) {
    const Point b{0.05, 0.0, 0.0};
    const auto path = translation_path(129, b);
    const auto f = BoundaryFlux::from_path(path, 0.75);
    EXPECT_NEAR(f.correction, 0.0, 1e-12);
    for (std::size_t i = 0; i < f.size(); i += 7) EXPECT_NEAR(f.fbar[i], 0.05 * std::cos(f.theta[i]), 1e-12);
    EXPECT_EQ(f.times.size(), 9u);
}

TEST(SolveNeumann, SecondOrderForQuadraticAndCubic) {
    for (int deg : {2, 3}) {
        const double coarse = manufactured_error(deg, 0.75, 48);
        const double fine = manufactured_error(deg, 0.75, 96);
        EXPECT_GT(coarse / fine, 3.2) << deg;
        EXPECT_LT(coarse / fine, 4.8) << deg;
        EXPECT_LT(fine, 1e-4) << deg;
    }
}

TEST(SolveNeumann, RejectsUnderResolvedDisc) {
    const auto f = BoundaryFlux::from_function(0.75, 16, [](double th) { return std::cos(th); });
    EXPECT_THROW(solve_neumann(0.75, f, 0.2), InputError);
    EXPECT_THROW(solve_neumann(-1.0, f, 0.01), InputError);
}

TEST(SolveNeumann, ZeroDataGivesZeroField) {
    const auto f = BoundaryFlux::from_function(0.75, 64, [](double) { return 0.0; });
    const auto phi = solve_neumann(0.75, f, 0.75 / 24);
    for (double v : phi.phi.values) EXPECT_EQ(v, 0.0);
}

TEST(InteriorDerivatives, RecoverQuadraticHessian) {
    const double R = 0.75, h = R / 48;
    const auto f = BoundaryFlux::from_function(R, angular_samples(R, h), [&](double th) { return 2.0 * R * std::cos(2.0 * th); });
    const auto d = interior_derivatives(solve_neumann(R, f, h, 1e-6), 3);
    EXPECT_NEAR(d.grad.norm(), 0.0, 1e-6);
    EXPECT_NEAR(d.hess(0, 0), 2.0, 1e-3);
    EXPECT_NEAR(d.hess(1, 1), -2.0, 1e-3);
    EXPECT_NEAR(d.hess(0, 1), 0.0, 1e-6);
    EXPECT_NEAR(d.d3(0, 0, 0), 0.0, 1e-3);
    // int_{B_r} |grad p|^2 = 4 int |x|^2 = 2 pi r^4 with r = R - 2h.
    const double r = R - 2.0 * h;
    EXPECT_NEAR(d.energy, 2.0 * M_PI * std::pow(r, 4), 0.02 * 2.0 * M_PI * std::pow(r, 4));
    EXPECT_THROW(interior_derivatives(solve_neumann(R, f, h, 1e-6), 4), InputError);
}

TEST(GoodRadius, NeedsThreeCandidatesAndBreaksTiesLow) {
    const auto path = translation_path(65, {0.0, 0.0, 0.0}, 3);
    EXPECT_THROW(good_radius(path, {0.6, 0.7}), UsageError);
    std::vector<double> e;
    EXPECT_DOUBLE_EQ(good_radius(path, {0.9, 0.6, 0.75}, &e), 0.6);
    ASSERT_EQ(e.size(), 3u);
    for (double v : e) EXPECT_EQ(v, 0.0);
}

TEST(BoundaryEnergy, TranslationFluxEnergy) {
    // j = b on dB_R for all t, so int_0^1 int_{dB_R} |j|^2 = 2 pi R |b|^2.
    const auto path = translation_path(129, {0.05, 0.0, 0.0});
    EXPECT_NEAR(boundary_energy(path, 0.75), 2.0 * M_PI * 0.75 * 0.0025, 1e-12);
    const auto c = default_radius_candidates();
    EXPECT_EQ(c.size(), 9u);
    EXPECT_DOUBLE_EQ(c.front(), 0.55);
    EXPECT_DOUBLE_EQ(c.back(), 0.95);
}

TEST(HarmonicDefect, TranslationIsCapturedByLinearField) {
    const Point b{0.05, 0.0, 0.0};
    const auto path = translation_path(129, b);
    const auto f = BoundaryFlux::from_path(path, 0.75);
    const auto phi = solve_neumann(0.75, f, path.grid().spacing(), 1e-6);
    const auto rho = path.slices.front().rho;
    const auto d = harmonic_defect(path.map, rho, phi);
    EXPECT_LT(d.defect, 1e-10);
    EXPECT_NEAR(d.energy, 0.0025 * M_PI / 64.0, 0.01 * 0.0025 * M_PI / 64.0);
    const std::string rep = harmonic_report(0.75, 0.1, d, 0.0025, 0.0).str();
    EXPECT_EQ(rep.rfind("R,boundary_energy,defect,energy,ratio_lag1,ratio_lag2\n", 0), 0u);
}
