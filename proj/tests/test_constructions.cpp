#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "otreg/constructions.hpp"
#include "otreg/contour.hpp"
#include "otreg/quadrature.hpp"

using namespace otreg;

namespace {

double signed_area(const Polyline& pl) {
    double a = 0.0;
    for (std::size_t i = 0; i + 1 < pl.points.size(); ++i)
        a += pl.points[i][0] * pl.points[i + 1][1] - pl.points[i + 1][0] * pl.points[i][1];
    return 0.5 * a;
}

} // namespace

TEST(Counterexample, ConstantsForAlphaHalfPTwo) {
    const auto s = CounterexampleSpec::make(0.5, 2.0);
    EXPECT_NEAR(s.gamma, 10.0 / 3.0, 1e-14);
    EXPECT_NEAR(s.a, 0.78, 1e-14);
    EXPECT_NEAR(s.b, 5.62, 1e-14);
    EXPECT_NEAR(s.clamp(), 3.22624708286210883, 1e-13);
}

TEST(Counterexample, RejectsBadParameters) {
    EXPECT_THROW(CounterexampleSpec::make(1.0, 2.0), InputError);
    EXPECT_THROW(CounterexampleSpec::make(0.5, 0.5), InputError);
    EXPECT_THROW(CounterexampleSpec::make(0.5, 2.0, -1.0), InputError);
    CounterexampleSpec s = CounterexampleSpec::make(0.5, 2.0);
    s.gamma = 4.0;   // 2p/gamma = 1
    EXPECT_THROW(s.validate(), SpecError);
    s = CounterexampleSpec::make(0.5, 2.0);
    s.a = -1.0;
    EXPECT_THROW(s.validate(), SpecError);
}

TEST(Counterexample, DensityIsEvenAndClampedOffTheCusp) {
    const auto s = CounterexampleSpec::make(0.5, 2.0);
    for (double x : {0.01, 0.05, 0.2})
        for (double y : {0.001, 0.1, 0.3}) {
            EXPECT_EQ(s(x, y), s(-x, y));
            EXPECT_EQ(s(x, y), s(x, -y));
            EXPECT_LE(s(x, y), s.clamp() + 1e-12);
            EXPECT_GE(s(x, y), s.a);
        }
    EXPECT_EQ(s(0.1, 0.0), s.clamp());
    EXPECT_EQ(s(0.0, 0.2), s.a);
    EXPECT_THROW(counterexample_density(s, Grid(3, 5, 1.0)), InputError);
}

TEST(Counterexample, DecayTableMatchesDoubleIntegralOracle) {
    // Oracle: mpmath double integral of |f - a|^2 over R_r (30 digits), region part reported separately.
    const auto s = CounterexampleSpec::make(0.5, 2.0);
    const auto t = counterexample_decay_check(s, {0.25, 0.125, std::ldexp(1.0, -9)});
    ASSERT_EQ(t.rows.size(), 3u);
    const double value[] = {0.165426526658006820, 0.0379522250014626218, 3.01819813294308045e-06};
    const double region[] = {7.64198628583183680e-3, 4.59206856795765106e-4, 9.51978658409923665e-12};
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(t.rows[i].value / value[i], 1.0, 1e-9) << i;
        EXPECT_NEAR(t.rows[i].region / region[i], 1.0, 1e-9) << i;
        EXPECT_NEAR(t.rows[i].region_oracle / region[i], 1.0, 1e-12) << i;
        EXPECT_FALSE(t.rows[i].closed_form_inner);
    }
}

TEST(Counterexample, DecaySlopeExceedsAlpha) {
    const auto s = CounterexampleSpec::make(0.5, 2.0);
    const auto t = counterexample_decay_check(s, dyadic_radii(2, 9));
    EXPECT_NEAR(t.slope, 1.12746233148659, 1e-8);
    EXPECT_GE(t.slope, 0.5);
    EXPECT_THROW(counterexample_decay_check(s, {0.75}), InputError);
    EXPECT_EQ(t.csv().rows(), 8u);
}

TEST(DyadicRadii, PowersOfTwo) {
    const auto r = dyadic_radii(2, 4);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0], 0.25);
    EXPECT_EQ(r[2], 0.0625);
}

TEST(Sharpness, SpecGeometry) {
    SharpnessSpec s;
    s.depth = 11;
    EXPECT_NO_THROW(s.validate());
    for (int k = 1; k <= 11; ++k) EXPECT_NEAR(s.offset(k) + s.radius(k), std::ldexp(1.0, -k), 1e-16);
    s.radius_scale = 0.9;
    EXPECT_THROW(s.validate(), SpecError);
    s.radius_scale = 0.01;
    s.n = 4;
    EXPECT_THROW(s.validate(), SpecError);
}

TEST(Sharpness, FunctionIsConvexAndTouchesQOutsideBalls) {
    SharpnessSpec s;
    s.depth = 3;
    EXPECT_EQ(s({0.0, 0.3, 0.0}), 0.5 * 0.09);
    const Point z = s.center(1);
    EXPECT_NEAR(s(z) - 0.5 * norm2(z), 0.5 * s.radius(1) * s.radius(1), 1e-16);
    EXPECT_THROW(sharpness_function(s, Grid(2, 65, 1.0)), DomainError);
}

TEST(Sharpness, ExponentFits) {
    // n = 2, alpha = 1/2: sup decays like r^{2 + 4 alpha/6} = r^{7/3}, the L2 average like r^{2(2 + alpha)} = r^5.
    SharpnessSpec s;
    s.depth = 11;
    const auto rep = sharpness_check(s, 2, 10);
    EXPECT_NEAR(rep.linf_exponent, 7.0 / 3.0, 1e-6);
    EXPECT_NEAR(rep.l2_exponent, 5.0, 0.01);
    EXPECT_EQ(rep.levels.size(), 9u);
    for (const auto& l : rep.levels) EXPECT_TRUE(l.analytic);
}

TEST(Sharpness, ConvexLemmaRatioIsScaleFree) {
    // Closed-form ratio (mpmath): 0.226547016381407 for every N with the remaining balls summed exactly.
    SharpnessSpec s;
    s.depth = 11;
    for (int N = 2; N <= 6; ++N) EXPECT_NEAR(convex_lemma_exact(s, N).ratio, 0.226547016381407, 1e-11) << N;
}

TEST(LevelSets, UnitCircleIsClosedAndClockwise) {
    const Grid g(2, 129, 1.5);
    const auto f = ScalarField::from_function(g, [](const Point& x) { return norm2(x); });
    const auto lines = level_sets(f, {1.0});
    ASSERT_EQ(lines.size(), 1u);
    EXPECT_TRUE(lines[0].closed);
    double worst = 0.0;
    for (const Point& p : lines[0].points) worst = std::max(worst, std::abs(norm(p) - 1.0));
    EXPECT_LT(worst, 2e-4);
    // Larger values on the left: the circle is traversed clockwise.
    EXPECT_NEAR(signed_area(lines[0]), -M_PI, 2e-3);
    EXPECT_TRUE(level_sets(f, {10.0}).empty());
}

TEST(LevelSets, CsvRoundTrip) {
    const Grid g(2, 33, 1.5);
    const auto f = ScalarField::from_function(g, [](const Point& x) { return norm2(x); });
    const auto lines = level_sets(f, {0.25, 1.0});
    std::stringstream ss(polylines_csv(lines).str());
    const auto back = polylines_from_csv(read_csv(ss));
    ASSERT_EQ(back.size(), lines.size());
    for (std::size_t c = 0; c < lines.size(); ++c) {
        EXPECT_EQ(back[c].points.size(), lines[c].points.size());
        EXPECT_EQ(back[c].closed, lines[c].closed);
    }
    EXPECT_NE(polylines_svg(lines, 1.5).find("<svg"), std::string::npos);
}

TEST(Quadrature, AdaptiveAndSlope) {
    const auto r = adaptive_integrate([](double x) { return std::exp(x); }, 0.0, 1.0, 1e-12);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.value, std::exp(1.0) - 1.0, 1e-13);
    EXPECT_NEAR(fit_slope({0.0, 1.0, 2.0}, {1.0, 3.0, 5.0}), 2.0, 1e-14);
    EXPECT_TRUE(std::isnan(fit_slope({1.0}, {1.0})));
}
