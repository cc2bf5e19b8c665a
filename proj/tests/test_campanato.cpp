#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "otreg/campanato.hpp"
#include "otreg/instances.hpp"

using namespace otreg;

namespace {

/// Independent oracle for e^{-A/2}: Taylor series after scaling by 2^-8, then repeated squaring.
Eigen::MatrixXd exp_series(const Eigen::MatrixXd& A) {
    const int n = static_cast<int>(A.rows());
    const Eigen::MatrixXd X = (-0.5 / 256.0) * A;
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n), sum = term;
    for (int k = 1; k < 20; ++k) {
        term = term * X / k;
        sum += term;
    }
    for (int s = 0; s < 8; ++s) sum = sum * sum;
    return sum;
}

RegularityBudget default_budget() { return budget_constants(0.1, 0.1, 0.5, 0.75, 1.0); }

} // namespace

TEST(Budget, WorkedExampleValues) {
    // Oracle: mpmath re-derivation with the geometric series summed term by term (30 digits).
    const RegularityBudget b = default_budget();
    EXPECT_NEAR(b.C2, 8.1, 1e-12);
    EXPECT_NEAR(b.C1, 38.4604989415154140, 1e-10);
    EXPECT_NEAR(b.C3, 465.604989415154140, 1e-9);
    EXPECT_NEAR(b.C4, b.C3, 0.0);
    EXPECT_NEAR(b.gate_factor, 79394.2007326149902, 1e-6);
    EXPECT_NEAR(b.eps1 / 1.58643556724170263e-12, 1.0, 1e-12);
    EXPECT_TRUE(b.admissible(b.eps1));
    EXPECT_FALSE(b.admissible(1.01 * b.eps1));
}

TEST(Budget, RejectsOutOfRangeInputs) {
    EXPECT_THROW(budget_constants(0.1, 0.2, 0.5, 0.75, 1.0), InputError);
    EXPECT_THROW(budget_constants(0.1, 0.1, 0.8, 0.75, 1.0), InputError);
    EXPECT_THROW(budget_constants(0.2, 0.1, 0.5, 0.75, 1.0), InputError);
    EXPECT_THROW(budget_constants(0.1, 0.1, 0.5, 0.75, 0.0), InputError);
}

TEST(Budget, FromStringAndTextBlock) {
    const RegularityBudget b = budget_from_string("0.1,0.1,0.5,0.75,1");
    EXPECT_DOUBLE_EQ(b.C1, default_budget().C1);
    EXPECT_THROW(budget_from_string("0.1,0.1,0.5"), InputError);
    EXPECT_THROW(budget_from_string("0.1,0.1,0.5,0.75,x"), InputError);
    EXPECT_NE(b.to_text().find("C2 = 8.0999999999999996\n"), std::string::npos);
}

TEST(MatrixExp, MatchesScalingAndSquaringSeries) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd A(2, 2);
        A << u(rng), u(rng), 0.0, u(rng);
        A(1, 0) = A(0, 1);
        EXPECT_LT((matrix_exp_sym(A) - exp_series(A)).norm(), 1e-12);
    }
    Eigen::MatrixXd nonsym(2, 2);
    nonsym << 0.0, 1.0, 0.0, 0.0;
    EXPECT_THROW(matrix_exp_sym(nonsym), InputError);
}

TEST(MatrixExp, TraceFreeGivesUnitDeterminant) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd A(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = i; j < 3; ++j) A(i, j) = A(j, i) = u(rng);
        A = trace_free(A);
        EXPECT_NEAR(A.trace(), 0.0, 1e-15);
        EXPECT_NEAR(matrix_exp_sym(A).determinant(), 1.0, 1e-12);
    }
}

TEST(ApplyFrame, PotentialGradientMatchesHattedMap) {
    const auto inst = instances::smooth_bump();
    AffineFrame F;
    F.B = matrix_exp_sym((Eigen::MatrixXd(2, 2) << 0.1, 0.05, 0.05, -0.1).finished());
    F.b = Eigen::Vector2d(0.01, -0.02);
    const auto hat = apply_frame(inst, F);
    const Point x{0.2, -0.1, 0.0};
    const double e = 1e-5;
    const double gx = (hat.potential(x + Point{e, 0, 0}) - hat.potential(x - Point{e, 0, 0})) / (2 * e);
    const double gy = (hat.potential(x + Point{0, e, 0}) - hat.potential(x - Point{0, e, 0})) / (2 * e);
    EXPECT_NEAR(gx, hat.T(x)[0], 1e-8);
    EXPECT_NEAR(gy, hat.T(x)[1], 1e-8);
}

TEST(OneStep, IdentityGivesIdentityFrame) {
    const auto st = one_step(instances::identity(), 1.0, default_budget());
    EXPECT_LE(st.before.E, 1e-10);
    EXPECT_LE((st.frame.B - Eigen::Matrix2d::Identity()).norm(), 1e-8);
    EXPECT_LE(st.frame.b.norm(), 1e-8);
}

TEST(OneStep, TranslationRecoversShift) {
    const auto st = one_step(instances::translation({0.05, 0.0, 0.0}), 1.0, default_budget());
    EXPECT_NEAR(st.before.E, 0.0025, 0.05 * 0.0025);
    EXPECT_NEAR(st.frame.b[0], 0.05, 1e-4);
    EXPECT_NEAR(st.frame.b[1], 0.0, 1e-6);
    EXPECT_LT(st.after.E / st.before.E, std::pow(0.1, 1.5) + 0.02);
    EXPECT_NEAR(st.moreover_ratio, 1.0, 0.01);
    EXPECT_NEAR(st.frame.determinant(), 1.0, 1e-12);
}

TEST(OneStep, LinearMapRecoversTraceFreeHessian) {
    Eigen::MatrixXd S(2, 2);
    S << 1.0, 0.5, 0.5, -1.0;
    const double s = 0.02;
    const auto st = one_step(instances::linear_map(s, S), 1.0, default_budget());
    EXPECT_LT((st.A / s - S).norm(), 2e-3);
    EXPECT_NEAR(st.frame.determinant(), 1.0, 1e-12);
    EXPECT_LT(st.after.E, 1e-2 * st.before.E);
}

TEST(OneStep, GateViolationCarriesMeasuredValue) {
    try {
        one_step(instances::dilation(1.2), 1.0, default_budget());
        FAIL() << "expected PreconditionError";
    } catch (const PreconditionError& e) {
        EXPECT_GT(e.measured(), 0.1);
    }
}

TEST(Iterate, IdentityTraceIsZero) {
    IterateOptions io;
    io.step.nodes = 65;
    const auto tr = iterate(instances::identity(), default_budget(), io);
    ASSERT_EQ(tr.rows.size(), 4u);
    for (const auto& r : tr.rows) {
        EXPECT_LE(r.E, 1e-12);
        EXPECT_LE(r.p_sq, 1e-12);
        EXPECT_LE(r.B_dev, 1e-12);
        EXPECT_LE(r.b_norm, 1e-12);
        EXPECT_TRUE(r.gate_ok);
        EXPECT_TRUE(r.envelope_ok);
    }
    EXPECT_TRUE(tr.within_budget());
    EXPECT_EQ(tr.reason, "k_max reached");
    EXPECT_EQ(tr.csv().str().rfind("k,E_k,p_sq_k,B_dev,b_norm,scale,gate_ok,envelope_ok\n", 0), 0u);
}

TEST(Iterate, TranslationExtractsShiftedParabola) {
    IterateOptions io;
    io.k_max = 2;
    const auto inst = instances::translation({0.05, 0.0, 0.0});
    const auto tr = iterate(inst, default_budget(), io);
    ASSERT_EQ(tr.frames.size(), 2u);
    EXPECT_LT(tr.rows[1].E, 1e-5 * tr.rows[0].E);
    const auto q = extract_quadratic(tr, inst.potential);
    EXPECT_NEAR(q.Q.c[0], 0.05, 1e-6);
    EXPECT_NEAR(q.Q.c[1], 0.0, 1e-8);
    EXPECT_LT((q.Q.P - Eigen::Matrix2d::Identity()).norm(), 1e-8);
    ASSERT_EQ(q.table.size(), 2u);
    EXPECT_LT(q.table[1].mean_sq, 1e-20);
    EXPECT_FALSE(q.within_budget);
}

TEST(Iterate, ResolutionFloorStopsGridSources) {
    const Grid g(2, 65, 1.25);
    const auto s = sample_instance(instances::identity(), g);
    const auto inst = TransportInstance::from_fields(s.rho0, s.rho1, s.T);
    IterateOptions io;
    io.step.nodes = 65;
    const auto tr = iterate(inst, default_budget(), io);
    EXPECT_EQ(tr.reason, "resolution floor at step 1");
    EXPECT_THROW(extract_quadratic(tr, [](const Point&) { return 0.0; }), UsageError);
}

TEST(ConvexSupBound, QuarticPerturbation) {
    // u = |x|^2/2 + d |x|^4: sup_{B_1/2} |u - Q| = d/16 and ratio = (d/16)/delta^{2/3}.
    const Grid g(2, 65, 1.0);
    const double d = 1e-3;
    const auto u = ScalarField::from_function(g, [d](const Point& x) { return 0.5 * norm2(x) + d * norm2(x) * norm2(x); });
    const auto r = convex_sup_bound(u, 0.01);
    EXPECT_NEAR(r.sup_norm, d / 16.0, 1e-15);
    EXPECT_NEAR(r.mu, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(r.ratio, (d / 16.0) / std::pow(0.01, 2.0 / 3.0), 1e-12);
    const auto bad = ScalarField::from_function(g, [](const Point& x) { return -norm2(x); });
    EXPECT_THROW(convex_sup_bound(bad, 0.01), InputError);
    EXPECT_THROW(convex_sup_bound(u, 0.0), InputError);
}
