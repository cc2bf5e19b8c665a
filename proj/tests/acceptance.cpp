#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "otreg/campanato.hpp"
#include "otreg/constructions.hpp"
#include "otreg/field_io.hpp"
#include "otreg/harmonic.hpp"
#include "otreg/instances.hpp"
#include "otreg/mccann.hpp"
#include "otreg/ot.hpp"

using namespace otreg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

RegularityBudget standard_budget() { return budget_constants(0.1, 0.1, 0.5, 0.75, 1.0); }

Outcome exact_vs_entropic() {
    // Exact costs from an independent LP solve of the same fixtures (scipy HiGHS).
    const struct {
        const char* name;
        double lp_cost;
    } fixtures[] = {{"disc_shift", 0.14453125},
                    {"random_blocks", 8.13374310799},
                    {"line_bumps", 0.499807411455},
                    {"cube_3d", 0.804465961515},
                    {"dilation", 0.0056640625}};
    Outcome o{true, ""};
    for (const auto& f : fixtures) {
        const std::string base = std::string(OTREG_FIXTURE_DIR) + "/ot_" + f.name;
        const auto a = DiscreteMeasure::from_density(load_density_field(base + "_rho0.txt"));
        const auto b = DiscreteMeasure::from_density(load_density_field(base + "_rho1.txt"));
        if (a.size() > 64 || b.size() > 64) throw UsageError(std::string("fixture too large: ") + f.name);
        const TransportPlan exact = solve_exact(a, b);
        EntropicOptions eo;
        eo.reg = 1e-3;
        eo.tol = 1e-9;
        const TransportPlan ent = solve_entropic(a, b, eo);
        const double gap = std::abs(ent.cost() / exact.cost() - 1.0);
        const double marg = ent.measured_marginal_error();
        const bool lp_agrees = std::abs(exact.cost() / f.lp_cost - 1.0) <= 1e-9;
        o.pass = o.pass && gap <= 0.02 && marg <= 1e-8 && lp_agrees;
        o.detail += fmt("%s gap %.2e marg %.1e; ", f.name, gap, marg);
    }
    return o;
}

Outcome identity_instance() {
    const auto inst = instances::identity();
    const RegularityBudget budget = standard_budget();
    const StepResult st = one_step(inst, 1.0, budget);
    const double frame = st.frame.deviation() + st.frame.b.norm();
    const IterationTrace tr = iterate(inst, budget);
    double worst = 0.0;
    for (const auto& r : tr.rows) worst = std::max({worst, r.E, r.p_sq, r.B_dev, r.b_norm});
    const bool pass = st.before.E <= 1e-10 && frame <= 1e-8 && worst <= 1e-12 && tr.rows.size() == 4u;
    return {pass, fmt("E = %.2e, |B - I| + |b| = %.2e, max trace entry %.2e over %zu rows", st.before.E, frame, worst,
                      tr.rows.size())};
}

Outcome translation_instance() {
    const double len = 0.05;
    const auto inst = instances::translation({len, 0.0, 0.0});
    const RegularityBudget budget = standard_budget();
    StepOptions so;
    so.nodes = 129;
    const double h = working_grid(inst, so).spacing();
    const StepResult st = one_step(inst, 1.0, budget, so);
    const double e_err = std::abs(st.before.E / (len * len) - 1.0);
    const double b_err = std::hypot(st.frame.b[0] - len, st.frame.b[1]);
    const double ratio = st.after.E / st.before.E;
    const double lim = std::pow(budget.theta, 2.0 * budget.alpha_prime) + 0.02;
    const bool pass = e_err <= 0.05 && b_err <= 3.0 * h && ratio <= lim;
    return {pass, fmt("E/|b|^2 - 1 = %.2e, |b - b_true| = %.2e (3h = %.2e), E_new/E = %.2e (limit %.4f)", e_err, b_err,
                      3.0 * h, ratio, lim)};
}

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

Outcome neumann_order() {
    Outcome o{true, ""};
    for (int deg : {2, 3}) {
        const double ratio = manufactured_error(deg, 0.75, 48) / manufactured_error(deg, 0.75, 96);
        o.pass = o.pass && ratio >= 3.2 && ratio <= 4.8;
        o.detail += fmt("degree %d ratio %.3f; ", deg, ratio);
    }
    return o;
}

Outcome frame_unimodularity() {
    std::mt19937_64 rng(20240611);
    std::normal_distribution<double> z;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 2;
        Eigen::MatrixXd A(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) A(i, j) = A(j, i) = z(rng);
        A = trace_free(A);
        A *= std::uniform_real_distribution<double>(0.0, 1.0)(rng) / operator_norm(A);
        worst = std::max(worst, std::abs(matrix_exp_sym(A).determinant() - 1.0));
    }
    return {worst <= 1e-12, fmt("max |det - 1| = %.2e over 100 matrices", worst)};
}

Outcome counterexample_decay() {
    const auto spec = CounterexampleSpec::make(0.5, 2.0);
    const auto tab = counterexample_decay_check(spec, dyadic_radii(2, 9));
    double worst = 0.0;
    for (const auto& r : tab.rows) worst = std::max(worst, std::abs(r.region / r.region_oracle - 1.0));
    return {tab.slope >= 0.45 && worst <= 0.01, fmt("slope %.4f (limit 0.45), max A_r gap %.2e", tab.slope, worst)};
}

Outcome sharpness_exponents() {
    SharpnessSpec spec;
    spec.depth = 11;
    const SharpnessReport rep = sharpness_check(spec, 2, 10);
    const double linf = 2.0 + 4.0 * spec.alpha / (4.0 + spec.n);
    bool diverges = true;
    std::string betas;
    for (double beta : {linf + 0.1, 2.5, 3.0, 4.0}) {
        double prev = 0.0;
        for (const auto& lv : rep.levels) {
            const double r = std::ldexp(1.0, -lv.N);
            const double lit = lv.linf / std::pow(r, 2.0 + beta);
            const double tight = lv.linf / std::pow(r, beta);
            diverges = diverges && tight > prev && lit > tight;
            prev = tight;
        }
        betas += fmt(" %.3f:%.3g", beta, prev);
    }
    const bool pass = std::abs(rep.linf_exponent - linf) <= 0.05 && std::abs(rep.l2_exponent - 5.0) <= 0.1 && diverges;
    return {pass, fmt("Linf fit %.4f, L2 fit %.4f, ratio at N=10 for beta", rep.linf_exponent, rep.l2_exponent) + betas};
}

Outcome convex_lemma() {
    SharpnessSpec spec;
    spec.depth = 11;
    double lo = 1e300, hi = 0.0;
    for (int N = 2; N <= 8; ++N) {
        const double r = convex_lemma_exact(spec, N).ratio;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    // Grid cross-check on a coarser family whose balls are resolved at 513^2.
    SharpnessSpec coarse;
    coarse.radius_scale = 0.2;
    coarse.depth = 6;
    const Grid g(2, 513, 1.0);
    double gap = 0.0;
    for (int N = 2; N <= 4; ++N) {
        const ScalarField u = rescaled_sharpness(coarse, N, g);
        double acc = 0.0, w = 0.0;
        for (const auto& nd : ball_quadrature(g, 1.0).nodes) {
            const double d = u.values[nd.index] - 0.5 * norm2(g.node(nd.index));
            acc += nd.weight * d * d;
            w += nd.weight;
        }
        const ConvexSupBound num = convex_sup_bound(u, std::sqrt(acc / w));
        gap = std::max(gap, std::abs(num.ratio / convex_lemma_exact(coarse, N).ratio - 1.0));
    }
    const bool pass = lo > 0.0 && hi / lo <= 8.0 && gap <= 0.01;
    return {pass, fmt("ratio in [%.6f, %.6f], c2/c1 = %.4f, grid cross-check gap %.2e", lo, hi, hi / lo, gap)};
}

Outcome continuity_decay() {
    Outcome o{true, ""};
    for (const char* kind : {"translation", "dilation"}) {
        const bool shift = std::string(kind) == "translation";
        std::vector<double> res;
        for (int n : {65, 129, 257}) {
            const Grid g(2, n, 1.25);
            const double r0 = shift ? 1.15 : 0.5;
            const auto rho = DensityField::from_function(g, [&](const Point& x) { return norm2(x) < r0 * r0 ? 1.0 : 0.0; });
            const auto T = VectorField::from_function(g, [&](const Point& x) { return shift ? x + Point{0.05, 0.0, 0.0} : 1.2 * x; });
            res.push_back(continuity_residual(interpolate(rho, T, uniform_times(16 * (n - 1) / 64 + 1))));
        }
        const double q1 = res[0] / res[1], q2 = res[1] / res[2];
        o.pass = o.pass && q1 >= 1.5 && q1 <= 2.5 && q2 >= 1.5 && q2 <= 2.5;
        o.detail += fmt("%s ratios %.3f, %.3f; ", kind, q1, q2);
    }
    return o;
}

Outcome iteration_envelope() {
    const RegularityBudget b = standard_budget();
    IterateOptions io;
    io.step.nodes = 257;
    io.k_max = 3;
    const IterationTrace tr = iterate(instances::smooth_bump(), b, io);
    bool pass = !tr.rows.empty();
    std::string rows;
    for (const auto& r : tr.rows) {
        const double env = b.eps1 * std::pow(b.theta, 2.0 * b.alpha * r.k);
        const bool ok = r.E <= b.C1 * env && r.p_sq <= b.C2 * env;
        pass = pass && ok;
        rows += fmt(" k=%d E/(C1 env)=%.3g p2/(C2 env)=%.3g", r.k, r.E / (b.C1 * env), r.p_sq / (b.C2 * env));
    }
    return {pass, "stop: " + tr.reason + ";" + rows};
}

Outcome budget_arithmetic() {
    // Independent re-derivation: mpmath at 30 digits with the geometric series summed term by term.
    const RegularityBudget b = standard_budget();
    const double d = std::max({std::abs(b.C1 - 38.4604989415154140), std::abs(b.C2 - 8.1),
                               std::abs(b.C3 - 465.604989415154140), std::abs(b.C4 - 465.604989415154140)});
    const bool worked = std::abs(b.C1 - 38.46) <= 0.005 && std::abs(b.C3 - 465.6) <= 0.05 && std::abs(b.C2 - 8.1) <= 1e-12;
    return {d <= 1e-6 && worked, fmt("C1 = %.6f, C2 = %.6f, C3 = C4 = %.6f, max deviation %.2e, eps1 = %.6e", b.C1, b.C2,
                                     b.C3, d, b.eps1)};
}

struct Criterion {
    const char* title;
    double limit_s;
    std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> c{
        {"exact vs entropic transport", 10.0, exact_vs_entropic},
        {"identity instance", 5.0, identity_instance},
        {"translation instance", 60.0, translation_instance},
        {"Neumann solver order", 30.0, neumann_order},
        {"frame unimodularity", 1.0, frame_unimodularity},
        {"counterexample decay", 60.0, counterexample_decay},
        {"sharpness exponents", 120.0, sharpness_exponents},
        {"convex lemma band", 60.0, convex_lemma},
        {"continuity residual order", 120.0, continuity_decay},
        {"iteration envelope", 600.0, iteration_envelope},
        {"budget arithmetic", 1.0, budget_arithmetic},
    };
    return c;
}

bool run_one(std::size_t k) {
    const Criterion& c = criteria()[k - 1];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = c.run();
    } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs <= c.limit_s;
    std::printf("%s %zu %s: %s [%.2f s, limit %.0f s]\n", pass ? "PASS" : "FAIL", k, c.title, o.detail.c_str(), secs,
                c.limit_s);
    std::fflush(stdout);
    return pass;
}

} // namespace

int main(int argc, char** argv) {
    const std::size_t total = criteria().size();
    if (argc > 2) {
        std::fprintf(stderr, "usage: acceptance [1..%zu]\n", total);
        return 2;
    }
    if (argc == 2) {
        char* end = nullptr;
        const long k = std::strtol(argv[1], &end, 10);
        if (*end != '\0' || k < 1 || static_cast<std::size_t>(k) > total) {
            std::fprintf(stderr, "criterion must be 1..%zu\n", total);
            return 2;
        }
        return run_one(static_cast<std::size_t>(k)) ? 0 : 1;
    }
    bool all = true;
    for (std::size_t k = 1; k <= total; ++k) all = run_one(k) && all;
    return all ? 0 : 1;
}
