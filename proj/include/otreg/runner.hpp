#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include "otreg/campanato.hpp"
#include "otreg/config.hpp"
#include "otreg/constructions.hpp"
#include "otreg/contour.hpp"
#include "otreg/figures.hpp"
#include "otreg/functionals.hpp"
#include "otreg/harmonic.hpp"
#include "otreg/instances.hpp"
#include "otreg/mccann.hpp"
#include "otreg/ot.hpp"

namespace otreg {

inline constexpr const char* version = "0.1.0";

/// Pipeline stages; a run executes a subset chosen by the subcommand.
enum Stage : unsigned {
    stage_ot = 1u << 0,
    stage_interpolate = 1u << 1,
    stage_harmonic = 1u << 2,
    stage_one_step = 1u << 3,
    stage_iterate = 1u << 4,
    stage_counterexample = 1u << 5,
    stage_sharpness = 1u << 6,
    stage_convex_lemma = 1u << 7,
    stage_default = 0xffffffffu,
};

struct RunOptions {
    unsigned stages = stage_default;
    bool save_slices = false;   ///< write every interpolation slice as field files
    int jobs = 1;               ///< concurrent sweep entries
};

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Output directory contents plus the pass/fail summary; the manifest is written last.
struct ReportBundle {
    std::string dir;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, double>> timings;
    std::vector<CheckResult> checks;
    std::vector<std::string> errors;
    std::vector<std::pair<std::string, std::string>> files;   ///< relative path, sha256 hex
    std::vector<std::pair<std::string, double>> summary;      ///< scalar results used by sweeps

    bool passed() const {
        if (!errors.empty()) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
    int exit_code() const { return passed() ? 0 : 1; }
};

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 initialisation failed");
    }
    char buf[1 << 15];
    while (is) {
        is.read(buf, sizeof buf);
        if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> library_versions() {
    return {
        {"otreg", version},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"openssl", OPENSSL_VERSION_TEXT},
        {"compiler", __VERSION__},
    };
}

inline constexpr const char* manifest_name = "manifest.txt";

/// Hashes every regular file below the bundle directory (except the manifest itself) and writes
/// the key-value manifest: status, config echo, versions, timings, checks, errors, files.
inline void write_manifest(ReportBundle& b) {
    namespace fs = std::filesystem;
    b.files.clear();
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(b.dir))
        if (e.is_regular_file()) {
            const std::string rel = fs::relative(e.path(), b.dir).generic_string();
            if (rel != manifest_name) names.push_back(rel);
        }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) b.files.emplace_back(n, sha256_file((fs::path(b.dir) / n).string()));
    std::ostringstream os;
    os << "manifest.format=1\n";
    os << "status=" << (b.passed() ? "pass" : "fail") << '\n';
    for (const auto& [k, v] : b.config) os << "config." << k << '=' << v << '\n';
    for (const auto& [k, v] : library_versions()) os << "version." << k << '=' << v << '\n';
    for (const auto& [k, v] : b.timings) os << "timing." << k << "_s=" << detail::fmt_double(v) << '\n';
    for (const auto& c : b.checks) {
        os << "check." << c.name << '=' << (c.pass ? "PASS" : "FAIL") << '\n';
        if (!c.detail.empty()) os << "check." << c.name << ".detail=" << c.detail << '\n';
    }
    for (std::size_t i = 0; i < b.errors.size(); ++i) os << "error." << i << '=' << b.errors[i] << '\n';
    for (const auto& [n, h] : b.files) os << "file." << n << "=sha256:" << h << '\n';
    detail::write_text(fs::path(b.dir) / manifest_name, os.str());
}

/// Parses a key-value manifest back into ordered pairs.
inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return out;
}

namespace detail {

inline std::string fmt_check(const char* f, double a, double b) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

/// Shared state of one pipeline run: output directory, timing and error capture.
class RunContext {
public:
    RunContext(const ExperimentConfig& cfg, const RunOptions& opt, ReportBundle& b)
        : cfg(cfg), opt(opt), bundle(b), dir(b.dir) {}

    const ExperimentConfig& cfg;
    const RunOptions& opt;
    ReportBundle& bundle;
    std::filesystem::path dir;

    bool wants(unsigned s) const { return (opt.stages & s) != 0; }

    /// Runs f, recording its wall time; library errors are recorded and end the stage.
    template <class F>
    bool stage(const std::string& name, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = true;
        try {
            f();
        } catch (const Error& e) {
            bundle.errors.push_back(name + ": " + e.what());
            ok = false;
        }
        bundle.timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        return ok;
    }

    void check(const std::string& name, bool pass, const std::string& detail = "") {
        bundle.checks.push_back({name, pass, detail});
    }

    void note(const std::string& key, double v) { bundle.summary.emplace_back(key, v); }

    void table(const std::string& name, const CsvTable& t) const { t.save((dir / name).string()); }

    void text(const std::string& name, const std::string& s) const { write_text(dir / name, s); }
};

inline CsvTable key_value_table(const std::vector<std::pair<std::string, double>>& kv) {
    CsvTable t({"name", "value"});
    for (const auto& [k, v] : kv) t.row({k, CsvTable::num(v)});
    return t;
}

inline RegularityBudget config_budget(const ExperimentConfig& c) {
    return budget_constants(c.eps, c.theta, c.alpha, c.alpha_prime, c.C0);
}

inline StepOptions config_step(const ExperimentConfig& c) {
    StepOptions s;
    s.nodes = c.nodes;
    s.halfwidth = c.halfwidth;
    s.slices = c.slices;
    s.p = c.p;
    return s;
}

/// Transport instance and its unit-scale samples, from the analytic catalogue or from files.
struct PreparedInstance {
    TransportInstance inst;
    SampledInstance sampled;
    bool has_map = true;
};

inline PreparedInstance prepare_instance(RunContext& ctx) {
    const ExperimentConfig& c = ctx.cfg;
    if (c.kind != "custom-file") {
        TransportInstance inst = instances::by_name(c.kind, c.param);
        const Grid g(inst.dim, c.nodes, c.halfwidth);
        return {inst, sample_instance(inst, g), true};
    }
    DensityField r0 = load_density_field(c.rho0_file);
    DensityField r1 = load_density_field(c.rho1_file);
    require_same_grid(r0.grid, r1.grid, "custom-file rho0/rho1");
    VectorField T(r0.grid);
    bool has_map = false;
    if (!c.map_file.empty()) {
        T = load_vector_field(c.map_file);
        require_same_grid(r0.grid, T.grid, "custom-file map");
        has_map = true;
    } else {
        for (std::size_t i = 0; i < T.size(); ++i) T.values[i] = r0.grid.node(i);
    }
    PreparedInstance p{TransportInstance::from_fields(r0, r1, T), SampledInstance{r0, r1, T}, has_map};
    return p;
}

inline void run_ot(RunContext& ctx, PreparedInstance& pi) {
    const ExperimentConfig& c = ctx.cfg;
    DensityField target = pi.sampled.rho1;
    target.normalize_mass(pi.sampled.rho0.mass());
    EntropicOptions eo;
    eo.reg = c.reg;
    eo.tol = c.tol;
    eo.max_iter = c.max_iter;
    const GridEntropicPlan plan = solve_entropic_grid(pi.sampled.rho0, target, eo);
    const TransportMap map = barycentric_map(plan);
    const BrenierPotential pot = brenier_potential(plan);
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < pi.sampled.rho0.size(); ++i)
        if (pi.sampled.rho0.support[i]) nodes.push_back(i);
    const double mono = monotonicity_defect(map.map, nodes, 10000, c.seed);
    std::vector<std::pair<std::string, double>> kv{{"reg", plan.reg},
                                                   {"cost", transport_cost(plan)},
                                                   {"marginal_error", plan.marginal_error},
                                                   {"iterations", static_cast<double>(plan.iterations)},
                                                   {"monotonicity_defect", mono},
                                                   {"envelope_change", pot.envelope_change}};
    if (pi.has_map) {
        double err = 0.0, w = 0.0;
        for (std::size_t i : nodes) {
            const double m = pi.sampled.rho0.values[i];
            err += m * norm2(map.map.values[i] - pi.sampled.T.values[i]);
            w += m;
        }
        kv.emplace_back("map_l2_error", std::sqrt(err / std::max(w, 1e-300)));
    }
    ctx.table("ot.csv", key_value_table(kv));
    save_field((ctx.dir / "map.txt").string(), map.map);
    save_field((ctx.dir / "potential.txt").string(), pot.u);
    ctx.check("ot_marginals", plan.marginal_error <= c.tol, fmt_check("marginal error %.3g (tol %.3g)", plan.marginal_error, c.tol));
    if (!pi.has_map) {
        pi.sampled.T = map.map;
        const ScalarField u = pot.u;
        pi.inst = TransportInstance::from_fields(pi.sampled.rho0, pi.sampled.rho1, map.map, &u);
        pi.has_map = true;
    }
}

inline void run_transport(RunContext& ctx) {
    const ExperimentConfig& c = ctx.cfg;
    PreparedInstance pi;
    if (!ctx.stage("prepare", [&] { pi = prepare_instance(ctx); })) return;
    const bool need_ot = ctx.wants(stage_ot) && (ctx.opt.stages != stage_default || !pi.has_map);
    if (need_ot && !ctx.stage("ot", [&] { run_ot(ctx, pi); })) return;
    if (!pi.has_map) return;
    const SampledInstance& s = pi.sampled;
    const Grid& g = s.rho0.grid;
    const bool is_identity = c.kind == "identity";
    const bool is_translation = c.kind == "translation";

    ScaleMeasures m0;
    ctx.stage("measures", [&] {
        m0 = measure(s, c.p);
        ctx.table("measures.csv", key_value_table({{"E", m0.E}, {"p0", m0.p0}, {"p1", m0.p1}, {"mass0", s.rho0.mass()},
                                                   {"mass1", s.rho1.mass()}, {"h", g.spacing()}}));
        ctx.note("E", m0.E);
        if (is_identity) ctx.check("identity_energy", m0.E <= 1e-10, fmt_check("E = %.3g (limit %.3g)", m0.E, 1e-10));
        if (is_translation) {
            const double b2 = c.param * c.param;
            ctx.check("translation_energy", std::abs(m0.E - b2) <= 0.05 * b2, fmt_check("E = %.6g, |b|^2 = %.6g", m0.E, b2));
        }
    });

    const unsigned path_stages = stage_interpolate | stage_harmonic;
    if (!ctx.wants(path_stages) && !ctx.wants(stage_one_step | stage_iterate)) return;

    std::optional<InterpolationPath> path;
    if (ctx.wants(path_stages)) {
        ctx.stage("interpolate", [&] {
            path = interpolate(s.rho0, s.T, uniform_times(c.slices));
            ctx.table("path_manifest.csv", path_manifest(*path));
            if (ctx.opt.save_slices) save_path(*path, (ctx.dir / "path").string());
            const double res = continuity_residual(*path);
            const double flux = flux_domination_defect(*path);
            double mass_dev = 0.0, escaped = 0.0;
            for (const auto& sl : path->slices) {
                mass_dev = std::max(mass_dev, std::abs(sl.rho.mass() + sl.escaped_mass - path->source_mass));
                escaped = std::max(escaped, sl.escaped_mass);
            }
            mass_dev /= std::max(path->source_mass, 1e-300);
            ctx.table("interpolation.csv", key_value_table({{"continuity_residual", res},
                                                            {"flux_domination_defect", flux},
                                                            {"relative_mass_deviation", mass_dev},
                                                            {"max_escaped_mass", escaped},
                                                            {"density_closeness", density_closeness(*path)},
                                                            {"displacement_sup", displacement_sup(s.T, 1.0)}}));
            ctx.note("continuity_residual", res);
            ctx.check("mass_conservation", mass_dev <= 1e-8, fmt_check("relative deviation %.3g (limit %.3g)", mass_dev, 1e-8));
            ctx.check("flux_domination", flux <= 1e-10, fmt_check("defect %.3g (limit %.3g)", flux, 1e-10));
        });
    }

    if (path && ctx.wants(stage_harmonic)) {
        ctx.stage("harmonic", [&] {
            const auto candidates = default_radius_candidates();
            std::vector<double> energies;
            const double R = good_radius(*path, candidates, &energies);
            CsvTable radii({"R", "boundary_energy"});
            for (std::size_t k = 0; k < candidates.size(); ++k) radii.row({CsvTable::num(candidates[k]), CsvTable::num(energies[k])});
            ctx.table("radii.csv", radii);
            const BoundaryFlux flux = BoundaryFlux::from_path(*path, R);
            ctx.table("flux.csv", flux.csv());
            const HarmonicField phi = solve_neumann(R, flux, g.spacing(), 1e-6);
            const HarmonicDefect d = harmonic_defect(s.T, s.rho0, phi);
            const double gamma = std::sqrt(m0.p_sq());
            ctx.table("harmonic.csv", harmonic_report(R, boundary_energy(*path, R), d, m0.E, gamma, g.dim()));
            ctx.check("neumann_compatibility", std::abs(flux.raw_compatibility() - 2.0 * M_PI * R * flux.removed_mean) <= 1e-10 + 1e-8 * std::abs(flux.raw_compatibility()),
                      fmt_check("raw %.3g, removed mean %.3g", flux.raw_compatibility(), flux.removed_mean));
            if (is_identity) ctx.check("identity_harmonic", d.energy <= 1e-20, fmt_check("energy %.3g (limit %.3g)", d.energy, 1e-20));
        });
    }

    const RegularityBudget budget = config_budget(c);
    const StepOptions sopt = config_step(c);
    if (ctx.wants(stage_one_step)) {
        ctx.stage("one_step", [&] {
            const StepResult st = one_step(pi.inst, 1.0, budget, sopt);
            const int n = pi.inst.dim;
            std::vector<std::pair<std::string, double>> kv{{"E_before", st.before.E}, {"p_sq_before", st.before.p_sq()},
                                                           {"E_after", st.after.E},   {"p_sq_after", st.after.p_sq()},
                                                           {"good_radius", st.good_radius}, {"moreover_ratio", st.moreover_ratio}};
            for (int a = 0; a < n; ++a) kv.emplace_back("b_" + std::to_string(a + 1), st.frame.b[a]);
            for (int a = 0; a < n; ++a)
                for (int bb = 0; bb < n; ++bb) kv.emplace_back("B_" + std::to_string(a + 1) + std::to_string(bb + 1), st.frame.B(a, bb));
            const double det = st.frame.B.determinant();
            kv.emplace_back("det_B", det);
            ctx.table("step.csv", key_value_table(kv));
            ctx.note("E_after", st.after.E);
            ctx.check("frame_unimodular", std::abs(det - 1.0) <= 1e-12, fmt_check("det B - 1 = %.3g (limit %.3g)", det - 1.0, 1e-12));
            if (is_identity) {
                const double dev = st.frame.deviation() + st.frame.b.norm();
                ctx.check("identity_frame", dev <= 1e-8, fmt_check("|B - I| + |b| = %.3g (limit %.3g)", dev, 1e-8));
            }
            if (is_translation) {
                const double berr = std::hypot(st.frame.b[0] - c.param, n > 1 ? st.frame.b[1] : 0.0);
                ctx.check("translation_shift", berr <= 3.0 * g.spacing(), fmt_check("|b - b_true| = %.3g (limit %.3g)", berr, 3.0 * g.spacing()));
                const double ratio = st.before.E > 0.0 ? st.after.E / st.before.E : 0.0;
                const double lim = std::pow(budget.theta, 2.0 * budget.alpha_prime) + 0.02;
                ctx.check("translation_improvement", ratio <= lim, fmt_check("E_new/E = %.3g (limit %.3g)", ratio, lim));
            }
        });
    }

    if (ctx.wants(stage_iterate)) {
        ctx.stage("iterate", [&] {
            IterateOptions io;
            io.step = sopt;
            io.k_max = c.k_max;
            const IterationTrace tr = iterate(pi.inst, budget, io);
            ctx.table("trace.csv", tr.csv());
            ctx.text("budget.txt", budget.to_text() + "stop_reason=" + tr.reason + "\n");
            if (is_identity) {
                double worst = 0.0;
                for (const auto& r : tr.rows) worst = std::max({worst, r.E, r.p_sq, r.B_dev, r.b_norm});
                ctx.check("identity_trace", worst <= 1e-10, fmt_check("max entry %.3g (limit %.3g)", worst, 1e-10));
            }
            if (tr.frames.size() >= 2 && pi.inst.potential) {
                const QuadraticExtraction q = extract_quadratic(tr, pi.inst.potential);
                ctx.table("quadratic.csv", q.csv());
                std::vector<std::pair<std::string, double>> kv{{"q0", q.Q.q0}};
                for (int a = 0; a < q.Q.c.size(); ++a) kv.emplace_back("c_" + std::to_string(a + 1), q.Q.c[a]);
                for (int a = 0; a < q.Q.P.rows(); ++a)
                    for (int bb = 0; bb < q.Q.P.cols(); ++bb) kv.emplace_back("P_" + std::to_string(a + 1) + std::to_string(bb + 1), q.Q.P(a, bb));
                kv.emplace_back("within_budget", q.within_budget ? 1.0 : 0.0);
                ctx.table("polynomial.csv", key_value_table(kv));
            }
        });
    }
}

inline void run_counterexample(RunContext& ctx) {
    const ExperimentConfig& c = ctx.cfg;
    CounterexampleSpec spec;
    if (!ctx.stage("counterexample", [&] {
            spec = CounterexampleSpec::make(c.cx_alpha, c.cx_p);
            const CounterexampleTable tab = counterexample_decay_check(spec, dyadic_radii(c.r_lo, c.r_hi));
            ctx.table("decay.csv", tab.csv());
            double worst = 0.0;
            for (const auto& r : tab.rows)
                if (r.region_oracle > 0.0) worst = std::max(worst, std::abs(r.region / r.region_oracle - 1.0));
            ctx.table("decay_fit.csv", key_value_table({{"slope", tab.slope}, {"alpha", spec.alpha}, {"gamma", spec.gamma},
                                                        {"a", spec.a}, {"b", spec.b}, {"clamp", spec.clamp()}}));
            ctx.note("slope", tab.slope);
            ctx.check("decay_slope", tab.slope >= spec.alpha - 0.05, fmt_check("slope %.4f (limit %.4f)", tab.slope, spec.alpha - 0.05));
            ctx.check("region_oracle", worst <= 0.01, fmt_check("max relative gap %.3g (limit %.3g)", worst, 0.01));
        }))
        return;
    ctx.stage("contours", [&] {
        const Grid g(2, c.nodes, 0.5);
        const ScalarField f = counterexample_density(spec, g);
        std::vector<double> levels;
        for (double t : {0.05, 0.2, 0.5, 0.8}) levels.push_back(spec.a + t * (spec.clamp() - spec.a));
        const auto lines = level_sets(f, levels);
        ctx.table("contours.csv", polylines_csv(lines));
        std::map<double, int> per_level;
        double y_sum = 0.0, y_abs = 0.0;
        for (const auto& pl : lines) {
            ++per_level[pl.level];
            for (const auto& q : pl.points) y_sum += q[1], y_abs += std::abs(q[1]);
        }
        bool paired = per_level.size() == levels.size();
        for (const auto& [lv, count] : per_level) paired = paired && count % 2 == 0;
        ctx.check("contours_symmetric", paired && std::abs(y_sum) <= 1e-9 * std::max(y_abs, 1.0),
                  fmt_check("%.0f curves, sum of y = %.3g", static_cast<double>(lines.size()), y_sum));
    });
}

inline void run_sharpness(RunContext& ctx) {
    const ExperimentConfig& c = ctx.cfg;
    SharpnessSpec spec;
    spec.alpha = c.cx_alpha;
    spec.n = 2;
    spec.depth = c.depth;
    if (ctx.wants(stage_sharpness)) {
        ctx.stage("sharpness", [&] {
            const SharpnessReport rep = sharpness_check(spec, c.n_lo, c.n_hi);
            ctx.table("exponents.csv", rep.csv());
            const double linf = 2.0 + 4.0 * spec.alpha / (4.0 + spec.n);
            const double l2 = 2.0 * (2.0 + spec.alpha);
            ctx.table("exponents_fit.csv", key_value_table({{"linf_exponent", rep.linf_exponent}, {"linf_expected", linf},
                                                            {"l2_exponent", rep.l2_exponent}, {"l2_expected", l2}}));
            ctx.note("linf_exponent", rep.linf_exponent);
            ctx.note("l2_exponent", rep.l2_exponent);
            ctx.check("linf_exponent", std::abs(rep.linf_exponent - linf) <= 0.05, fmt_check("fit %.4f (expected %.4f)", rep.linf_exponent, linf));
            ctx.check("l2_exponent", std::abs(rep.l2_exponent - l2) <= 0.1, fmt_check("fit %.4f (expected %.4f)", rep.l2_exponent, l2));
        });
    }
    if (ctx.wants(stage_convex_lemma)) {
        ctx.stage("convex_lemma", [&] {
            CsvTable t({"N", "delta", "sup_norm", "ratio"});
            double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
            for (int N = c.n_lo; N <= c.lemma_hi; ++N) {
                const ConvexLemmaRow r = convex_lemma_exact(spec, N);
                t.row({CsvTable::num(r.N), CsvTable::num(r.delta), CsvTable::num(r.sup_norm), CsvTable::num(r.ratio)});
                lo = std::min(lo, r.ratio);
                hi = std::max(hi, r.ratio);
            }
            ctx.table("convex_lemma.csv", t);
            ctx.check("convex_lemma_band", lo > 0.0 && hi / lo <= 8.0, fmt_check("ratio range [%.4g, %.4g]", lo, hi));
        });
    }
}

inline void run_single(const ExperimentConfig& cfg, const RunOptions& opt, ReportBundle& b) {
    std::filesystem::create_directories(b.dir);
    RunContext ctx(cfg, opt, b);
    if (cfg.kind == "counterexample") {
        if (ctx.wants(stage_counterexample)) run_counterexample(ctx);
    } else if (cfg.kind == "sharpness") {
        run_sharpness(ctx);
    } else {
        run_transport(ctx);
    }
    ctx.stage("figures", [&] { render_figures(b.dir); });
}

} // namespace detail

/// Executes the sub-pipeline named by the instance kind and writes the report directory.
/// Module errors are recorded in the manifest; outputs written before the error are kept.
/// With a grid sweep, each node count runs in its own subdirectory grid_<N>.
inline ReportBundle run(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
    cfg.validate();
    ReportBundle b;
    b.dir = cfg.out;
    b.config = cfg.echo();
    std::filesystem::create_directories(b.dir);
    if (cfg.sweep.empty()) {
        detail::run_single(cfg, opt, b);
    } else {
        std::vector<ReportBundle> parts(cfg.sweep.size());
        auto job = [&](std::size_t k) {
            ExperimentConfig sub = cfg;
            sub.nodes = cfg.sweep[k];
            sub.sweep.clear();
            parts[k].dir = (std::filesystem::path(cfg.out) / ("grid_" + std::to_string(sub.nodes))).string();
            detail::run_single(sub, opt, parts[k]);
        };
        const std::size_t width = static_cast<std::size_t>(std::max(1, opt.jobs));
        for (std::size_t start = 0; start < parts.size(); start += width) {
            std::vector<std::future<void>> running;
            for (std::size_t k = start; k < std::min(parts.size(), start + width); ++k)
                running.push_back(std::async(std::launch::async, job, k));
            for (auto& f : running) f.get();
        }
        CsvTable sweep({"nodes", "name", "value"});
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const std::string tag = "grid_" + std::to_string(cfg.sweep[k]);
            for (auto& c : parts[k].checks) b.checks.push_back({tag + "." + c.name, c.pass, c.detail});
            for (auto& e : parts[k].errors) b.errors.push_back(tag + "." + e);
            for (auto& t : parts[k].timings) b.timings.emplace_back(tag + "." + t.first, t.second);
            for (auto& s : parts[k].summary) sweep.row({CsvTable::num(cfg.sweep[k]), s.first, CsvTable::num(s.second)});
        }
        sweep.save((std::filesystem::path(b.dir) / "sweep.csv").string());
    }
    write_manifest(b);
    return b;
}

/// Re-renders every figure of an existing report directory from its CSV tables.
inline std::vector<std::string> rerender(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir);
    std::vector<std::string> out = render_figures(dir);
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory()) {
            for (auto& f : render_figures(e.path().string())) out.push_back(e.path().filename().string() + "/" + f);
        }
    return out;
}

} // namespace otreg
