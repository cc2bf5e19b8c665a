#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "otreg/runner.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::optional<int> grid;
    std::optional<unsigned long> seed;
    std::optional<std::string> out;
    int jobs = 1;
    std::optional<std::string> instance;
    std::optional<double> param;
    std::optional<std::string> budget_from;
    std::optional<double> alpha;
    bool from_sharpness = false;
    std::string in;
};

struct Command {
    const char* name;
    const char* help;
    unsigned stages;
    const char* forced_kind;   ///< nullptr: taken from config or --instance
};

const Command commands[] = {
    {"ot-solve", "entropic transport plan, barycentric map and Brenier potential", otreg::stage_ot, nullptr},
    {"interpolate", "McCann interpolation path and continuity diagnostics", otreg::stage_interpolate, nullptr},
    {"harmonic", "good radius, Neumann problem and harmonic defect", otreg::stage_harmonic, nullptr},
    {"one-step", "one affine improvement step", otreg::stage_one_step, nullptr},
    {"iterate", "iterated improvement trace and quadratic extraction", otreg::stage_iterate, nullptr},
    {"counterexample", "decay table and level sets of the counterexample density", otreg::stage_counterexample,
     "counterexample"},
    {"sharpness", "exponent table of the sharpness family", otreg::stage_sharpness, "sharpness"},
    {"convex-lemma", "convex L2-to-Linf ratio table", otreg::stage_convex_lemma, nullptr},
    {"run", "full pipeline for the configured instance kind", otreg::stage_default, nullptr},
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--grid", f.grid, "grid nodes per axis (odd)");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--jobs", f.jobs, "concurrent sweep entries")->check(CLI::PositiveNumber);
}

otreg::ExperimentConfig build_config(const Command& cmd, const CommonFlags& f) {
    otreg::ExperimentConfig c = f.config.empty() ? otreg::ExperimentConfig{} : otreg::ExperimentConfig::load(f.config);
    if (cmd.forced_kind) c.kind = cmd.forced_kind;
    if (std::string(cmd.name) == "convex-lemma") {
        if (f.from_sharpness) c.kind = "sharpness";
        if (c.kind != "sharpness") throw otreg::UsageError("convex-lemma needs --from-sharpness or a sharpness config");
    }
    if (f.instance) c.kind = *f.instance;
    if (f.param) c.param = *f.param;
    if (f.grid) c.nodes = *f.grid;
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.out = *f.out;
    if (f.alpha) c.cx_alpha = *f.alpha;
    if (f.budget_from) {
        const otreg::RegularityBudget b = otreg::budget_from_string(*f.budget_from);
        c.eps = b.eps;
        c.theta = b.theta;
        c.alpha = b.alpha;
        c.alpha_prime = b.alpha_prime;
        c.C0 = b.C0;
    }
    c.validate();
    return c;
}

int execute(const Command& cmd, const CommonFlags& f) {
    otreg::ExperimentConfig cfg;
    try {
        cfg = build_config(cmd, f);
    } catch (const otreg::Error& e) {
        std::cerr << "otreg " << cmd.name << ": " << e.what() << "\n";
        return 2;
    }
    otreg::RunOptions opt;
    opt.stages = cmd.stages;
    opt.save_slices = cmd.stages == otreg::stage_interpolate;
    opt.jobs = f.jobs;
    otreg::ReportBundle b;
    try {
        b = otreg::run(cfg, opt);
    } catch (const otreg::Error& e) {
        std::cerr << "otreg " << cmd.name << ": " << e.what() << "\n";
        return 1;
    }
    for (const auto& c : b.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "\n";
    for (const auto& e : b.errors) std::cout << "ERROR " << e << "\n";
    std::cout << "status: " << (b.passed() ? "pass" : "fail") << ", " << b.files.size() << " files in " << b.dir << "\n";
    return b.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"otreg: optimal transport regularity experiments"};
    app.require_subcommand(1);
    CommonFlags flags;
    std::map<CLI::App*, const Command*> by_app;
    for (const Command& cmd : commands) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        add_common(sub, flags);
        if (!cmd.forced_kind) {
            sub->add_option("--instance", flags.instance, "instance kind")
                ->check(CLI::IsMember(otreg::ExperimentConfig::kinds()));
            sub->add_option("--param", flags.param, "instance parameter (translation length, dilation excess, linear-map s)");
        }
        if (cmd.stages & (otreg::stage_one_step | otreg::stage_iterate | otreg::stage_harmonic))
            sub->add_option("--budget-from", flags.budget_from, "eps,theta,alpha,alpha_prime,C0");
        if (cmd.stages & (otreg::stage_counterexample | otreg::stage_sharpness | otreg::stage_convex_lemma) &&
            cmd.stages != otreg::stage_default)
            sub->add_option("--alpha", flags.alpha, "construction exponent alpha");
        if (cmd.stages == otreg::stage_convex_lemma)
            sub->add_flag("--from-sharpness", flags.from_sharpness, "use the sharpness family");
        by_app[sub] = &cmd;
    }
    CLI::App* report = app.add_subcommand("report", "re-render SVG figures from the CSV tables of a report directory");
    report->add_option("--in", flags.in, "report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    if (report->parsed()) {
        try {
            for (const auto& f : otreg::rerender(flags.in)) std::cout << "wrote " << f << "\n";
        } catch (const otreg::Error& e) {
            std::cerr << "otreg report: " << e.what() << "\n";
            return 1;
        }
        return 0;
    }
    for (const auto& [sub, cmd] : by_app)
        if (sub->parsed()) return execute(*cmd, flags);
    return 2;
}
