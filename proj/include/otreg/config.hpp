#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "otreg/errors.hpp"
#include "otreg/field_io.hpp"

namespace otreg {

/// Experiment description read from a sectioned key-value file:
///
///     [instance]  kind, param, rho0, rho1, map
///     [grid]      nodes, halfwidth, slices, sweep (comma-separated node counts)
///     [solver]    reg, tol, max_iter, p
///     [budget]    eps, theta, alpha, alpha_prime, C0, k_max
///     [construction] alpha, p, r_lo, r_hi, n_lo, n_hi, depth, lemma_hi
///     [run]       out, seed
///
/// Relative file names are resolved against the directory of the config file.
struct ExperimentConfig {
    std::string kind = "identity";
    double param = 0.05;
    std::string rho0_file, rho1_file, map_file;

    int nodes = 129;
    double halfwidth = 1.25;
    int slices = 17;
    std::vector<int> sweep;

    double reg = 1e-3;
    double tol = 1e-8;
    std::size_t max_iter = 200000;
    double p = 4.0;

    double eps = 0.1;
    double theta = 0.1;
    double alpha = 0.5;
    double alpha_prime = 0.75;
    double C0 = 1.0;
    int k_max = 3;

    double cx_alpha = 0.5;
    double cx_p = 2.0;
    int r_lo = 2, r_hi = 9;
    int n_lo = 2, n_hi = 10, depth = 11;
    int lemma_hi = 8;

    std::string out = "otreg_out";
    unsigned long seed = 12345;

    static const std::vector<std::string>& kinds() {
        static const std::vector<std::string> k{"identity",       "translation",    "dilation",  "linear-map",
                                                "smooth-bump",    "counterexample", "sharpness", "custom-file"};
        return k;
    }

    bool transport_kind() const { return kind != "counterexample" && kind != "sharpness"; }

    /// Throws InputError on unknown kinds, out-of-range values or missing files.
    void validate() const {
        if (std::find(kinds().begin(), kinds().end(), kind) == kinds().end()) throw InputError("unknown instance kind: " + kind);
        if (nodes < 3 || nodes % 2 == 0) throw InputError("grid.nodes must be odd and at least 3");
        for (int s : sweep)
            if (s < 3 || s % 2 == 0) throw InputError("grid.sweep entries must be odd and at least 3");
        if (!(halfwidth > 0.0)) throw InputError("grid.halfwidth must be positive");
        if (slices < 2) throw InputError("grid.slices must be at least 2");
        if (!(reg > 0.0) || !(tol > 0.0) || max_iter == 0) throw InputError("solver parameters must be positive");
        if (!(p >= 1.0)) throw InputError("solver.p must be at least 1");
        if (k_max < 0) throw InputError("budget.k_max must be nonnegative");
        if (r_hi < r_lo || n_hi < n_lo || depth < 0 || lemma_hi < n_lo) throw InputError("construction ranges are empty");
        if (kind == "custom-file") {
            if (rho0_file.empty() || rho1_file.empty()) throw InputError("custom-file needs instance.rho0 and instance.rho1");
        }
        for (const auto* f : {&rho0_file, &rho1_file, &map_file})
            if (!f->empty() && !std::filesystem::exists(*f)) throw InputError("referenced file does not exist: " + *f);
    }

    /// Parses the sectioned format; unknown sections or keys are rejected.
    static ExperimentConfig parse(std::istream& is, const std::string& base_dir = "") {
        namespace pt = boost::property_tree;
        pt::ptree tree;
        try {
            pt::read_ini(is, tree);
        } catch (const pt::ini_parser_error& e) {
            throw InputError(std::string("config: ") + e.what());
        }
        static const std::map<std::string, std::set<std::string>> allowed{
            {"instance", {"kind", "param", "rho0", "rho1", "map"}},
            {"grid", {"nodes", "halfwidth", "slices", "sweep"}},
            {"solver", {"reg", "tol", "max_iter", "p"}},
            {"budget", {"eps", "theta", "alpha", "alpha_prime", "C0", "k_max"}},
            {"construction", {"alpha", "p", "r_lo", "r_hi", "n_lo", "n_hi", "depth", "lemma_hi"}},
            {"run", {"out", "seed"}},
        };
        for (const auto& [section, body] : tree) {
            auto it = allowed.find(section);
            if (it == allowed.end()) throw InputError("config: unknown section [" + section + "]");
            for (const auto& kv : body)
                if (!it->second.count(kv.first)) throw InputError("config: unknown key " + section + "." + kv.first);
        }
        ExperimentConfig c;
        auto get = [&](const char* key, auto& field) {
            using T = std::decay_t<decltype(field)>;
            try {
                if (auto v = tree.get_optional<T>(key)) field = *v;
            } catch (const pt::ptree_bad_data&) {
                throw InputError(std::string("config: bad value for ") + key);
            }
        };
        auto path = [&](const char* key, std::string& field) {
            get(key, field);
            if (!field.empty() && !base_dir.empty() && std::filesystem::path(field).is_relative())
                field = (std::filesystem::path(base_dir) / field).lexically_normal().string();
        };
        get("instance.kind", c.kind);
        get("instance.param", c.param);
        path("instance.rho0", c.rho0_file);
        path("instance.rho1", c.rho1_file);
        path("instance.map", c.map_file);
        get("grid.nodes", c.nodes);
        get("grid.halfwidth", c.halfwidth);
        get("grid.slices", c.slices);
        if (auto s = tree.get_optional<std::string>("grid.sweep")) c.sweep = parse_int_list(*s);
        get("solver.reg", c.reg);
        get("solver.tol", c.tol);
        get("solver.max_iter", c.max_iter);
        get("solver.p", c.p);
        get("budget.eps", c.eps);
        get("budget.theta", c.theta);
        get("budget.alpha", c.alpha);
        get("budget.alpha_prime", c.alpha_prime);
        get("budget.C0", c.C0);
        get("budget.k_max", c.k_max);
        get("construction.alpha", c.cx_alpha);
        get("construction.p", c.cx_p);
        get("construction.r_lo", c.r_lo);
        get("construction.r_hi", c.r_hi);
        get("construction.n_lo", c.n_lo);
        get("construction.n_hi", c.n_hi);
        get("construction.depth", c.depth);
        get("construction.lemma_hi", c.lemma_hi);
        get("run.out", c.out);
        get("run.seed", c.seed);
        return c;
    }

    static ExperimentConfig load(const std::string& file) {
        std::ifstream is(file);
        if (!is) throw InputError("cannot open config " + file);
        return parse(is, std::filesystem::path(file).parent_path().string());
    }

    static std::vector<int> parse_int_list(const std::string& s) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
            if (item.empty()) continue;
            try {
                std::size_t used = 0;
                out.push_back(std::stoi(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw InputError("config: bad integer list entry '" + item + "'");
            }
        }
        return out;
    }

    /// Canonical key=value echo, one line per field, in a fixed order.
    std::vector<std::pair<std::string, std::string>> echo() const {
        auto d = [](double v) { return detail::fmt_double(v); };
        std::string sw;
        for (std::size_t i = 0; i < sweep.size(); ++i) sw += (i ? "," : "") + std::to_string(sweep[i]);
        return {
            {"instance.kind", kind},          {"instance.param", d(param)},
            {"instance.rho0", rho0_file},     {"instance.rho1", rho1_file},
            {"instance.map", map_file},       {"grid.nodes", std::to_string(nodes)},
            {"grid.halfwidth", d(halfwidth)}, {"grid.slices", std::to_string(slices)},
            {"grid.sweep", sw},               {"solver.reg", d(reg)},
            {"solver.tol", d(tol)},           {"solver.max_iter", std::to_string(max_iter)},
            {"solver.p", d(p)},               {"budget.eps", d(eps)},
            {"budget.theta", d(theta)},       {"budget.alpha", d(alpha)},
            {"budget.alpha_prime", d(alpha_prime)}, {"budget.C0", d(C0)},
            {"budget.k_max", std::to_string(k_max)}, {"construction.alpha", d(cx_alpha)},
            {"construction.p", d(cx_p)},      {"construction.r_lo", std::to_string(r_lo)},
            {"construction.r_hi", std::to_string(r_hi)}, {"construction.n_lo", std::to_string(n_lo)},
            {"construction.n_hi", std::to_string(n_hi)}, {"construction.depth", std::to_string(depth)},
            {"construction.lemma_hi", std::to_string(lemma_hi)}, {"run.out", out},
            {"run.seed", std::to_string(seed)},
        };
    }
};

} // namespace otreg
