#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "otreg/runner.hpp"

using namespace otreg;
namespace fs = std::filesystem;

namespace {

const std::string fixtures = OTREG_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("otreg_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(OTREG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> manifest_map(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (auto& [k, v] : read_manifest((dir / manifest_name).string())) m[k] = v;
    return m;
}

ExperimentConfig small_identity(const fs::path& out) {
    ExperimentConfig c;
    c.kind = "identity";
    c.nodes = 65;
    c.k_max = 1;
    c.out = out.string();
    return c;
}

} // namespace

TEST(Config, ParsesSectionsAndResolvesRelativePaths) {
    std::istringstream is("[instance]\nkind = custom-file\nrho0 = custom_rho0.txt\nrho1 = custom_rho1.txt\n"
                          "[grid]\nnodes = 65\nsweep = 33, 65\n[budget]\ntheta = 0.05\n");
    const auto c = ExperimentConfig::parse(is, fixtures);
    EXPECT_EQ(c.kind, "custom-file");
    EXPECT_EQ(c.nodes, 65);
    EXPECT_EQ(c.sweep, (std::vector<int>{33, 65}));
    EXPECT_DOUBLE_EQ(c.theta, 0.05);
    EXPECT_EQ(fs::path(c.rho0_file), fs::path(fixtures) / "custom_rho0.txt");
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    std::istringstream unknown("[grid]\nnodez = 65\n");
    EXPECT_THROW(ExperimentConfig::parse(unknown), InputError);
    std::istringstream section("[solvers]\nreg = 1\n");
    EXPECT_THROW(ExperimentConfig::parse(section), InputError);
    std::istringstream even("[grid]\nnodes = 64\n");
    EXPECT_THROW(ExperimentConfig::parse(even).validate(), InputError);
    std::istringstream kind("[instance]\nkind = spiral\n");
    EXPECT_THROW(ExperimentConfig::parse(kind).validate(), InputError);
    EXPECT_THROW(ExperimentConfig::load(fixtures + "/missing.cfg"), InputError);
    ExperimentConfig c;
    c.kind = "custom-file";
    c.rho0_file = fixtures + "/nope.txt";
    EXPECT_THROW(c.validate(), InputError);
}

TEST(Runner, IdentityRunPassesWithZeroMeasures) {
    const fs::path out = scratch("identity");
    const ReportBundle b = run(small_identity(out));
    EXPECT_TRUE(b.passed());
    EXPECT_EQ(b.exit_code(), 0);
    EXPECT_TRUE(b.errors.empty());
    std::ifstream is(out / "trace.csv");
    const auto rows = read_csv(is);
    ASSERT_GE(rows.size(), 2u);
    for (std::size_t r = 1; r < rows.size(); ++r)
        for (std::size_t c = 1; c <= 4; ++c) EXPECT_EQ(std::stod(rows[r][c]), 0.0) << rows[0][c];
    fs::remove_all(out);
}

TEST(Runner, OutputsAreDeterministic) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    ExperimentConfig ca = small_identity(a), cb = small_identity(b);
    ca.kind = cb.kind = "translation";
    run(ca);
    run(cb);
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == manifest_name) continue;
        const fs::path rel = fs::relative(e.path(), a);
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 5u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Runner, ManifestListsEveryFileWithItsDigest) {
    const fs::path out = scratch("manifest");
    run(small_identity(out));
    const auto m = manifest_map(out);
    EXPECT_EQ(m.at("manifest.format"), "1");
    EXPECT_EQ(m.at("status"), "pass");
    EXPECT_EQ(m.at("config.instance.kind"), "identity");
    EXPECT_EQ(m.at("version.otreg"), version);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (!e.is_regular_file() || e.path().filename() == manifest_name) continue;
        const std::string rel = fs::relative(e.path(), out).generic_string();
        ASSERT_TRUE(m.count("file." + rel)) << rel;
        EXPECT_EQ(m.at("file." + rel), "sha256:" + sha256_file(e.path().string()));
        ++files;
    }
    EXPECT_GT(files, 0u);
    EXPECT_EQ(sha256_file(fixtures + "/identity.cfg").size(), 64u);
    fs::remove_all(out);
}

TEST(Runner, GateFailureIsRecordedNotThrown) {
    const fs::path out = scratch("dilation");
    ExperimentConfig c = small_identity(out);
    c.kind = "dilation";
    c.param = 0.2;
    const ReportBundle b = run(c);
    EXPECT_FALSE(b.passed());
    ASSERT_FALSE(b.errors.empty());
    EXPECT_NE(b.errors.front().find("smallness gate"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / manifest_name));
    EXPECT_EQ(manifest_map(out).at("status"), "fail");
    fs::remove_all(out);
}

TEST(Runner, SweepRunsConcurrentlyIntoSubdirectories) {
    const fs::path out = scratch("sweep");
    ExperimentConfig c = small_identity(out);
    c.sweep = {33, 65};
    RunOptions opt;
    opt.stages = stage_interpolate;
    opt.jobs = 2;
    const ReportBundle b = run(c, opt);
    EXPECT_TRUE(b.passed());
    EXPECT_TRUE(fs::exists(out / "grid_33" / "interpolation.csv"));
    EXPECT_TRUE(fs::exists(out / "grid_65" / "interpolation.csv"));
    EXPECT_TRUE(fs::exists(out / "sweep.csv"));
    for (const auto& ch : b.checks) EXPECT_EQ(ch.name.rfind("grid_", 0), 0u) << ch.name;
    fs::remove_all(out);
}

TEST(Cli, ExitCodes) {
    const fs::path out = scratch("exit");
    const fs::path log = fs::temp_directory_path() / "otreg_cli_test.log";
    EXPECT_EQ(cli("interpolate --instance identity --grid 33 --out " + out.string(), log), 0) << slurp(log);
    EXPECT_NE(slurp(log).find("status: pass"), std::string::npos);
    EXPECT_EQ(cli("one-step --instance dilation --param 0.2 --grid 33 --out " + out.string(), log), 1) << slurp(log);
    EXPECT_EQ(cli("interpolate --grid 64 --out " + out.string(), log), 2);
    EXPECT_EQ(cli("interpolate --bogus", log), 2);
    EXPECT_EQ(cli("", log), 2);
    EXPECT_EQ(cli("convex-lemma --out " + out.string(), log), 2);
    EXPECT_EQ(cli("run --config " + fixtures + "/does_not_exist.cfg", log), 2);
    EXPECT_EQ(cli("--help", log), 0);
    fs::remove_all(out);
}

TEST(Cli, ConvexLemmaFromSharpnessAndReportRerender) {
    const fs::path out = scratch("lemma");
    const fs::path log = fs::temp_directory_path() / "otreg_cli_test_lemma.log";
    ASSERT_EQ(cli("convex-lemma --from-sharpness --out " + out.string(), log), 0) << slurp(log);
    ASSERT_TRUE(fs::exists(out / "convex_lemma.csv"));
    ASSERT_TRUE(fs::exists(out / "convex_lemma.svg"));
    const auto before = manifest_map(out);
    fs::remove(out / "convex_lemma.svg");
    ASSERT_EQ(cli("report --in " + out.string(), log), 0) << slurp(log);
    EXPECT_EQ(before.at("file.convex_lemma.svg"), "sha256:" + sha256_file((out / "convex_lemma.svg").string()));
    EXPECT_EQ(cli("report --in " + (out / "nothing").string(), log), 1);
    fs::remove_all(out);
}
