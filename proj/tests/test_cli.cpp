#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "bspde/commands.hpp"
#include "bspde/config.hpp"
#include "bspde/error.hpp"

using namespace bspde;
namespace fs = std::filesystem;

namespace {

const std::string minimal = R"(
[run]
seed = 5
[dims]
p = 1
q = 1
d = 1
[operator]
kind = linear
c = 0.5
[terminal]
kind = expression
values = 1 + x1^2
)";

std::string config(const std::string& name) { return std::string(BSPDE_CONFIG_DIR) + "/" + name + ".ini"; }

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "bspde_cli_tests" / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& command, const std::string& cfg, const fs::path& out, int threads = 1,
        std::ostream* err = nullptr) {
    CommandOptions o;
    o.out_dir = out.string();
    o.threads = threads;
    o.err = err;
    return run_command(command, config(cfg), o);
}

std::string config_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, DefaultsFilled) {
    auto c = parse_config(minimal);
    EXPECT_EQ(c.k_max, 15);
    EXPECT_EQ(c.ridge, 1e-8);
    EXPECT_EQ(*c.seed, 5u);
    EXPECT_EQ(c.gamma, 0.0);  // resolved by the default rule at solve time
    auto grid = make_grid(make_domain(c));
    auto op = make_operator(c, grid);
    auto pc = make_picard(c, 1);
    EXPECT_DOUBLE_EQ(pc.resolved_gamma(op.lipschitz, c.horizon), default_gamma(0.5, 1.0));
}

TEST(Config, ResolutionInvariant) {
    auto msg = config_error(minimal + "[domain]\nresolution = 2\n");
    EXPECT_NE(msg.find("resolution ≥ 3"), std::string::npos) << msg;
}

TEST(Config, RoundTrip) {
    for (const char* name : {"zero", "linear", "jumps", "annulus", "merton", "factor"}) {
        auto a = load_config(config(name));
        auto b = parse_config(serialize_config(a));
        EXPECT_TRUE(a == b) << name;
    }
}

TEST(Config, UnknownKeyAndMissingSeedAllReported) {
    std::string text = minimal;
    text.replace(text.find("seed = 5"), 8, "");
    text += "[picard]\ntolerance = 1\n";
    auto msg = config_error(text);
    EXPECT_NE(msg.find("unknown key 'tolerance' in section [picard]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("seed is mandatory"), std::string::npos) << msg;
}

TEST(Config, BadExpressionIsRejected) {
    auto msg = config_error(minimal + "[operator]\n");
    EXPECT_FALSE(msg.empty());
    std::string text = minimal;
    text.replace(text.find("1 + x1^2"), 8, "1 + y^2");
    EXPECT_FALSE(config_error(text).empty());
}

TEST(Cli, ZeroDataConverges) {
    auto out = scratch("zero");
    ASSERT_EQ(run("solve", "zero", out), exit_ok);
    std::istringstream diag(slurp(out / "diagnostics.jsonl"));
    std::string first;
    std::getline(diag, first);
    EXPECT_NE(first.find("\"iteration\":1,\"delta\":0.0"), std::string::npos) << first;
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    EXPECT_NE(slurp(out / "manifest.json").find("solution_mean.csv"), std::string::npos);
}

TEST(Cli, LinearSurfaceMatchesExponential) {
    auto out = scratch("linear");
    ASSERT_EQ(run("solve", "linear", out), exit_ok);
    std::istringstream csv(slurp(out / "solution_mean.csv"));
    std::string line;
    std::getline(csv, line);
    ASSERT_EQ(line.substr(0, 11), "step,t,x1,v");
    const double dt = 1.0 / 64;
    double worst = 0.0;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::string cell;
        double v[4];
        for (double& x : v) {
            std::getline(row, cell, ',');
            x = std::stod(cell);
        }
        const double exact = (1.0 + v[2] * v[2]) * std::exp(0.5 * (1.0 - v[1]));
        worst = std::max(worst, std::abs(v[3] - exact) / exact);
        ++rows;
    }
    EXPECT_EQ(rows, 65u * 33u);
    EXPECT_LE(worst, 2.0 * dt);
}

TEST(Cli, SameSeedSameBytesAcrossThreads) {
    auto a = scratch("rep_a"), b = scratch("rep_b");
    ASSERT_EQ(run("solve", "jumps", a, 1), exit_ok);
    ASSERT_EQ(run("solve", "jumps", b, 3), exit_ok);
    // config.ini records the output directory, so it differs by design
    for (const char* f : {"solution_mean.csv", "diagnostics.jsonl"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, FinanceExitCodes) {
    EXPECT_EQ(run("finance-validate", "merton_zero", scratch("mz")), exit_ok);
    auto coarse = scratch("mc");
    EXPECT_EQ(run("finance-validate", "merton_coarse", coarse), exit_not_converged);
    EXPECT_TRUE(fs::exists(coarse / "finance_report.json"));
}

TEST(Cli, ErrorsMapToOne) {
    std::ostringstream err;
    EXPECT_EQ(run("no-such-command", "zero", scratch("bad"), 1, &err), exit_error);
    CommandOptions o;
    o.err = &err;
    EXPECT_EQ(run_command("solve", "/nonexistent/cfg.ini", o), exit_error);
    // a config with no seed fails validation before anything runs
    auto path = fs::temp_directory_path() / "bspde_cli_tests" / "noseed.ini";
    fs::create_directories(path.parent_path());
    std::ofstream(path) << "[operator]\nkind = zero\n";
    err.str("");
    EXPECT_EQ(run_command("solve", path.string(), o), exit_error);
    EXPECT_NE(err.str().find("seed"), std::string::npos) << err.str();
}

TEST(Cli, SeedOverrideChangesPaths) {
    auto a = scratch("seed_a"), b = scratch("seed_b");
    CommandOptions o;
    o.out_dir = a.string();
    ASSERT_EQ(run_command("simulate-drivers", config("jumps"), o), exit_ok);
    o.out_dir = b.string();
    o.seed = 999;
    ASSERT_EQ(run_command("simulate-drivers", config("jumps"), o), exit_ok);
    EXPECT_NE(slurp(a / "drivers.csv"), slurp(b / "drivers.csv"));
}
