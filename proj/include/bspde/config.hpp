#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bspde/domains.hpp"
#include "bspde/drivers.hpp"
#include "bspde/fields.hpp"
#include "bspde/finance.hpp"
#include "bspde/operators.hpp"
#include "bspde/picard.hpp"

namespace bspde {

/// One jump channel as written in a [levyN] section.
struct LevyChannelConfig {
    std::string kind = "atoms";  // atoms | gamma | stable | exponential
    std::vector<double> sizes;   // atoms
    std::vector<double> masses;  // atoms
    double a = 1.0;
    double b = 1.0;
    double z_cap = 1.0;
    double epsilon = 0.0;
    double intensity = 1.0;
    int cells = 8;

    bool operator==(const LevyChannelConfig&) const = default;
};

/// Plain data mirror of a config file. Expressions are kept as text and
/// compiled when the run objects are built; parse_config checks that they
/// compile.
struct RunConfig {
    // [run]
    std::optional<std::uint64_t> seed;
    std::size_t paths = 1000;
    std::string name = "run";

    // [dims]
    ModelDims dims;

    // [domain]
    std::string domain_kind = "box";  // box | annulus
    std::vector<double> lower{0.0};
    std::vector<double> upper{1.0};
    int resolution = 33;
    double inner = 1.0;
    double outer = 2.0;

    // [time]
    double horizon = 1.0;
    std::size_t steps = 32;

    // [operator]
    std::string op_kind = "zero";  // zero | linear | expression | finance
    std::vector<std::string> lin_a, lin_b, lin_abar, lin_bbar, lin_ja, lin_jb;
    std::string lin_c = "0", lin_cbar = "0", lin_jc = "0";
    std::string drift = "0";
    std::vector<std::string> diffusion;
    double lipschitz = 0.0;

    // [terminal]
    std::string terminal_kind = "zero";  // zero | expression
    std::vector<std::string> terminal;

    // [levyN]
    std::vector<LevyChannelConfig> levy;

    // [picard]
    double gamma = 0.0;
    int max_iters = 20;
    double tol = 1e-6;
    int basis_degree = 1;
    bool cross_terms = false;
    double ridge = 1e-8;
    bool include_jumps = true;
    int c_max = 0;
    int diag_k_max = 2;
    std::string init = "zero";  // zero | terminal
    bool standard_errors = false;

    // [norms]
    int k_max = 15;

    // [environment] (optional)
    bool has_environment = false;
    std::string env_preset = "frozen";  // frozen | ou | gbm | custom
    std::vector<double> env_x0;
    double env_b = 0.0;
    double env_theta = 1.0;
    double env_mu = 0.0;
    double env_sigma = 0.0;
    int env_noise_dim = 1;
    std::vector<std::string> env_drift;
    std::vector<std::string> env_diffusion;
    double env_lipschitz = 0.0;
    int env_derivative_order = 0;

    // [finance]
    double fin_r = 0.0;
    std::string fin_beta = "0.06", fin_sigma = "0.3", fin_c = "0", fin_d = "0";
    double fin_rho = 0.0;
    double fin_gamma = 0.5;
    double fin_b = 1.0;
    double fin_kappa = 1e-3;
    double fin_x0 = 2.0;
    double fin_y0 = 0.0;
    double fin_x_max = 0.0;
    double fin_compare_max = 0.0;
    int fin_resolution = 64;
    double fin_v_tolerance = 0.02;
    std::size_t fin_wealth_paths = 1000;
    std::size_t fin_error_paths = 256;
    std::string fin_derivatives = "log_chebyshev";  // log_chebyshev | finite_difference
    int fin_degree = 10;
    std::size_t fin_factor_ny = 0;
    std::size_t fin_factor_nt = 256;

    // [output]
    std::string out_dir = "out";
    std::size_t csv_paths = 4;  // paths written to per-path CSVs

    bool operator==(const RunConfig&) const = default;
};

/// Parse INI text ("[section]" headers, "key = value" lines, whole-line
/// comments with ';' or '#'). Lists are comma separated; expression lists
/// are ';' separated. Every problem found is collected and reported in one
/// ConfigError, one line each. With `validate` false only syntax, types and
/// unknown keys are checked (for callers that apply overrides first).
RunConfig parse_config(const std::string& text, bool validate = true);
RunConfig load_config(const std::string& path, bool validate = true);

/// Throws one ConfigError listing every violation, if any.
void require_valid(const RunConfig& cfg);

/// All fields, one section each; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

/// Invariant checks, returning every violation.
std::vector<std::string> validate_config(const RunConfig& cfg);

// Run objects built from a validated config.
DomainSpec make_domain(const RunConfig& cfg);
TimeGrid make_time_grid(const RunConfig& cfg);
LevySpec make_levy(const RunConfig& cfg);
OperatorPair make_operator(const RunConfig& cfg, const GridPtr& grid);
TerminalCondition make_terminal(const RunConfig& cfg);
PicardConfig make_picard(const RunConfig& cfg, int threads);
NormWeights make_norms(const RunConfig& cfg, double gamma);
EnvironmentSpec make_environment(const RunConfig& cfg);
FinanceModel make_finance_model(const RunConfig& cfg);
FinanceValidationConfig make_finance_validation(const RunConfig& cfg, int threads);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace bspde
