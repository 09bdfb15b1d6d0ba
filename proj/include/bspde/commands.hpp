#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "bspde/config.hpp"

namespace bspde {

/// Exit codes shared by every subcommand.
enum ExitCode : int { exit_ok = 0, exit_error = 1, exit_not_converged = 2 };

/// Command-line overrides applied on top of the config file.
struct CommandOptions {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    int threads = 1;
    std::ostream* out = nullptr;  // summary tables; nullptr silences
    std::ostream* err = nullptr;  // error reports
};

/// Apply overrides and validate; throws ConfigError listing every problem.
RunConfig effective_config(RunConfig cfg, const CommandOptions& opts);

/// simulate-drivers: drivers.csv plus jump/Brownian moment checks.
int cmd_simulate_drivers(const RunConfig& cfg, const CommandOptions& opts);
/// solve: Picard solve, mean fields, optional domain evaluation.
int cmd_solve(const RunConfig& cfg, const CommandOptions& opts);
/// finance-validate: value function against the closed form.
int cmd_finance_validate(const RunConfig& cfg, const CommandOptions& opts);
/// emit-surfaces: solve, then per-path surfaces for the first csv_paths paths.
int cmd_emit_surfaces(const RunConfig& cfg, const CommandOptions& opts);

/// Load the config file, dispatch by name and map errors to exit codes
/// (library errors print "module: message" to opts.err and return 1).
int run_command(const std::string& command, const std::string& config_path, const CommandOptions& opts);

}  // namespace bspde
