#include "bspde/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "bspde/domains.hpp"
#include "bspde/drivers.hpp"
#include "bspde/error.hpp"
#include "bspde/finance.hpp"
#include "bspde/picard.hpp"

namespace bspde {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

constexpr const char* kVersion = "0.1.0";

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// JSON has no infinities; keep them readable.
json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Files of one run. Everything except timings.jsonl is a function of
// (config, seed) only.
class Outputs {
public:
    explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw ConfigError("cli", "cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    void add(const std::string& name, const std::string& content) {
        std::ofstream os(dir_ / name, std::ios::binary);
        if (!os) throw ConfigError("cli", "cannot write " + (dir_ / name).string());
        os << content;
        files_.push_back({{"name", name}, {"bytes", content.size()}, {"fnv1a64", hex64(fnv1a64(content))}});
    }

    void timing(json record) { timings_ += record.dump() + "\n"; }

    void finish(const std::string& command, const RunConfig& cfg) {
        add("timings.jsonl", timings_);
        json m;
        m["tool"] = "bspde";
        m["version"] = kVersion;
        m["command"] = command;
        m["name"] = cfg.name;
        m["seed"] = cfg.seed.value_or(0);
        m["paths"] = cfg.paths;
        m["config_fnv1a64"] = hex64(fnv1a64(serialize_config(cfg)));
        m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                     std::to_string(EIGEN_MINOR_VERSION);
        m["files"] = files_;
        std::ofstream os(dir_ / "manifest.json", std::ios::binary);
        os << m.dump(2) << '\n';
    }

private:
    std::filesystem::path dir_;
    json files_ = json::array();
    std::string timings_;
};

std::string diagnostics_jsonl(const PicardDiagnostics& d) {
    std::string out;
    for (const auto& it : d.iterations) {
        json r;
        r["type"] = "iteration";
        r["iteration"] = it.iteration;
        r["delta"] = number(it.delta);
        r["ratio"] = number(it.ratio);
        out += r.dump() + "\n";
    }
    json s;
    s["type"] = "summary";
    s["converged"] = d.converged;
    s["aborted"] = d.aborted;
    s["iterations"] = d.iterations_used;
    s["gamma"] = number(d.gamma);
    s["gamma_hat"] = number(d.gamma_hat);
    s["lipschitz"] = number(d.lipschitz);
    s["s_hat"] = number(d.s_hat);
    s["cauchy_tail"] = number(d.cauchy_tail);
    s["warnings"] = d.warnings;
    out += s.dump() + "\n";
    return out;
}

void iteration_timings(Outputs& out, const PicardDiagnostics& d) {
    for (const auto& it : d.iterations) out.timing({{"iteration", it.iteration}, {"seconds", it.seconds}});
}

std::string csv_header(const std::vector<std::string>& lead, int p, const std::string& v, int q) {
    std::string h;
    for (const auto& s : lead) h += s + ",";
    for (int a = 0; a < p; ++a) h += "x" + std::to_string(a + 1) + ",";
    for (int r = 0; r < q; ++r) h += v + std::to_string(r + 1) + (r + 1 < q ? "," : "");
    return h + "\n";
}

void put_node(std::ostringstream& os, const SpatialGrid& g, std::size_t i) {
    for (double x : g.node(i)) os << format_double(x) << ',';
}

struct Solved {
    std::shared_ptr<const DriverPaths> drivers;
    ProblemPtr problem;
    OperatorPair op;
    PicardResult result;
};

Solved run_picard(const RunConfig& cfg, const CommandOptions& opts, Outputs& out) {
    const auto start = Clock::now();
    const GridPtr grid = make_grid(make_domain(cfg));
    const TimeGrid tg = make_time_grid(cfg);
    const LevySpec levy = make_levy(cfg);
    auto drivers = std::make_shared<const DriverPaths>(
        simulate_drivers(cfg.dims, levy, tg, *cfg.seed, cfg.paths, opts.threads));
    out.timing({{"phase", "drivers"}, {"seconds", seconds_since(start)}});
    const PicardConfig pc = make_picard(cfg, opts.threads);
    auto problem = std::make_shared<const Problem>(grid, cfg.dims, levy, *drivers, make_terminal(cfg), pc.basis);
    OperatorPair op = make_operator(cfg, grid);
    const auto solve_start = Clock::now();
    Solved s{drivers, problem, op, picard_solve(op, problem, pc)};
    for (const auto& w : problem->warnings()) s.result.diagnostics.warnings.push_back(w);
    out.timing({{"phase", "picard"}, {"seconds", seconds_since(solve_start)}, {"threads", opts.threads}});
    iteration_timings(out, s.result.diagnostics);
    return s;
}

std::string mean_fields_csv(const SolutionSeries& sol, const ModelDims& dims) {
    const SpatialGrid& g = *sol.problem().grid();
    std::ostringstream os;
    std::string h = csv_header({"step", "t"}, g.dim(), "v", dims.q);
    h.pop_back();
    for (int r = 0; r < dims.q; ++r)
        for (int l = 0; l < dims.d; ++l) h += ",vbar" + std::to_string(r + 1) + "_" + std::to_string(l + 1);
    os << h << '\n';
    const TimeGrid& tg = sol.time_grid();
    for (std::size_t j = 0; j <= tg.steps; ++j) {
        const FieldTriplet tr = sol.mean(j);
        for (std::size_t i = 0; i < g.size(); ++i) {
            os << j << ',' << format_double(tg.time(j)) << ',';
            put_node(os, g, i);
            for (int r = 0; r < dims.q; ++r) os << (r ? "," : "") << format_double(tr.V(i, r));
            for (int c = 0; c < dims.q * dims.d; ++c) os << ',' << format_double(tr.Vbar.empty() ? 0.0 : tr.Vbar(i, c));
            os << '\n';
        }
    }
    return os.str();
}

std::string derivatives_csv(const std::map<MultiIndex, SolutionSeries>& ders, const ModelDims& dims) {
    std::ostringstream os;
    bool header = false;
    for (const auto& [alpha, series] : ders) {
        const SpatialGrid& g = *series.problem().grid();
        if (!header) {
            os << csv_header({"alpha", "step", "t"}, g.dim(), "v", dims.q);
            header = true;
        }
        const TimeGrid& tg = series.time_grid();
        for (std::size_t j = 0; j <= tg.steps; ++j) {
            const FieldTriplet tr = series.mean(j);
            for (std::size_t i = 0; i < g.size(); ++i) {
                os << to_string(alpha) << ',' << j << ',' << format_double(tg.time(j)) << ',';
                put_node(os, g, i);
                for (int r = 0; r < dims.q; ++r) os << (r ? "," : "") << format_double(tr.V(i, r));
                os << '\n';
            }
        }
    }
    return os.str();
}

// Environment paths, path norm and stopping statistics.
void evaluate_domain(const RunConfig& cfg, const CommandOptions& opts, const Solved& s, Outputs& out,
                     std::string& diagnostics) {
    const auto start = Clock::now();
    const EnvironmentSpec env = make_environment(cfg);
    const TimeGrid tg = make_time_grid(cfg);
    const EnvironmentPaths paths = simulate_environment(env, tg, *cfg.seed, cfg.paths, opts.threads);
    const auto values = evaluate_along_path(s.result.solution, paths, cfg.env_derivative_order,
                                            &s.problem->terminal(), s.drivers.get(), opts.threads);
    const NormWeights w = make_norms(cfg, s.result.diagnostics.gamma);
    std::size_t stopped = 0;
    double gap = 0.0;
    for (const auto& v : values) {
        stopped += v.stopped ? 1 : 0;
        gap = std::max(gap, v.terminal_gap);
    }
    json r;
    r["type"] = "domain";
    r["path_norm"] = number(path_norm(values, tg, w));
    r["stopped_fraction"] = static_cast<double>(stopped) / static_cast<double>(values.size());
    r["max_terminal_gap"] = number(gap);
    diagnostics += r.dump() + "\n";
    const std::size_t keep = std::min(cfg.csv_paths, values.size());
    std::ostringstream os;
    write_path_csv(os, std::vector<PathValues>(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(keep)),
                   paths);
    out.add("paths.csv", os.str());
    out.timing({{"phase", "domain"}, {"seconds", seconds_since(start)}});
}

void report_solve(const CommandOptions& opts, const RunConfig& cfg, const PicardDiagnostics& d) {
    if (!opts.out) return;
    auto& os = *opts.out;
    char line[160];
    std::snprintf(line, sizeof line, "%s: %s after %d iterations, last delta %.3e, s_hat %.3e, tail %.3e\n",
                  cfg.name.c_str(), d.converged ? "converged" : "NOT converged", d.iterations_used,
                  d.iterations.empty() ? 0.0 : d.iterations.back().delta, d.s_hat, d.cauchy_tail);
    os << line;
    for (const auto& w : d.warnings) os << "  warning: " << w << '\n';
}

int solve_common(const RunConfig& cfg, const CommandOptions& opts, bool surfaces, const char* command) {
    if (cfg.op_kind == "finance" && cfg.init != "terminal")
        throw ConfigError("cli", "[picard] init = terminal is required with the finance operator");
    Outputs out(cfg.out_dir);
    out.add("config.ini", serialize_config(cfg));
    const Solved s = run_picard(cfg, opts, out);
    const SolutionSeries& sol = s.result.solution;
    std::string diagnostics = diagnostics_jsonl(s.result.diagnostics);
    out.add("solution_mean.csv", mean_fields_csv(sol, cfg.dims));
    if (!s.result.derivatives.empty()) out.add("derivatives_mean.csv", derivatives_csv(s.result.derivatives, cfg.dims));
    if (cfg.has_environment) evaluate_domain(cfg, opts, s, out, diagnostics);
    if (surfaces) {
        const SpatialGrid& g = *s.problem->grid();
        const TimeGrid& tg = sol.time_grid();
        std::ostringstream os;
        os << csv_header({"path", "step", "t"}, g.dim(), "v", cfg.dims.q);
        const std::size_t keep = std::min(cfg.csv_paths, sol.paths());
        for (std::size_t m = 0; m < keep; ++m)
            for (std::size_t j = 0; j <= tg.steps; ++j) {
                const FieldTriplet tr = sol.realize(j, m);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    os << m << ',' << j << ',' << format_double(tg.time(j)) << ',';
                    put_node(os, g, i);
                    for (int r = 0; r < cfg.dims.q; ++r) os << (r ? "," : "") << format_double(tr.V(i, r));
                    os << '\n';
                }
            }
        out.add("surfaces.csv", os.str());
    }
    out.add("diagnostics.jsonl", diagnostics);
    out.finish(command, cfg);
    report_solve(opts, cfg, s.result.diagnostics);
    return s.result.diagnostics.converged ? exit_ok : exit_not_converged;
}

}  // namespace

RunConfig effective_config(RunConfig cfg, const CommandOptions& opts) {
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.paths) cfg.paths = *opts.paths;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.threads < 1) throw ConfigError("cli", "--threads must be >= 1");
    require_valid(cfg);
    return cfg;
}

int cmd_simulate_drivers(const RunConfig& cfg, const CommandOptions& opts) {
    const auto start = Clock::now();
    Outputs out(cfg.out_dir);
    out.add("config.ini", serialize_config(cfg));
    const LevySpec levy = make_levy(cfg);
    const TimeGrid tg = make_time_grid(cfg);
    const DriverPaths dp = simulate_drivers(cfg.dims, levy, tg, *cfg.seed, cfg.paths, opts.threads);
    out.timing({{"phase", "drivers"}, {"seconds", seconds_since(start)}, {"threads", opts.threads}});

    std::ostringstream csv;
    write_driver_csv(csv, dp, cfg.csv_paths);
    out.add("drivers.csv", csv.str());

    // Sample moments at T: W_l(T) (mean 0), Σ_cells Ñ(T) (mean 0) and
    // L(T) against λ ∫ z ν(dz) T.
    std::string diag;
    const auto M = static_cast<double>(dp.paths());
    auto moments = [M](const std::vector<double>& v) {
        double mean = 0.0, sq = 0.0;
        for (double x : v) mean += x;
        mean /= M;
        for (double x : v) sq += (x - mean) * (x - mean);
        return std::make_pair(mean, std::sqrt(sq / (M - 1.0) / M));
    };
    for (int l = 0; l < dp.brownian_dim(); ++l) {
        std::vector<double> v;
        for (std::size_t m = 0; m < dp.paths(); ++m) v.push_back(dp.W(m, tg.steps)[static_cast<std::size_t>(l)]);
        const auto [mean, se] = moments(v);
        diag += json{{"type", "brownian"}, {"column", l + 1}, {"mean_WT", number(mean)}, {"se", number(se)}}.dump() + "\n";
    }
    for (std::size_t c = 0; c < dp.channels(); ++c) {
        std::vector<double> n, L;
        for (std::size_t m = 0; m < dp.paths(); ++m) {
            double sum = 0.0;
            for (std::size_t j = 0; j < tg.steps; ++j)
                for (std::size_t cell = 0; cell < dp.cells(c); ++cell) sum += dp.dN(m, c, j, cell);
            n.push_back(sum);
            L.push_back(dp.L(m, tg.steps)[c]);
        }
        const auto [nm, nse] = moments(n);
        const auto [lm, lse] = moments(L);
        const auto& ch = levy.channels[c];
        json r{{"type", "jumps"},
               {"channel", c + 1},
               {"mean_compensated_NT", number(nm)},
               {"se_compensated", number(nse)},
               {"mean_LT", number(lm)},
               {"se_LT", number(lse)},
               {"expected_LT", number(ch.intensity() * ch.mean_jump_mass() * tg.horizon)}};
        diag += r.dump() + "\n";
    }
    out.add("diagnostics.jsonl", diag);
    out.finish("simulate-drivers", cfg);
    if (opts.out) *opts.out << cfg.name << ": " << dp.paths() << " driver paths on " << tg.steps << " steps\n";
    return exit_ok;
}

int cmd_solve(const RunConfig& cfg, const CommandOptions& opts) { return solve_common(cfg, opts, false, "solve"); }

int cmd_emit_surfaces(const RunConfig& cfg, const CommandOptions& opts) {
    return solve_common(cfg, opts, true, "emit-surfaces");
}

int cmd_finance_validate(const RunConfig& cfg, const CommandOptions& opts) {
    if (cfg.op_kind != "finance") throw ConfigError("cli", "finance-validate needs [operator] kind = finance");
    Outputs out(cfg.out_dir);
    out.add("config.ini", serialize_config(cfg));
    const FinanceModel model = make_finance_model(cfg);
    const FinanceValidationConfig fc = make_finance_validation(cfg, opts.threads);
    const auto start = Clock::now();
    const FinanceRun run = validate_finance(model, fc);
    const FinanceReport& rep = run.report;
    out.timing({{"phase", "picard"}, {"seconds", rep.seconds_solve}, {"threads", opts.threads}});
    out.timing({{"phase", "total"}, {"seconds", seconds_since(start)}});
    iteration_timings(out, rep.diagnostics);

    json r;
    r["delta"] = number(rep.delta);
    r["v_max_rel_error"] = number(rep.v_max_rel_error);
    r["v_tolerance"] = fc.v_tolerance;
    r["vbar_max_abs_error"] = number(rep.vbar_max_abs_error);
    r["vbar1_mean"] = number(rep.vbar1_mean);
    r["vbar1_se"] = number(rep.vbar1_se);
    r["merton_ratio"] = number(rep.merton_ratio);
    r["merton_spread"] = number(rep.merton_spread);
    r["residual_rms"] = number(rep.residual_rms);
    r["tau_fraction"] = number(rep.tau_fraction);
    r["tau_mean"] = number(rep.tau_mean);
    r["admissibility"] = number(rep.admissibility);
    r["converged"] = rep.diagnostics.converged;
    r["cauchy_tail"] = number(rep.diagnostics.cauchy_tail);
    json ratios = json::array();
    for (const auto& it : rep.diagnostics.iterations) ratios.push_back(number(it.ratio));
    r["ratios"] = ratios;
    r["within_tolerance"] = rep.within_tolerance;
    out.add("finance_report.json", r.dump(2) + "\n");
    out.add("diagnostics.jsonl", diagnostics_jsonl(rep.diagnostics));

    {
        const FSurface& fs = run.fsurface;
        std::ostringstream os;
        os << "t,y,f\n";
        for (std::size_t j = 0; j <= fs.time.steps; ++j)
            for (std::size_t i = 0; i < fs.ny(); ++i)
                os << format_double(fs.time.time(j)) << ',' << format_double(fs.y[i]) << ',' << format_double(fs.at(j, i))
                   << '\n';
        out.add("f_surface.csv", os.str());
    }
    if (run.solution) {
        const SolutionSeries& sol = *run.solution;
        const GridPtr& grid = run.problem->grid();
        const TimeGrid& tg = sol.time_grid();
        std::ostringstream vs;
        vs << "path,step,t,y,x,v,v_closed\n";
        const std::size_t keep = std::min(cfg.csv_paths, sol.paths());
        for (std::size_t m = 0; m < keep; ++m)
            for (std::size_t j = 0; j <= tg.steps; ++j) {
                const FieldTriplet tr = sol.realize(j, m);
                const double y = factor_at(model, DriverView(run.drivers.get(), m, j));
                const ClosedForm cf = closed_form_value(model, run.fsurface, grid, tg.time(j), y);
                for (std::size_t i = 0; i < grid->size(); ++i)
                    vs << m << ',' << j << ',' << format_double(tg.time(j)) << ',' << format_double(y) << ','
                       << format_double(grid->node(i)[0]) << ',' << format_double(tr.V(i, 0)) << ','
                       << format_double(cf.V(i, 0)) << '\n';
            }
        out.add("v_surface.csv", vs.str());

        std::ostringstream ps;
        ps << "x,pi,pi_closed\n";
        try {
            FieldTriplet tr = sol.mean(0);
            if (fc.derivatives.kind == XDerivativeRule::Kind::finite_difference) {
                tr.V.cache_derivatives(2);
                tr.Vbar.cache_derivatives(1);
            }
            const GriddedField pi = optimal_portfolio(tr, model, model.y0, fc.derivatives);
            const PortfolioPolicy closed = closed_form_policy(model, run.fsurface, grid);
            const DriverView at0(run.drivers.get(), 0, 0);
            for (std::size_t i = 0; i < grid->size(); ++i) {
                const double x = grid->node(i)[0];
                ps << format_double(x) << ',' << format_double(pi(i, 0)) << ',' << format_double(closed.risky(at0, x))
                   << '\n';
            }
        } catch (const SingularityError&) {
            // already reported in the diagnostics warnings
        }
        out.add("pi_surface.csv", ps.str());

        if (run.wealth.paths > 0) {
            std::ostringstream ws;
            ws << "path,step,t,x,bankrupt\n";
            const std::size_t wk = std::min(cfg.csv_paths, run.wealth.paths);
            for (std::size_t m = 0; m < wk; ++m)
                for (std::size_t j = 0; j <= run.wealth.grid.steps; ++j)
                    ws << m << ',' << j << ',' << format_double(run.wealth.grid.time(j)) << ','
                       << format_double(run.wealth.x(m, j)) << ',' << (j >= run.wealth.tau[m] && run.wealth.tau[m] <
                                                                            run.wealth.grid.steps ? 1 : 0)
                       << '\n';
            out.add("wealth.csv", ws.str());
        }
    }
    out.finish("finance-validate", cfg);

    if (opts.out) {
        auto& os = *opts.out;
        char line[200];
        auto row = [&](const char* what, double v, const char* tol, const char* status) {
            std::snprintf(line, sizeof line, "  %-26s %12.4e  %-10s %s\n", what, v, tol, status);
            os << line;
        };
        char vtol[32];
        std::snprintf(vtol, sizeof vtol, "%.3g", fc.v_tolerance);
        os << "finance-validate: " << cfg.name << "\n";
        std::snprintf(line, sizeof line, "  %-26s %12s  %-10s %s\n", "quantity", "value", "tolerance", "status");
        os << line;
        row("max rel V error", rep.v_max_rel_error, vtol, rep.v_max_rel_error <= fc.v_tolerance ? "ok" : "MISS");
        row("max V-bar error", rep.vbar_max_abs_error, "-", "");
        row("mean V-bar_1 at x0", rep.vbar1_mean, "-", "");
        row("  standard error", rep.vbar1_se, "-", "");
        row("Merton ratio", rep.merton_ratio, "-", "");
        row("spread of pi_1/x", rep.merton_spread, "-", "");
        row("forward residual (rms)", rep.residual_rms, "-", "");
        row("Cauchy tail", rep.diagnostics.cauchy_tail, "finite", std::isfinite(rep.diagnostics.cauchy_tail) ? "ok" : "MISS");
        row("bankrupt fraction", rep.tau_fraction, "-", "");
        row("mean tau", rep.tau_mean, "-", "");
        os << "  ratios:";
        for (const auto& it : rep.diagnostics.iterations)
            if (std::isfinite(it.ratio)) {
                std::snprintf(line, sizeof line, " %.3g", it.ratio);
                os << line;
            }
        os << "\n  " << (rep.diagnostics.converged ? "converged" : "NOT converged") << " after "
           << rep.diagnostics.iterations_used << " iterations\n";
        for (const auto& w : rep.diagnostics.warnings) os << "  warning: " << w << '\n';
        os << "  result: " << (rep.within_tolerance ? "within tolerance" : "TOLERANCE MISSED") << '\n';
    }
    return rep.within_tolerance ? exit_ok : exit_not_converged;
}

int run_command(const std::string& command, const std::string& config_path, const CommandOptions& opts) {
    try {
        const RunConfig cfg = effective_config(load_config(config_path, false), opts);
        if (command == "simulate-drivers") return cmd_simulate_drivers(cfg, opts);
        if (command == "solve") return cmd_solve(cfg, opts);
        if (command == "finance-validate") return cmd_finance_validate(cfg, opts);
        if (command == "emit-surfaces") return cmd_emit_surfaces(cfg, opts);
        throw ConfigError("cli", "unknown command '" + command + "'");
    } catch (const DivergedError& e) {
        if (opts.err) *opts.err << e.module() << ": " << e.what() << '\n';
        return exit_not_converged;
    } catch (const Error& e) {
        if (opts.err) *opts.err << e.module() << ": " << e.what() << '\n';
        return exit_error;
    } catch (const std::exception& e) {
        if (opts.err) *opts.err << "error: " << e.what() << '\n';
        return exit_error;
    }
}

}  // namespace bspde
