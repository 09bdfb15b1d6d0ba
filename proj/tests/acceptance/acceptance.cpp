// Acceptance checks: one PASS/FAIL line per criterion, "info" lines for
// context. Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bspde/commands.hpp"
#include "bspde/config.hpp"
#include "bspde/error.hpp"
#include "bspde/finance.hpp"
#include "bspde/picard.hpp"

using namespace bspde;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void info(const std::string& msg) { std::cout << "  info: " << msg << "\n"; }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [failed]");
        pass = pass && ok;
    }
};

struct Setup {
    GridPtr grid;
    std::shared_ptr<const DriverPaths> drivers;
    ProblemPtr problem;
};

Setup make(ModelDims dims, const LevySpec& levy, TimeGrid tg, std::size_t paths, TerminalCondition H, int nodes,
           BasisConfig basis = {}, std::uint64_t seed = 2024) {
    Setup s;
    s.grid = make_grid(DomainSpec::box({{0.0, 1.0}}, nodes));
    s.drivers = std::make_shared<const DriverPaths>(simulate_drivers(dims, levy, tg, seed, paths));
    s.problem = std::make_shared<const Problem>(s.grid, dims, levy, *s.drivers, std::move(H), basis);
    return s;
}

LinearCoefficients rate(double a) {
    LinearCoefficients c;
    c.c = Expression::constant(a);
    return c;
}

std::string config_path(const std::string& name) { return std::string(BSPDE_CONFIG_DIR) + "/" + name + ".ini"; }

// 1. H = 0 with L(·,0,·) = J(·,0,·) = 0 returns the zero triplet.
Outcome zero_fixed_point() {
    Outcome o;
    const auto t0 = Clock::now();
    ModelDims dims{1, 1, 1, 1};
    LevySpec levy;
    levy.channels.push_back(LevyChannel::atoms({{0.5, 1.0}, {1.0, 0.5}}, 2.0));
    auto s = make(dims, levy, {1.0, 16}, 1000, zero_terminal(1), 33);
    // a nonzero linear operator that vanishes at zero
    LinearCoefficients c = rate(0.5);
    c.b = {Expression::parse("x1", {"x1"})};
    c.jc = Expression::constant(0.3);
    auto op = build_linear_operator(c, dims, s.grid);
    auto res = picard_solve(op, s.problem, {});
    NormWeights w;
    w.gamma = res.diagnostics.gamma;
    const double norm = mgamma_norm(res.solution, w);
    const double secs = seconds_since(t0);
    o.require(res.diagnostics.converged, "converged");
    o.require(norm < 1e-12, "M^D_gamma norm " + fmt(norm) + " < 1e-12");
    o.require(secs < 1.0, "runtime " + fmt(secs) + " s < 1 s");
    return o;
}

// 2. L = aV against h(x) e^{a(T-t)}.
Outcome linear_oracle() {
    Outcome o;
    const auto t0 = Clock::now();
    const double a = 0.5;
    ModelDims dims{1, 1, 1, 0};
    auto error = [&](std::size_t steps) {
        const TimeGrid tg{1.0, steps};
        auto s = make(dims, {}, tg, 10000, expression_terminal({"1 + x1^2"}, dims), 9);
        PicardConfig cfg;
        cfg.tol = 1e-12;
        cfg.max_iters = 40;
        auto res = picard_solve(build_linear_operator(rate(a), dims, s.grid), s.problem, cfg);
        double worst = 0.0;
        for (std::size_t j = 0; j <= tg.steps; ++j)
            for (std::size_t path : {std::size_t{0}, std::size_t{4999}, std::size_t{9999}}) {
                auto V = res.solution.realize(j, path).V;
                for (std::size_t i = 0; i < s.grid->size(); ++i) {
                    const double x = s.grid->node(i)[0];
                    const double exact = (1.0 + x * x) * std::exp(a * (1.0 - tg.time(j)));
                    worst = std::max(worst, std::abs(V(i, 0) - exact) / exact);
                }
            }
        if (!res.diagnostics.converged) worst = std::numeric_limits<double>::infinity();
        return worst;
    };
    const double e32 = error(32), e64 = error(64);
    const double secs = seconds_since(t0);
    o.require(e32 <= 2.0 / 32, "err(1/32) " + fmt(e32) + " <= " + fmt(2.0 / 32));
    o.require(e64 <= 2.0 / 64, "err(1/64) " + fmt(e64) + " <= " + fmt(2.0 / 64));
    const double ratio = e32 / e64;
    o.require(ratio >= 1.4 && ratio <= 2.6, "halving ratio " + fmt(ratio) + " in [1.4, 2.6]");
    o.require(secs < 30.0, "runtime " + fmt(secs) + " s < 30 s");
    return o;
}

// Mean and standard error over independent replications. The per-step
// regression standard errors miss coefficient error carried backward from
// later steps, so spread across seeds is the honest Monte Carlo error.
std::pair<double, double> replicated(int K, const std::function<double(std::uint64_t)>& estimate) {
    double s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < K; ++k) {
        const double v = estimate(1000 + static_cast<std::uint64_t>(k));
        s1 += v;
        s2 += v * v;
    }
    const double mean = s1 / K;
    return {mean, std::sqrt(std::max(0.0, (s2 / K - mean * mean) * K / (K - 1.0)) / K)};
}

// 3. H = W1(T) ⇒ V̄ = e1; forward reconstruction residual.
Outcome martingale_oracle() {
    Outcome o;
    ModelDims dims{1, 1, 2, 0};
    const TimeGrid tg{1.0, 16};
    const int K = 20;
    std::vector<double> col2;
    auto [m1, se1] = replicated(K, [&](std::uint64_t seed) {
        auto s = make(dims, {}, tg, 4000, expression_terminal({"W1"}, dims), 5, {}, seed);
        auto res = picard_solve(zero_operator(dims), s.problem, {});
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < tg.steps; ++j) {
            const auto tr = res.solution.mean(j);
            a += tr.Vbar(2, 0) / static_cast<double>(tg.steps);
            b += tr.Vbar(2, 1) / static_cast<double>(tg.steps);
        }
        col2.push_back(b);
        return a;
    });
    auto [m2, se2] = replicated(K, [&](std::uint64_t seed) { return col2[seed - 1000]; });
    o.require(std::abs(m1 - 1.0) <= 3.0 * se1, "Vbar_1 " + fmt(m1) + " vs 1 (3 se = " + fmt(3 * se1) + ")");
    o.require(std::abs(m2) <= 3.0 * se2, "Vbar_2 " + fmt(m2) + " vs 0 (3 se = " + fmt(3 * se2) + ")");

    // H = W1²: the Euler sum of 2 W dW misses Σ(ΔW² − Δt), whose RMS is
    // sqrt(2 T Δt), so C = 2 bounds the exact-representation residual.
    ModelDims d1{1, 1, 1, 0};
    const double C = 2.0;
    double prev = std::numeric_limits<double>::infinity();
    bool decreasing = true, bounded = true;
    std::string levels;
    for (auto [steps, paths] : {std::pair<std::size_t, std::size_t>{8, 2000}, {16, 4000}, {32, 8000}}) {
        auto r = make(d1, {}, {1.0, steps}, paths, expression_terminal({"W1^2"}, d1), 3,
                      BasisConfig{2, false, 1e-8, true});
        auto op = zero_operator(d1);
        const double rms = reconstruct_forward(picard_solve(op, r.problem, {}).solution, op).rms;
        const double dt = 1.0 / static_cast<double>(steps);
        decreasing = decreasing && rms < prev;
        bounded = bounded && rms <= C * std::sqrt(dt);
        prev = rms;
        levels += (levels.empty() ? "" : ", ") + fmt(rms) + "@dt=1/" + std::to_string(steps);
    }
    o.require(decreasing, "residual RMS decreasing (" + levels + ")");
    o.require(bounded, "RMS <= 2 sqrt(dt)");
    return o;
}

// 4. Contraction diagnostics and exit code 2.
Outcome contraction() {
    Outcome o;
    auto check_ratios = [&](const PicardDiagnostics& d, const std::string& label) {
        double worst = 0.0;
        for (const auto& it : d.iterations)
            if (it.iteration >= 3 && it.delta > 0.0) worst = std::max(worst, it.ratio);
        o.require(d.converged && worst < 1.0, label + " max ratio (i>=3) " + fmt(worst) + " < 1");
        o.require(std::isfinite(d.cauchy_tail), label + " Cauchy tail " + fmt(d.cauchy_tail) + " finite");
    };

    ModelDims dims{1, 1, 1, 0};
    auto s = make(dims, {}, {1.0, 32}, 1000, expression_terminal({"1 + x1^2"}, dims), 17);
    PicardConfig cfg;
    cfg.tol = 1e-10;
    cfg.max_iters = 40;
    auto lin = picard_solve(build_linear_operator(rate(0.5), dims, s.grid), s.problem, cfg);
    info("linear gamma " + fmt(lin.diagnostics.gamma) + ", iterations " +
         std::to_string(lin.diagnostics.iterations_used));
    check_ratios(lin.diagnostics, "linear");

    // a second-order term loses two derivatives per sweep; on a fine grid
    // node-scale modes eventually grow (reported, not a criterion)
    LinearCoefficients heat = rate(0.5);
    heat.a = {Expression::constant(0.05)};
    PicardConfig hcfg = cfg;
    hcfg.max_iters = 15;
    auto h = picard_solve(build_linear_operator(heat, dims, s.grid), s.problem, hcfg);
    double floor = std::numeric_limits<double>::infinity();
    for (const auto& it : h.diagnostics.iterations) floor = std::min(floor, it.delta);
    info("with 0.05 V_xx on 17 nodes: smallest delta " + fmt(floor) + ", converged " +
         (h.diagnostics.converged ? "yes" : "no"));

    const RunConfig merton = load_config(config_path("merton"));
    auto fin = validate_finance(make_finance_model(merton), make_finance_validation(merton, 1));
    info("finance gamma " + fmt(fin.report.diagnostics.gamma) + ", iterations " +
         std::to_string(fin.report.diagnostics.iterations_used));
    check_ratios(fin.report.diagnostics, "finance");

    // non-convergence must surface as exit code 2
    const fs::path dir = fs::temp_directory_path() / "bspde_acceptance_c4";
    fs::create_directories(dir);
    RunConfig starved = load_config(config_path("linear"));
    starved.max_iters = 2;
    starved.tol = 1e-14;
    const fs::path ini = dir / "starved.ini";
    std::ofstream(ini) << serialize_config(starved);
    std::ostringstream sink;
    CommandOptions opts;
    opts.err = &sink;
    opts.out_dir = (dir / "starved").string();
    const int starved_code = run_command("solve", ini.string(), opts);
    opts.out_dir = (dir / "coarse").string();
    const int coarse_code = run_command("finance-validate", config_path("merton_coarse"), opts);
    o.require(starved_code == exit_not_converged, "linear max_iters=2 exit " + std::to_string(starved_code));
    o.require(coarse_code == exit_not_converged, "merton_coarse exit " + std::to_string(coarse_code));
    fs::remove_all(dir);
    return o;
}

// 5. FD of the solved V against the differentiated system.
Outcome derivative_system() {
    Outcome o;
    ModelDims dims{1, 1, 0, 0};
    for (int nodes : {17, 33}) {
        // exact ∂H, so the system is not just a difference of the gridded H
        TerminalCondition H = expression_terminal({"2 + sin(3*x1)"}, dims);
        H.derivative = [](const MultiIndex& alpha, std::span<const double> x, const DriverView&, std::span<double> out) {
            if (alpha != MultiIndex{1}) return false;
            out[0] = 3.0 * std::cos(3.0 * x[0]);
            return true;
        };
        auto s = make(dims, {}, {1.0, 16}, 10, std::move(H), nodes);
        LinearCoefficients c = rate(0.5);
        c.b = {Expression::parse("0.2*x1", {"x1"})};
        PicardConfig cfg;
        cfg.tol = 1e-9;
        cfg.max_iters = 80;
        cfg.c_max = 1;
        auto res = picard_solve(build_linear_operator(c, dims, s.grid), s.problem, cfg);
        const double h = s.grid->spacing(0);
        double worst = 0.0;
        for (std::size_t j = 0; j <= 16; ++j) {
            auto fd = partial_derivative(res.solution.mean(j).V, {1});
            auto sys = res.derivatives.at({1}).mean(j).V;
            for (std::size_t i = 0; i < s.grid->size(); ++i) worst = std::max(worst, std::abs(fd(i, 0) - sys(i, 0)));
        }
        // deterministic problem: the Monte Carlo standard error is zero
        const double tol = 10.0 * h * h;
        o.require(res.diagnostics.converged && worst <= tol,
                  "h=1/" + std::to_string(nodes - 1) + " max |FD - V^(1)| " + fmt(worst) + " <= " + fmt(tol));
    }
    return o;
}

// 6. Compensated increments and subordinator mean at 1e5 paths.
Outcome jumps() {
    Outcome o;
    LevySpec levy;
    levy.channels.push_back(LevyChannel::atoms({{0.5, 1.0}, {1.0, 0.5}}, 2.0));
    levy.channels.push_back(LevyChannel::named("gamma", 1.0, 2.0, 4.0, 0.0, 1.5, 16));
    ModelDims dims{1, 1, 0, 2};
    const TimeGrid tg{1.0, 16};
    const std::size_t M = 100000;
    const auto d = simulate_drivers(dims, levy, tg, 77, M);
    for (std::size_t ch = 0; ch < levy.size(); ++ch) {
        const auto& chan = levy.channels[ch];
        double s1 = 0.0, s2 = 0.0, l1 = 0.0, l2 = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            double tot = 0.0;
            for (std::size_t j = 0; j < tg.steps; ++j)
                for (std::size_t c = 0; c < d.cells(ch); ++c) tot += d.dN(m, ch, j, c);
            s1 += tot;
            s2 += tot * tot;
            const double L = d.L(m, tg.steps)[ch];
            l1 += L;
            l2 += L * L;
        }
        const double n = static_cast<double>(M);
        const double mean = s1 / n, se = std::sqrt((s2 / n - mean * mean) / n);
        const double lmean = l1 / n, lse = std::sqrt((l2 / n - lmean * lmean) / n);
        // independent oracle: λ Σ z ν over the retained cells
        double oracle = 0.0;
        if (chan.is_atomic()) {
            for (auto [z, mass] : chan.atom_list()) oracle += z * mass;
        } else {
            // ∫_ε^cap z · z^{-1} e^{-bz} dz = (e^{-bε} − e^{-b cap}) / b for the gamma density
            oracle = (std::exp(-2.0 * chan.epsilon()) - std::exp(-2.0 * chan.z_cap())) / 2.0;
        }
        oracle *= chan.intensity() * tg.horizon;
        const std::string tag = chan.name() + " channel";
        o.require(std::abs(mean) <= 3.0 * se, tag + " compensated total " + fmt(mean) + " (3 se " + fmt(3 * se) + ")");
        o.require(std::abs(lmean - oracle) <= 3.0 * lse,
                  tag + " E L(1) " + fmt(lmean) + " vs " + fmt(oracle) + " (3 se " + fmt(3 * lse) + ")");
    }
    return o;
}

// 7. Finance oracle.
Outcome finance() {
    Outcome o;
    const auto t0 = Clock::now();
    auto run = [](const std::string& name) {
        const RunConfig cfg = load_config(config_path(name));
        return validate_finance(make_finance_model(cfg), make_finance_validation(cfg, 1));
    };

    const RunConfig mcfg = load_config(config_path("merton"));
    const FinanceModel model = make_finance_model(mcfg);
    const auto merton = run("merton");
    o.require(merton.report.diagnostics.converged && merton.report.v_max_rel_error <= 0.02,
              "Merton max rel V error " + fmt(merton.report.v_max_rel_error) + " <= 0.02");
    // the terminal condition alone, to show the tolerance is not met trivially
    double terminal_only = 0.0;
    const auto xg = merton.problem->grid();
    const auto cf0 = closed_form_value(model, merton.fsurface, xg, 0.0, model.y0);
    for (std::size_t i = 0; i < xg->size(); ++i) {
        const double x = xg->node(i)[0];
        if (x > 5.0 * model.x0 + 1e-12) continue;
        const double H = std::pow(x, model.gamma) / model.gamma;
        terminal_only = std::max(terminal_only, std::abs(H - cf0.V(i, 0)) / cf0.V(i, 0));
    }
    info("terminal condition alone differs from V(0) by " + fmt(terminal_only));
    const double h = 1.0 / mcfg.fin_resolution;
    o.require(merton.report.merton_spread <= 10.0 * h * h,
              "Merton pi_1/x spread " + fmt(merton.report.merton_spread) + " <= " + fmt(10.0 * h * h));

    const auto zero = run("merton_zero");
    o.require(zero.report.v_max_rel_error < 1e-10, "zero-premium error " + fmt(zero.report.v_max_rel_error));

    const RunConfig fcfg = load_config(config_path("factor"));
    auto [vb, vb_se] = replicated(8, [&](std::uint64_t seed) {
        FinanceValidationConfig v = make_finance_validation(fcfg, 1);
        v.seed = seed;
        v.wealth_paths = 0;
        return validate_finance(make_finance_model(fcfg), v).report.vbar1_mean;
    });
    o.require(std::abs(vb) <= 3.0 * vb_se, "rho=0 Vbar_1 " + fmt(vb) + " (3 se " + fmt(3.0 * vb_se) + ", 8 seeds)");
    const double secs = seconds_since(t0);
    o.require(secs < 300.0, "runtime " + fmt(secs) + " s < 300 s");
    return o;
}

// 8. Norm properties on band-limited random fields.
GriddedField band_limited(const GridPtr& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto p = static_cast<std::size_t>(g->dim());
    std::vector<double> w(4 * p), phase(4), amp(4);
    for (auto& v : w) v = 0.3 * u(rng);
    for (std::size_t i = 0; i < 4; ++i) {
        phase[i] = 3.0 * u(rng);
        amp[i] = 0.25 * u(rng);
    }
    return GriddedField::sample(g, 1, [&](std::span<const double> x, std::span<double> out) {
        out[0] = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double arg = phase[i];
            for (std::size_t a = 0; a < p; ++a) arg += w[i * p + a] * x[a];
            out[0] += amp[i] * std::cos(arg);
        }
    });
}

struct NormStats {
    double homogeneity = 0.0;  // relative
    double triangle = 0.0;     // max (N(f+g) − N(f) − N(g)) / (N(f) + N(g))
    bool monotone = true;
    bool gamma_monotone = true;
    double truncation = 0.0;   // relative change of cinf from k_max 15 to 20
};

NormStats norm_suite(const GridPtr& g, int fields, std::uint64_t seed) {
    NormStats st;
    std::mt19937_64 rng(seed);
    NormWeights w15, w20;
    w15.k_max = 15;
    w20.k_max = 20;
    ModelDims dims{g->dim(), 1, 1, 0};
    const TimeGrid tg{1.0, 2};
    for (int n = 0; n < fields; ++n) {
        const auto f = band_limited(g, rng), h = band_limited(g, rng);
        const double alpha = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
        const double nf = cinf_norm(f, w15), nh = cinf_norm(h, w15);
        st.homogeneity = std::max(st.homogeneity, std::abs(cinf_norm(alpha * f, w15) - std::abs(alpha) * nf) /
                                                      (std::abs(alpha) * nf));
        st.triangle = std::max(st.triangle, (cinf_norm(f + h, w15) - nf - nh) / (nf + nh));
        for (int k = 1; k <= 15; ++k) st.monotone = st.monotone && ck_norm(f, k) >= ck_norm(f, k - 1);
        st.truncation = std::max(st.truncation, std::abs(cinf_norm(f, w20) - nf) / nf);
        if (n % 10 == 0) {
            std::vector<std::vector<FieldTriplet>> steps;
            for (std::size_t j = 0; j <= tg.steps; ++j) {
                auto tr = FieldTriplet::zeros(g, dims, nullptr);
                tr.V = band_limited(g, rng);
                tr.Vbar = band_limited(g, rng);
                steps.push_back({tr});
            }
            StoredSeries series(tg, steps);
            double prev = 0.0;
            for (double gamma : {0.0, 0.5, 1.0, 2.0}) {
                NormWeights w;
                w.gamma = gamma;
                w.k_max = 6;
                const double v = mgamma_norm(series, w);
                st.gamma_monotone = st.gamma_monotone && v >= prev;
                prev = v;
            }
        }
    }
    return st;
}

Outcome norms() {
    Outcome o;
    // unit-spacing lattices: high-order finite differences of smooth fields
    // stay bounded there (see README, "Numerical notes")
    const auto line = make_grid(DomainSpec::box({{0.0, 24.0}}, 25));
    const auto plane = make_grid(DomainSpec::box({{0.0, 20.0}, {0.0, 20.0}}, 21));
    const NormStats a = norm_suite(line, 50, 11), b = norm_suite(plane, 50, 12);
    const double hom = std::max(a.homogeneity, b.homogeneity);
    const double tri = std::max(a.triangle, b.triangle);
    const double trunc = std::max(a.truncation, b.truncation);
    o.require(hom <= 1e-12, "homogeneity " + fmt(hom) + " <= 1e-12");
    o.require(tri <= 1e-12, "triangle excess " + fmt(tri) + " <= 0");
    o.require(a.monotone && b.monotone, "C^k norms nondecreasing in k");
    o.require(a.gamma_monotone && b.gamma_monotone, "M_gamma norm nondecreasing in gamma");
    o.require(trunc < 1e-5, "truncation 15->20 " + fmt(trunc) + " < 1e-5");

    const auto fine = make_grid(DomainSpec::box({{0.0, 12.0}}, 25));
    const NormStats c = norm_suite(fine, 20, 13);
    info("h=0.5 lattice: homogeneity " + fmt(c.homogeneity) + ", truncation 15->20 " + fmt(c.truncation));
    return o;
}

// 9. Byte-identical outputs across thread counts.
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "bspde_acceptance_c9";
    fs::remove_all(root);
    std::vector<std::pair<std::string, std::string>> runs;
    for (const auto& entry : fs::directory_iterator(BSPDE_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        const std::string name = entry.path().stem().string();
        const RunConfig cfg = load_config(entry.path().string());
        runs.emplace_back(cfg.op_kind == "finance" ? "finance-validate" : "solve", name);
    }
    std::sort(runs.begin(), runs.end(), [](const auto& x, const auto& y) { return x.second < y.second; });
    runs.emplace_back("simulate-drivers", "jumps");
    runs.emplace_back("emit-surfaces", "annulus");

    std::size_t files = 0;
    std::vector<std::string> mismatches;
    for (const auto& [cmd, name] : runs) {
        int codes[2];
        fs::path dirs[2];
        for (int k = 0; k < 2; ++k) {
            std::ostringstream sink;
            CommandOptions opts;
            opts.err = &sink;
            opts.threads = k == 0 ? 1 : 3;
            dirs[k] = root / (cmd + "_" + name) / ("t" + std::to_string(opts.threads));
            opts.out_dir = dirs[k].string();
            codes[k] = run_command(cmd, config_path(name), opts);
        }
        if (codes[0] != codes[1]) mismatches.push_back(cmd + " " + name + " exit code");
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            const auto fname = entry.path().filename();
            const auto ext = fname.extension();
            if (ext != ".csv" && fname != "diagnostics.jsonl") continue;
            ++files;
            if (!fs::exists(dirs[1] / fname) || slurp(entry.path()) != slurp(dirs[1] / fname))
                mismatches.push_back(cmd + " " + name + " " + fname.string());
        }
    }
    fs::remove_all(root);
    std::string what = std::to_string(runs.size()) + " runs, " + std::to_string(files) + " files compared";
    for (const auto& m : mismatches) what += ", differs: " + m;
    o.require(mismatches.empty() && files > 0, what);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"zero fixed point", zero_fixed_point},
        {"linear-driver oracle", linear_oracle},
        {"martingale representation", martingale_oracle},
        {"contraction diagnostics", contraction},
        {"derivative system", derivative_system},
        {"jump machinery", jumps},
        {"finance oracle", finance},
        {"norm suite", norms},
        {"reproducibility", reproducibility},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const Error& e) {
            o.pass = false;
            o.detail = "error " + e.module() + ": " + e.what();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("error: ") + e.what();
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << ", "
                  << fmt(seconds_since(t0)) << " s): " << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
    return failed == 0 ? 0 : 1;
}
