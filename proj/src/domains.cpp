#include "bspde/domains.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bspde/error.hpp"
#include "bspde/parallel.hpp"

namespace bspde {

std::vector<GridPtr> annulus_family(double b, int n_max, int p, int resolution) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("domains", "annulus family: b must be >= 0");
    if (!(static_cast<double>(n_max) > b))
        throw ConfigError("domains", "annulus family: n_max=" + std::to_string(n_max) + " must exceed b=" + format_double(b));
    std::vector<GridPtr> out;
    for (int n = static_cast<int>(std::floor(b)) + 1; n <= n_max; ++n) out.push_back(make_grid(DomainSpec::annulus(p, b, n, resolution)));
    return out;
}

// ---------------------------------------------------------------------------
// Environment

std::vector<std::string> EnvironmentSpec::variables(int p) {
    std::vector<std::string> v{"t"};
    for (int a = 1; a <= p; ++a) v.push_back("x" + std::to_string(a));
    return v;
}

EnvironmentSpec EnvironmentSpec::frozen(std::vector<double> x0, double b) {
    EnvironmentSpec e;
    e.preset = "frozen";
    e.p = static_cast<int>(x0.size());
    e.noise_dim = 1;
    e.drift.assign(x0.size(), Expression::constant(0.0));
    e.diffusion.assign(x0.size(), Expression::constant(0.0));
    e.x0 = std::move(x0);
    e.b = b;
    return e;
}

EnvironmentSpec EnvironmentSpec::ou(std::vector<double> x0, double b, double theta, double sigma) {
    EnvironmentSpec e;
    e.preset = "ou";
    e.p = static_cast<int>(x0.size());
    e.noise_dim = e.p;
    const auto vars = variables(e.p);
    for (int a = 0; a < e.p; ++a) {
        e.drift.push_back(Expression::parse(format_double(-theta) + "*x" + std::to_string(a + 1), vars));
        for (int c = 0; c < e.p; ++c) e.diffusion.push_back(Expression::constant(a == c ? sigma : 0.0));
    }
    e.x0 = std::move(x0);
    e.b = b;
    e.lipschitz = std::max(std::abs(theta), 0.0);
    return e;
}

EnvironmentSpec EnvironmentSpec::gbm(std::vector<double> x0, double b, double mu, double sigma) {
    EnvironmentSpec e;
    e.preset = "gbm";
    e.p = static_cast<int>(x0.size());
    e.noise_dim = e.p;
    const auto vars = variables(e.p);
    for (int a = 0; a < e.p; ++a) {
        const std::string x = "x" + std::to_string(a + 1);
        e.drift.push_back(Expression::parse(format_double(mu) + "*" + x, vars));
        for (int c = 0; c < e.p; ++c)
            e.diffusion.push_back(a == c ? Expression::parse(format_double(sigma) + "*" + x, vars) : Expression::constant(0.0));
    }
    e.x0 = std::move(x0);
    e.b = b;
    e.lipschitz = std::max(std::abs(mu), std::abs(sigma));
    return e;
}

EnvironmentSpec EnvironmentSpec::custom(const std::vector<std::string>& drift, const std::vector<std::string>& diffusion,
                                        int noise_dim, std::vector<double> x0, double b, double lipschitz) {
    EnvironmentSpec e;
    e.p = static_cast<int>(x0.size());
    e.noise_dim = noise_dim;
    const auto vars = variables(e.p);
    for (const auto& s : drift) e.drift.push_back(Expression::parse(s, vars));
    for (const auto& s : diffusion) e.diffusion.push_back(Expression::parse(s, vars));
    e.x0 = std::move(x0);
    e.b = b;
    e.lipschitz = lipschitz;
    e.validate();
    return e;
}

void EnvironmentSpec::validate() const {
    if (p < 1) throw ConfigError("domains", "environment: p must be >= 1");
    if (noise_dim < 1) throw ConfigError("domains", "environment: noise dimension must be >= 1");
    if (x0.size() != static_cast<std::size_t>(p)) throw ConfigError("domains", "environment: x0 needs p entries");
    if (drift.size() != static_cast<std::size_t>(p))
        throw ConfigError("domains", "environment: drift needs p=" + std::to_string(p) + " expressions");
    if (diffusion.size() != static_cast<std::size_t>(p * noise_dim))
        throw ConfigError("domains", "environment: diffusion needs p*p'=" + std::to_string(p * noise_dim) + " expressions");
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("domains", "environment: b must be >= 0");
    if (!(lipschitz >= 0.0) || !std::isfinite(lipschitz))
        throw ConfigError("domains", "environment: declared Lipschitz constant must be finite and >= 0");
    for (double v : x0)
        if (!std::isfinite(v)) throw ConfigError("domains", "environment: x0 must be finite");
}

EnvironmentPaths::EnvironmentPaths(TimeGrid grid, int p, std::size_t paths)
    : grid_(grid), p_(p), paths_(paths), X_(paths * (grid.steps + 1) * static_cast<std::size_t>(p), 0.0), tau_(paths, grid.steps) {}

namespace {

double norm2(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

}  // namespace

EnvironmentPaths simulate_environment(const EnvironmentSpec& env, const TimeGrid& grid, std::uint64_t seed,
                                      std::size_t n_paths, int threads) {
    env.validate();
    grid.validate();
    if (n_paths == 0) throw ConfigError("domains", "environment: need at least one path");
    EnvironmentPaths out(grid, env.p, n_paths);
    const auto p = static_cast<std::size_t>(env.p);
    const auto pp = static_cast<std::size_t>(env.noise_dim);
    const double dt = grid.dt();
    const double sq = std::sqrt(dt);
    for_chunks(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> args(p + 1), mu(p), dB(pp);
        std::normal_distribution<double> normal;
        for (std::size_t m = begin; m < end; ++m) {
            std::mt19937_64 rng(stream_seed(seed, m, streams::environment));
            auto x = out.X(m, 0);
            std::copy(env.x0.begin(), env.x0.end(), x.begin());
            std::size_t tau = grid.steps;
            if (norm2(x) < env.b) tau = 0;
            for (std::size_t j = 0; j < grid.steps; ++j) {
                args[0] = grid.time(j);
                const auto cur = out.X(m, j);
                std::copy(cur.begin(), cur.end(), args.begin() + 1);
                for (auto& v : dB) v = sq * normal(rng);
                auto nx = out.X(m, j + 1);
                for (std::size_t a = 0; a < p; ++a) {
                    double v = cur[a] + env.drift[a](args) * dt;
                    for (std::size_t c = 0; c < pp; ++c) v += env.diffusion[a * pp + c](args) * dB[c];
                    nx[a] = v;
                }
                if (tau == grid.steps && norm2(nx) < env.b) tau = j + 1;
            }
            out.set_tau(m, tau);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation along paths

namespace {

struct Stencil {
    std::vector<std::size_t> nodes;
    std::vector<double> weights;
};

// Multilinear weights of the active lattice cell containing x; nullopt-like
// empty stencil if a corner with nonzero weight is missing.
bool locate(const SpatialGrid& g, std::span<const double> x, Stencil& st) {
    const int p = g.dim();
    std::vector<long> base(static_cast<std::size_t>(p));
    std::vector<double> frac(static_cast<std::size_t>(p));
    for (int a = 0; a < p; ++a) {
        const double u = (x[static_cast<std::size_t>(a)] - g.lower(a)) / g.spacing(a);
        const auto top = static_cast<double>(g.extent(a) - 1);
        if (u < -1e-9 || u > top + 1e-9) return false;
        const double uc = std::clamp(u, 0.0, top);
        long k = static_cast<long>(std::floor(uc));
        if (k >= static_cast<long>(g.extent(a)) - 1) k = static_cast<long>(g.extent(a)) - 2;
        if (k < 0) k = 0;
        base[static_cast<std::size_t>(a)] = k;
        frac[static_cast<std::size_t>(a)] = g.extent(a) == 1 ? 0.0 : uc - static_cast<double>(k);
    }
    st.nodes.clear();
    st.weights.clear();
    std::vector<long> corner(base);
    for (std::size_t mask = 0; mask < (std::size_t{1} << p); ++mask) {
        double w = 1.0;
        for (int a = 0; a < p; ++a) {
            const bool up = (mask >> a) & 1U;
            corner[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + (up ? 1 : 0);
            const double f = frac[static_cast<std::size_t>(a)];
            w *= up ? f : 1.0 - f;
        }
        if (w == 0.0) continue;
        const std::size_t node = g.node_at(corner);
        if (node == SpatialGrid::npos) return false;
        st.nodes.push_back(node);
        st.weights.push_back(w);
    }
    return true;
}

void apply(const GriddedField& f, const Stencil& st, std::vector<double>& out) {
    const int q = f.components();
    out.assign(static_cast<std::size_t>(q), 0.0);
    for (std::size_t k = 0; k < st.nodes.size(); ++k)
        for (int r = 0; r < q; ++r) out[static_cast<std::size_t>(r)] += st.weights[k] * f(st.nodes[k], r);
}

double sup_abs(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s = std::max(s, std::abs(x));
    return s;
}

// Largest interpolated |∂^α f| per order 0..order.
std::vector<double> order_sups_at(GriddedField& f, const Stencil& st, int order) {
    std::vector<double> sups(static_cast<std::size_t>(order) + 1, 0.0);
    std::vector<double> buf;
    apply(f, st, buf);
    sups[0] = sup_abs(buf);
    if (order > 0 && f.cached_order() < order) f.cache_derivatives(order);
    for (int o = 1; o <= order; ++o)
        for (const auto& alpha : multi_indices(f.grid().dim(), o)) {
            apply(f.derivative(alpha), st, buf);
            sups[static_cast<std::size_t>(o)] = std::max(sups[static_cast<std::size_t>(o)], sup_abs(buf));
        }
    return sups;
}

}  // namespace

std::vector<double> interpolate(const GriddedField& field, std::span<const double> x) {
    Stencil st;
    if (!locate(field.grid(), x, st)) throw ExtrapolationError("domains", "point lies outside the active grid");
    std::vector<double> out;
    apply(field, st, out);
    return out;
}

std::vector<PathValues> evaluate_along_path(const TripletSeries& series, const EnvironmentPaths& env, int derivative_order,
                                            const TerminalCondition* terminal, const DriverPaths* drivers, int threads) {
    const TimeGrid& tg = series.time_grid();
    if (tg.steps != env.grid().steps || std::abs(tg.horizon - env.grid().horizon) > 1e-12)
        throw PreconditionError("domains", "environment and solution use different time grids");
    if (derivative_order < 0) throw ConfigError("domains", "derivative order must be >= 0");
    if (series.paths() != 1 && series.paths() < env.paths())
        throw PreconditionError("domains", "solution has " + std::to_string(series.paths()) + " paths, environment " +
                                               std::to_string(env.paths()));
    const LevySpec* levy = series.levy();
    std::vector<PathValues> out(env.paths());
    for_chunks(env.paths(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        Stencil st;
        for (std::size_t m = begin; m < end; ++m) {
            PathValues& pv = out[m];
            pv.path = m;
            pv.tau_step = env.tau_step(m);
            pv.stopped = pv.tau_step < tg.steps;
            for (std::size_t j = 0; j <= pv.tau_step; ++j) {
                const std::size_t sp = series.paths() == 1 || series.path_independent(j) ? 0 : m;
                FieldTriplet tr = series.realize(j, sp);
                const auto x = env.X(m, j);
                if (!locate(tr.V.grid(), x, st)) {
                    std::string where;
                    for (double v : x) where += (where.empty() ? "" : ", ") + format_double(v);
                    throw ExtrapolationError("domains", "path " + std::to_string(m) + " leaves the grid at step " +
                                                            std::to_string(j) + " (t=" + format_double(tg.time(j)) +
                                                            ", X=(" + where + "))");
                }
                PathPoint pt;
                pt.step = j;
                pt.t = tg.time(j);
                apply(tr.V, st, pt.V);
                pt.sups.push_back(order_sups_at(tr.V, st, derivative_order));
                if (!tr.Vbar.empty()) {
                    apply(tr.Vbar, st, pt.Vbar);
                    pt.sups.push_back(order_sups_at(tr.Vbar, st, derivative_order));
                } else {
                    pt.sups.emplace_back(static_cast<std::size_t>(derivative_order) + 1, 0.0);
                }
                std::vector<double> tilde(static_cast<std::size_t>(derivative_order) + 1, 0.0);
                std::vector<double> buf;
                for (std::size_t ch = 0; ch < tr.Vtilde.size(); ++ch)
                    for (std::size_t c = 0; c < tr.Vtilde[ch].size(); ++c) {
                        apply(tr.Vtilde[ch][c], st, buf);
                        pt.Vtilde.insert(pt.Vtilde.end(), buf.begin(), buf.end());
                        const double mass = levy ? levy->channels[ch].intensity() * levy->channels[ch].masses()[c] : 1.0;
                        const auto s = order_sups_at(tr.Vtilde[ch][c], st, derivative_order);
                        for (std::size_t o = 0; o < s.size(); ++o) tilde[o] += mass * s[o] * s[o];
                    }
                for (double& v : tilde) v = std::sqrt(v);
                pt.sups.push_back(std::move(tilde));
                pv.points.push_back(std::move(pt));
            }
            if (terminal && terminal->value) {
                const auto x = env.X(m, pv.tau_step);
                std::vector<double> h(pv.points.back().V.size());
                const DriverView view =
                    terminal->deterministic || !drivers ? DriverView{} : DriverView(drivers, m, pv.tau_step);
                terminal->value(x, view, h);
                for (std::size_t r = 0; r < h.size(); ++r)
                    pv.terminal_gap = std::max(pv.terminal_gap, std::abs(pv.points.back().V[r] - h[r]));
            }
        }
    }, 16);
    return out;
}

double path_norm(const std::vector<PathValues>& values, const TimeGrid& grid, const NormWeights& w) {
    w.validate();
    if (values.empty()) return 0.0;
    auto inf_norm = [&](const std::vector<double>& sups) {
        double s = 0.0, run = 0.0;
        for (int i = 1; i <= w.k_max; ++i) {
            const std::size_t j = std::min(static_cast<std::size_t>(i), sups.size() - 1);
            if (i == 1) run = sups[0];
            run = std::max(run, sups[j]);
            s += NormWeights::xi(i) * run;
        }
        return s;
    };
    const double dt = grid.dt();
    double total = 0.0;
    for (const auto& pv : values)
        for (const auto& pt : pv.points) {
            if (pt.step >= pv.tau_step) continue;
            double sq = 0.0;
            for (const auto& s : pt.sups) {
                const double n = inf_norm(s);
                sq += n * n;
            }
            total += sq * dt;
        }
    return std::sqrt(total / static_cast<double>(values.size()));
}

void write_path_csv(std::ostream& os, const std::vector<PathValues>& values, const EnvironmentPaths& env) {
    const int p = env.dim();
    const std::size_t q = values.empty() || values.front().points.empty() ? 0 : values.front().points.front().V.size();
    os << "path_id,t";
    for (int a = 1; a <= p; ++a) os << ",X" << a;
    for (std::size_t r = 1; r <= q; ++r) os << ",v" << r;
    os << ",stopped\n";
    for (const auto& pv : values)
        for (const auto& pt : pv.points) {
            os << pv.path << ',' << format_double(pt.t);
            for (double x : env.X(pv.path, pt.step)) os << ',' << format_double(x);
            for (double v : pt.V) os << ',' << format_double(v);
            os << ',' << (pv.stopped && pt.step == pv.tau_step ? 1 : 0) << '\n';
        }
}

}  // namespace bspde
