#include "bspde/finance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include <Eigen/Dense>

#include "bspde/domains.hpp"
#include "bspde/error.hpp"
#include "bspde/parallel.hpp"

namespace bspde {

namespace {

constexpr double kVxxFloor = 1e-8;

double eval(const Expression& e, double y) { return e(y); }

}  // namespace

double FinanceModel::lambda(double y) const { return (eval(beta, y) - r) / eval(sigma, y); }

double FinanceModel::delta() const { return (1.0 - gamma) / (1.0 - gamma + rho * rho * gamma); }

bool FinanceModel::factor_active() const { return !(d.is_constant() && d(0.0) == 0.0); }

void FinanceModel::validate(const std::vector<double>& ygrid) const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("finance", "risk aversion gamma must lie in (0, 1)");
    if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("finance", "rho must lie in (-1, 1)");
    if (!(b >= 1.0)) throw ConfigError("finance", "bankruptcy level b must be >= 1");
    if (!(kappa > 0.0)) throw ConfigError("finance", "volatility floor kappa must be > 0");
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("finance", "horizon T must be > 0");
    if (!(x0 > 0.0) || !std::isfinite(x0)) throw ConfigError("finance", "x0 must be > 0");
    if (!(r >= 0.0)) throw ConfigError("finance", "interest rate r must be >= 0");
    std::vector<double> ys = ygrid;
    ys.push_back(y0);
    for (double y : ys) {
        const double s = sigma(y);
        if (!(s >= kappa))
            throw ConfigError("finance", "sigma(y)=" + format_double(s) + " < kappa=" + format_double(kappa) +
                                             " at y=" + format_double(y));
        if (!std::isfinite(beta(y)) || !std::isfinite(c(y)) || !std::isfinite(d(y)))
            throw ConfigError("finance", "market coefficients are not finite at y=" + format_double(y));
    }
}

// ---------------------------------------------------------------------------
// f-PDE

double FSurface::value(double t, double yv) const {
    const double u = std::clamp(t / time.dt(), 0.0, static_cast<double>(time.steps));
    const auto j = std::min(static_cast<std::size_t>(u), time.steps - 1);
    const double ft = u - static_cast<double>(j);
    const double hy = y.size() > 1 ? y[1] - y[0] : 1.0;
    const double v = y.size() > 1 ? std::clamp((yv - y.front()) / hy, 0.0, static_cast<double>(y.size() - 1)) : 0.0;
    const auto i = y.size() > 1 ? std::min(static_cast<std::size_t>(v), y.size() - 2) : 0;
    const double fy = v - static_cast<double>(i);
    auto at_t = [&](std::size_t jj) {
        if (y.size() == 1) return at(jj, 0);
        return (1.0 - fy) * at(jj, i) + fy * at(jj, i + 1);
    };
    return (1.0 - ft) * at_t(j) + ft * at_t(j + 1);
}

double FSurface::dy(double t, double yv) const {
    if (y.size() < 3) return 0.0;
    const double hy = y[1] - y[0];
    const double lo = std::max(yv - hy, y.front());
    const double hi = std::min(yv + hy, y.back());
    return (value(t, hi) - value(t, lo)) / (hi - lo);
}

FactorGrid default_factor_grid(const FinanceModel& model) {
    FactorGrid g;
    const double w = std::max(1.0, 6.0 * std::abs(model.d(model.y0)) * std::sqrt(model.T) + std::abs(model.c(model.y0)) * model.T);
    g.y_lo = model.y0 - w;
    g.y_hi = model.y0 + w;
    return g;
}

FSurface solve_f_pde(const FinanceModel& model, const FactorGrid& grid) {
    if (grid.ny < 3) throw ConfigError("finance", "factor grid needs ny >= 3");
    if (grid.nt < 1) throw ConfigError("finance", "factor grid needs nt >= 1");
    if (!(grid.y_hi > grid.y_lo)) throw ConfigError("finance", "factor grid needs y_lo < y_hi");
    const std::size_t ny = grid.ny;
    FSurface fs;
    fs.time = TimeGrid{model.T, grid.nt};
    fs.delta = model.delta();
    const double hy = (grid.y_hi - grid.y_lo) / static_cast<double>(ny - 1);
    for (std::size_t i = 0; i < ny; ++i) fs.y.push_back(grid.y_lo + hy * static_cast<double>(i));
    model.validate(fs.y);

    // (L f)_i = lo_i (f_{i-1} − f_i) + up_i (f_{i+1} − f_i) + C_i f_i, so
    // constants with C = 0 are reproduced exactly.
    std::vector<double> lo(ny), up(ny), C(ny);
    const double g = model.gamma;
    for (std::size_t i = 0; i < ny; ++i) {
        const double y = fs.y[i];
        const double lam = model.lambda(y);
        fs.lambda.push_back(lam);
        const double dv = model.d(y);
        const double A = 0.5 * dv * dv;
        const double B = model.c(y) + model.rho * g * lam * dv / (1.0 - g);
        C[i] = g * lam * lam / (2.0 * fs.delta * (1.0 - g));
        lo[i] = A / (hy * hy) - B / (2.0 * hy);
        up[i] = A / (hy * hy) + B / (2.0 * hy);
    }
    // Zero slope: ghost f_{-1} = f_1 and f_{ny} = f_{ny-2}.
    up[0] += lo[0];
    lo[0] = 0.0;
    lo[ny - 1] += up[ny - 1];
    up[ny - 1] = 0.0;

    // Crank–Nicolson in increment form: (I − k/2 L) Δ = k L f_old.
    const std::size_t nt = grid.nt;
    const double k = fs.time.dt();
    fs.f.assign((nt + 1) * ny, 1.0);
    std::vector<double> rhs(ny), cp(ny), dp(ny), inc(ny);
    for (std::size_t step = nt; step-- > 0;) {
        const double* old = fs.f.data() + (step + 1) * ny;
        double* cur = fs.f.data() + step * ny;
        for (std::size_t i = 0; i < ny; ++i) {
            double v = C[i] * old[i];
            if (i > 0) v += lo[i] * (old[i - 1] - old[i]);
            if (i + 1 < ny) v += up[i] * (old[i + 1] - old[i]);
            rhs[i] = k * v;
        }
        for (std::size_t i = 0; i < ny; ++i) {
            const double a = -0.5 * k * lo[i];
            const double bb = 1.0 + 0.5 * k * (lo[i] + up[i] - C[i]);
            const double cc = -0.5 * k * up[i];
            const double den = i == 0 ? bb : bb - a * cp[i - 1];
            cp[i] = cc / den;
            dp[i] = (rhs[i] - (i == 0 ? 0.0 : a * dp[i - 1])) / den;
        }
        for (std::size_t i = ny; i-- > 0;) inc[i] = dp[i] - (i + 1 < ny ? cp[i] * inc[i + 1] : 0.0);
        for (std::size_t i = 0; i < ny; ++i) cur[i] = old[i] + inc[i];
        for (std::size_t i = 0; i < ny; ++i)
            if (!(cur[i] > 0.0))
                throw ResolutionError("finance", "f-PDE lost positivity at t=" + format_double(fs.time.time(step)) +
                                                     ", y=" + format_double(fs.y[i]) + "; refine the factor grid");
    }
    return fs;
}

ClosedForm closed_form_value(const FinanceModel& model, const FSurface& fs, const GridPtr& xgrid, double t, double y) {
    const double g = model.gamma;
    const double delta = fs.delta;
    const double F = fs.value(t, y);
    if (!(F > 0.0)) throw PreconditionError("finance", "closed form needs f > 0");
    const double common = delta * model.d(y) * fs.dy(t, y) * std::pow(F, delta - 1.0) / g;
    const double w[2] = {model.rho, std::sqrt(1.0 - model.rho * model.rho)};
    ClosedForm out{GriddedField(xgrid, 1), GriddedField(xgrid, 2)};
    for (std::size_t i = 0; i < xgrid->size(); ++i) {
        const double x = xgrid->node(i)[0];
        if (!(x > 0.0)) throw DomainError("finance", "closed form needs x > 0, grid has x=" + format_double(x));
        const double xg = std::pow(x, g);
        out.V(i, 0) = xg * std::pow(F, delta) / g;
        for (int l = 0; l < 2; ++l) out.Vbar(i, l) = w[l] * xg * common;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operator

namespace {

// Least-squares Chebyshev fit in z = ln x on fixed nodes, with the maps
// from node values to d/dz and d²/dz² at the nodes.
struct LogChebyshev {
    Eigen::MatrixXd fit;  // (degree+1) x n
    Eigen::MatrixXd d1;   // n x (degree+1)
    Eigen::MatrixXd d2;
};

// Coefficients of the derivative of a Chebyshev series, as a matrix.
Eigen::MatrixXd chebyshev_derivative_matrix(int degree) {
    const int n = degree + 1;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    for (int col = 0; col < n; ++col) {
        std::vector<double> c(static_cast<std::size_t>(n) + 2, 0.0), d(static_cast<std::size_t>(n) + 2, 0.0);
        c[static_cast<std::size_t>(col)] = 1.0;
        for (int k = degree; k >= 1; --k) d[k - 1] = d[k + 1] + 2.0 * k * c[k];
        d[0] *= 0.5;
        for (int r = 0; r < n; ++r) D(r, col) = d[r];
    }
    return D;
}

std::shared_ptr<const LogChebyshev> log_chebyshev(const std::vector<double>& x, int degree) {
    static std::mutex mutex;
    static std::map<std::tuple<std::size_t, double, double, int>, std::shared_ptr<const LogChebyshev>> cache;
    const auto key = std::make_tuple(x.size(), x.front(), x.back(), degree);
    {
        std::lock_guard<std::mutex> lock(mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    const auto n = static_cast<Eigen::Index>(x.size());
    const double zlo = std::log(x.front()), zhi = std::log(x.back());
    const double half = 0.5 * (zhi - zlo), mid = 0.5 * (zhi + zlo);
    Eigen::MatrixXd T(n, degree + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = (std::log(x[static_cast<std::size_t>(i)]) - mid) / half;
        T(i, 0) = 1.0;
        if (degree >= 1) T(i, 1) = s;
        for (int k = 2; k <= degree; ++k) T(i, k) = 2.0 * s * T(i, k - 1) - T(i, k - 2);
    }
    auto out = std::make_shared<LogChebyshev>();
    // Pseudo-inverse R⁻¹ Q₁ᵀ from a thin QR.
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(T);
    const Eigen::MatrixXd Q1 = qr.householderQ() * Eigen::MatrixXd::Identity(n, degree + 1);
    out->fit = qr.matrixQR().topLeftCorner(degree + 1, degree + 1).triangularView<Eigen::Upper>().solve(Q1.transpose());
    const Eigen::MatrixXd D = chebyshev_derivative_matrix(degree) / half;
    out->d1 = T * D;
    out->d2 = T * (D * D);
    std::lock_guard<std::mutex> lock(mutex);
    return cache.emplace(key, std::move(out)).first->second;
}

}  // namespace

XDerivatives x_derivatives(const FieldTriplet& tr, const XDerivativeRule& rule) {
    const GriddedField& V = tr.V;
    const std::size_t n = V.nodes();
    XDerivatives out;
    const bool has_bar = !tr.Vbar.empty();
    if (rule.kind == XDerivativeRule::Kind::finite_difference) {
        const GriddedField& Vx = V.derivative({1});
        const GriddedField& Vxx = V.derivative({2});
        out.vx.resize(n);
        out.vxx.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.vx[i] = Vx(i, 0);
            out.vxx[i] = Vxx(i, 0);
        }
        if (has_bar) {
            const GriddedField& Vbx = tr.Vbar.derivative({1});
            out.vbx.resize(n);
            for (std::size_t i = 0; i < n; ++i) out.vbx[i] = Vbx(i, 0);
        }
        return out;
    }
    const SpatialGrid& grid = V.grid();
    if (grid.dim() != 1 || grid.masked())
        throw ConfigError("finance", "log-Chebyshev derivatives need a one-dimensional box grid");
    if (rule.degree < 2 || static_cast<std::size_t>(rule.degree) >= n)
        throw ConfigError("finance", "log-Chebyshev degree must lie in [2, " + std::to_string(n - 1) + "]");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = grid.node(i)[0];
    if (!(x.front() > 0.0)) throw DomainError("finance", "log-Chebyshev derivatives need x > 0");
    const auto lc = log_chebyshev(x, rule.degree);
    auto column = [n](const GriddedField& f) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = f(i, 0);
        return v;
    };
    const Eigen::VectorXd c = lc->fit * column(V);
    const Eigen::VectorXd vz = lc->d1 * c, vzz = lc->d2 * c;
    out.vx.resize(n);
    out.vxx.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out.vx[i] = vz(k) / x[i];
        out.vxx[i] = (vzz(k) - vz(k)) / (x[i] * x[i]);
    }
    if (has_bar) {
        const Eigen::VectorXd bz = lc->d1 * (lc->fit * column(tr.Vbar));
        out.vbx.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.vbx[i] = bz(static_cast<Eigen::Index>(i)) / x[i];
    }
    return out;
}

GriddedField hjb_generator(const FieldTriplet& tr, double lambda, const XDerivativeRule& rule) {
    const XDerivatives dv = x_derivatives(tr, rule);
    double scale = 0.0;
    for (double v : dv.vxx) scale = std::max(scale, std::abs(v));
    GriddedField out(tr.V.grid_ptr(), 1);
    for (std::size_t i = 0; i < dv.vxx.size(); ++i) {
        const double vxx = dv.vxx[i];
        if (!(std::abs(vxx) >= kVxxFloor * scale) || scale == 0.0)
            throw SingularityError("finance", "|V_xx| = " + format_double(std::abs(vxx)) + " below 1e-8 * " +
                                                  format_double(scale) + " at node " + std::to_string(i) +
                                                  " (x=" + format_double(tr.V.grid().node(i)[0]) + "): concavity lost");
        const double num = dv.vx[i] * lambda + (dv.vbx.empty() ? 0.0 : dv.vbx[i]);
        out(i, 0) = num * num / (2.0 * vxx);
    }
    return out;
}

namespace {

// Deterministic factor path (d ≡ 0): RK4 on dY = c(Y) dt.
double factor_ode(const FinanceModel& model, double t) {
    if (model.c.is_constant()) return model.y0 + model.c(0.0) * t;
    const int n = std::max(16, static_cast<int>(std::ceil(256.0 * t)));
    const double h = t / n;
    double y = model.y0;
    for (int s = 0; s < n; ++s) {
        const double k1 = model.c(y);
        const double k2 = model.c(y + 0.5 * h * k1);
        const double k3 = model.c(y + 0.5 * h * k2);
        const double k4 = model.c(y + h * k3);
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    }
    return y;
}

}  // namespace

double factor_at(const FinanceModel& model, const DriverView& view) {
    if (!model.factor_active()) return factor_ode(model, view.time());
    if (view.empty() || view.step() == 0) return model.y0;
    const double s = std::sqrt(1.0 - model.rho * model.rho);
    const auto W = view.W();
    if (model.c.is_constant() && model.d.is_constant())
        return model.y0 + model.c(0.0) * view.time() + model.d(0.0) * (model.rho * W[0] + s * W[1]);
    const double dt = view.time() / static_cast<double>(view.step());
    double y = model.y0;
    for (std::size_t k = 0; k < view.step(); ++k) {
        const auto a = view.W_at(k);
        const auto b = view.W_at(k + 1);
        y += model.c(y) * dt + model.d(y) * (model.rho * (b[0] - a[0]) + s * (b[1] - a[1]));
    }
    return y;
}

OperatorPair build_fbspde_operator(const FinanceModel& model, const XDerivativeRule& rule) {
    model.validate();
    OperatorPair op;
    op.name = "finance";
    op.dims = ModelDims{1, 1, 2, 0};
    op.k = 2;
    op.m = 1;
    op.linear = false;
    op.adaptedness = model.factor_active() ? Adaptedness::path_functional : Adaptedness::deterministic;
    op.drift = [model, rule](const OperatorContext& ctx, const FieldTriplet& tr) {
        double y = model.y0;
        if (ctx.drivers.empty() && !model.factor_active())
            y = factor_ode(model, ctx.t);
        else if (!ctx.drivers.empty())
            y = factor_at(model, ctx.drivers);
        GriddedField out = hjb_generator(tr, model.lambda(y), rule);
        out *= -1.0;
        return out;
    };
    // Linearised rate of the CRRA ansatz: L(x^γ a) = γλ²/(2δ(1−γ)) x^γ a.
    const FactorGrid fg = default_factor_grid(model);
    double kd = 0.0;
    for (std::size_t i = 0; i < fg.ny; ++i) {
        const double y = fg.y_lo + (fg.y_hi - fg.y_lo) * static_cast<double>(i) / static_cast<double>(fg.ny - 1);
        const double lam = model.lambda(y);
        kd = std::max(kd, model.gamma * lam * lam / (2.0 * model.delta() * (1.0 - model.gamma)));
    }
    op.lipschitz = kd;
    return op;
}

GriddedField optimal_portfolio(const FieldTriplet& tr, const FinanceModel& model, double y,
                               const XDerivativeRule& rule) {
    const XDerivatives dv = x_derivatives(tr, rule);
    const double lam = model.lambda(y);
    const double sig = model.sigma(y);
    GriddedField out(tr.V.grid_ptr(), 1);
    for (std::size_t i = 0; i < out.nodes(); ++i) {
        const double vxx = dv.vxx[i];
        if (!(vxx < 0.0))
            throw SingularityError("finance", "V_xx = " + format_double(vxx) + " >= 0 at x=" +
                                                  format_double(tr.V.grid().node(i)[0]) + ": concavity lost");
        out(i, 0) = -(dv.vx[i] * lam + (dv.vbx.empty() ? 0.0 : dv.vbx[i])) / (sig * vxx);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policies and wealth

PortfolioPolicy closed_form_policy(const FinanceModel& model, const FSurface& fs, const GridPtr& xgrid) {
    PortfolioPolicy p;
    p.xgrid = xgrid;
    p.risky = [model, fs](const DriverView& view, double x) {
        const double t = view.time();
        const double y = factor_at(model, view);
        const double F = fs.value(t, y);
        const double hedge = model.rho * fs.delta * model.d(y) * fs.dy(t, y) / F;
        return x * (model.lambda(y) + hedge) / (model.sigma(y) * (1.0 - model.gamma));
    };
    return p;
}

PortfolioPolicy solution_policy(const FinanceModel& model, const SolutionSeries& solution,
                                const XDerivativeRule& rule) {
    const std::size_t n = solution.time_grid().steps;
    const GridPtr grid = solution.problem().grid();
    // Path-independent steps are tabulated up front.
    auto table = std::make_shared<std::vector<GriddedField>>(n);
    auto policy_at = [model, rule](const SolutionSeries& s, std::size_t j, std::size_t path, const DriverView& view) {
        FieldTriplet tr = s.realize(j, path);
        if (rule.kind == XDerivativeRule::Kind::finite_difference) {
            tr.V.cache_derivatives(2);
            if (!tr.Vbar.empty()) tr.Vbar.cache_derivatives(1);
        }
        return optimal_portfolio(tr, model, factor_at(model, view), rule);
    };
    for (std::size_t j = 0; j < n; ++j)
        if (solution.path_independent(j))
            (*table)[j] = policy_at(solution, j, 0, DriverView(&solution.problem().drivers(), 0, j));
    auto sol = std::make_shared<SolutionSeries>(solution);
    PortfolioPolicy p;
    p.xgrid = grid;
    p.risky = [table, sol, policy_at](const DriverView& view, double x) {
        const std::size_t j = view.step();
        const double xs[1] = {x};
        if (j < table->size() && !(*table)[j].empty()) return interpolate((*table)[j], xs)[0];
        return interpolate(policy_at(*sol, j, view.path(), view), xs)[0];
    };
    return p;
}

PortfolioPolicy zero_policy(const GridPtr& xgrid) {
    PortfolioPolicy p;
    p.xgrid = xgrid;
    p.risky = [](const DriverView&, double) { return 0.0; };
    return p;
}

WealthPaths simulate_wealth(const PortfolioPolicy& policy, const FinanceModel& model, const DriverPaths& drivers,
                            std::size_t n_paths, int threads) {
    if (n_paths > drivers.paths())
        throw ConfigError("finance", "wealth simulation asks for " + std::to_string(n_paths) + " paths, drivers have " +
                                         std::to_string(drivers.paths()));
    const TimeGrid& tg = drivers.grid();
    const double dt = tg.dt();
    const double hi = policy.xgrid->lower(0) + policy.xgrid->spacing(0) * static_cast<double>(policy.xgrid->extent(0) - 1);
    WealthPaths w;
    w.grid = tg;
    w.paths = n_paths;
    w.X.assign(n_paths * (tg.steps + 1), 0.0);
    w.tau.assign(n_paths, tg.steps);
    std::vector<double> adm(chunk_count(n_paths), 0.0);
    for_chunks(n_paths, threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            double x = model.x0;
            std::size_t tau = x < model.b ? 0 : tg.steps;
            w.X[m * (tg.steps + 1)] = x;
            for (std::size_t j = 0; j < tg.steps; ++j) {
                if (j >= tau) {
                    w.X[m * (tg.steps + 1) + j + 1] = x;
                    continue;
                }
                const DriverView view(&drivers, m, j);
                const double y = factor_at(model, view);
                const double pi = policy.risky(view, x);
                const double sp = model.sigma(y) * pi;
                adm[chunk] += sp * sp * dt;
                x += sp * (model.lambda(y) * dt + drivers.dW(m, j)[0]);
                if (x > hi + 1e-12)
                    throw ExtrapolationError("finance", "wealth path " + std::to_string(m) + " reached x=" + format_double(x) +
                                                            " above the policy grid at step " + std::to_string(j + 1));
                if (x < model.b) tau = j + 1;
                w.X[m * (tg.steps + 1) + j + 1] = x;
            }
            w.tau[m] = tau;
        }
    });
    for (double a : adm) w.admissibility += a;
    w.admissibility /= static_cast<double>(std::max<std::size_t>(n_paths, 1));
    return w;
}

// ---------------------------------------------------------------------------
// Validation

FinanceRun validate_finance(const FinanceModel& model, const FinanceValidationConfig& cfg) {
    model.validate();
    const double x_max = cfg.x_max > 0.0 ? cfg.x_max : 10.0 * model.x0;
    const double cmp_max = cfg.compare_max > 0.0 ? cfg.compare_max : 5.0 * model.x0;
    if (!(x_max > model.b)) throw ConfigError("finance", "x_max must exceed b");
    if (cfg.resolution < 1) throw ConfigError("finance", "x resolution must be >= 1");
    const auto points = static_cast<int>(std::lround((x_max - model.b) * cfg.resolution)) + 1;
    GridPtr xgrid = make_grid(DomainSpec::box({{model.b, x_max}}, points));

    FactorGrid fg = cfg.factor.ny == 0 ? default_factor_grid(model) : cfg.factor;
    if (cfg.factor.ny == 0) fg.nt = cfg.factor.nt;
    fg.nt = std::max(fg.nt, 4 * cfg.steps);

    FinanceRun run;
    run.fsurface = solve_f_pde(model, fg);
    FinanceReport& rep = run.report;
    rep.delta = model.delta();
    rep.merton_ratio = (model.beta(model.y0) - model.r) / (std::pow(model.sigma(model.y0), 2) * (1.0 - model.gamma));

    const ModelDims dims{1, 1, 2, 0};
    const TimeGrid tg{model.T, cfg.steps};
    run.drivers = std::make_shared<const DriverPaths>(simulate_drivers(dims, LevySpec{}, tg, cfg.seed, cfg.paths, cfg.picard.threads));

    TerminalCondition H;
    H.name = "crra";
    const double g = model.gamma;
    H.value = [g](std::span<const double> x, const DriverView&, std::span<double> out) { out[0] = std::pow(x[0], g) / g; };
    H.derivative = [g](const MultiIndex& a, std::span<const double> x, const DriverView&, std::span<double> out) {
        double coef = 1.0 / g;
        for (int k = 0; k < a[0]; ++k) coef *= g - k;
        out[0] = coef * std::pow(x[0], g - a[0]);
        return true;
    };
    run.problem = std::make_shared<const Problem>(xgrid, dims, LevySpec{}, *run.drivers, H, cfg.picard.basis);
    const OperatorPair op = build_fbspde_operator(model, cfg.derivatives);

    PicardConfig pc = cfg.picard;
    pc.init = PicardConfig::Init::terminal;  // the zero iterate has V_xx = 0
    pc.standard_errors = true;
    const auto start = std::chrono::steady_clock::now();
    try {
        PicardResult res = picard_solve(op, run.problem, pc);
        rep.diagnostics = res.diagnostics;
        run.solution = std::make_shared<const SolutionSeries>(std::move(res.solution));
    } catch (const DivergedError& e) {
        rep.diagnostics.warnings.push_back(std::string("diverged: ") + e.what());
    } catch (const SingularityError& e) {
        rep.diagnostics.warnings.push_back(std::string("singular: ") + e.what());
    }
    rep.seconds_solve = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!run.solution) return run;
    const SolutionSeries& sol = *run.solution;

    // Pathwise comparison with the closed form.
    const std::size_t M = run.drivers->paths();
    const std::size_t sample = std::max<std::size_t>(1, std::min(cfg.error_paths, M));
    std::size_t x0_node = 0;
    for (std::size_t i = 0; i < xgrid->size(); ++i)
        if (std::abs(xgrid->node(i)[0] - model.x0) < std::abs(xgrid->node(x0_node)[0] - model.x0)) x0_node = i;
    for (std::size_t j = 0; j <= tg.steps; ++j) {
        const std::size_t paths = sol.path_independent(j) && !model.factor_active() ? 1 : sample;
        for (std::size_t m = 0; m < paths; ++m) {
            const FieldTriplet tr = sol.realize(j, m);
            const double y = factor_at(model, DriverView(run.drivers.get(), m, j));
            const ClosedForm cf = closed_form_value(model, run.fsurface, xgrid, tg.time(j), y);
            for (std::size_t i = 0; i < xgrid->size(); ++i) {
                if (xgrid->node(i)[0] > cmp_max + 1e-12) continue;
                rep.v_max_rel_error = std::max(rep.v_max_rel_error, std::abs(tr.V(i, 0) - cf.V(i, 0)) / std::abs(cf.V(i, 0)));
                if (j < tg.steps)
                    for (int l = 0; l < 2; ++l)
                        rep.vbar_max_abs_error = std::max(rep.vbar_max_abs_error, std::abs(tr.Vbar(i, l) - cf.Vbar(i, l)));
            }
        }
    }

    // Time/path average of V̄₁ at x0 and its standard error (steps are
    // martingale increments, hence uncorrelated).
    const auto& se = sol.vbar_standard_errors();
    double var = 0.0;
    for (std::size_t j = 0; j < tg.steps; ++j) {
        rep.vbar1_mean += sol.mean(j).Vbar(x0_node, 0);
        if (!se.empty() && se[j].size() > 0) var += std::pow(se[j](static_cast<Eigen::Index>(x0_node * 2)), 2);
    }
    rep.vbar1_mean /= static_cast<double>(tg.steps);
    rep.vbar1_se = std::sqrt(var) / static_cast<double>(tg.steps);

    // Merton proportion π*₁/x at t = 0.
    try {
        FieldTriplet tr = sol.mean(0);
        if (cfg.derivatives.kind == XDerivativeRule::Kind::finite_difference) {
            tr.V.cache_derivatives(2);
            tr.Vbar.cache_derivatives(1);
        }
        const GriddedField pi = optimal_portfolio(tr, model, model.y0, cfg.derivatives);
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < xgrid->size(); ++i) {
            const double x = xgrid->node(i)[0];
            if (x > cmp_max + 1e-12) continue;
            lo = std::min(lo, pi(i, 0) / x);
            hi = std::max(hi, pi(i, 0) / x);
        }
        rep.merton_spread = hi - lo;
    } catch (const SingularityError& e) {
        rep.merton_spread = std::numeric_limits<double>::infinity();
        rep.diagnostics.warnings.push_back(std::string("portfolio: ") + e.what());
    }

    rep.residual_rms = reconstruct_forward(sol, op, pc.threads, sample).rms;

    rep.within_tolerance = rep.diagnostics.converged && rep.v_max_rel_error <= cfg.v_tolerance &&
                           std::isfinite(rep.diagnostics.cauchy_tail);

    const std::size_t wp = std::min(cfg.wealth_paths, M);
    if (wp > 0) {
        try {
            run.wealth = simulate_wealth(solution_policy(model, sol, cfg.derivatives), model, *run.drivers, wp, pc.threads);
        } catch (const Error& e) {
            // ExtrapolationError (path left the grid) or SingularityError
            rep.diagnostics.warnings.push_back(std::string("wealth: ") + e.what());
            rep.tau_fraction = rep.tau_mean = rep.admissibility = std::numeric_limits<double>::quiet_NaN();
            return run;
        }
        std::size_t stopped = 0;
        double tau_sum = 0.0;
        for (std::size_t m = 0; m < wp; ++m) {
            stopped += run.wealth.tau[m] < tg.steps ? 1 : 0;
            tau_sum += tg.time(run.wealth.tau[m]);
        }
        rep.tau_fraction = static_cast<double>(stopped) / static_cast<double>(wp);
        rep.tau_mean = tau_sum / static_cast<double>(wp);
        rep.admissibility = run.wealth.admissibility;
    }
    return run;
}

}  // namespace bspde
