#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bspde/expression.hpp"
#include "bspde/fields.hpp"
#include "bspde/operators.hpp"
#include "bspde/picard.hpp"

namespace bspde {

/// Two-asset market with a random factor:
///   dS = S β(Y) dt + S σ(Y) dW₁,   dY = c(Y) dt + d(Y)(ρ dW₁ + sqrt(1−ρ²) dW₂),
/// CRRA utility x^γ/γ and bankruptcy level b. Coefficients are expressions in y.
struct FinanceModel {
    double r = 0.0;
    Expression beta = Expression::constant(0.06);
    Expression sigma = Expression::constant(0.3);
    Expression c = Expression::constant(0.0);
    Expression d = Expression::constant(0.0);
    double rho = 0.0;
    double gamma = 0.5;  // risk aversion exponent
    double b = 1.0;
    double kappa = 1e-3;  // volatility floor
    double T = 1.0;
    double x0 = 2.0;
    double y0 = 0.0;

    static std::vector<std::string> variables() { return {"y"}; }
    /// Market price of risk (β(y) − r)/σ(y).
    double lambda(double y) const;
    double delta() const;
    /// d is not identically zero.
    bool factor_active() const;
    /// Parameter invariants, plus σ >= κ on the given factor nodes.
    void validate(const std::vector<double>& ygrid = {}) const;
};

/// f(t, y) on a uniform time × factor grid.
struct FSurface {
    TimeGrid time;
    std::vector<double> y;
    std::vector<double> f;  // [j * ny + i]
    double delta = 1.0;
    std::vector<double> lambda;  // λ(y_i)

    std::size_t ny() const noexcept { return y.size(); }
    double at(std::size_t j, std::size_t i) const noexcept { return f[j * y.size() + i]; }
    /// Bilinear interpolation of f and of its centred y-derivative; t and y
    /// are clamped to the grid.
    double value(double t, double yv) const;
    double dy(double t, double yv) const;
};

struct FactorGrid {
    double y_lo = -1.0;
    double y_hi = 1.0;
    std::size_t ny = 201;
    std::size_t nt = 256;
};

/// y0 ± max(1, 6 |d(y0)| sqrt(T) + |c(y0)| T).
FactorGrid default_factor_grid(const FinanceModel& model);

/// Crank–Nicolson for
///   f_t + ½d² f_yy + (c + ργλd/(1−γ)) f_y + γλ² f/(2δ(1−γ)) = 0,  f(T) = 1,
/// zero-slope lateral boundaries. ResolutionError if f becomes nonpositive.
FSurface solve_f_pde(const FinanceModel& model, const FactorGrid& grid);

/// V = x^γ f^δ / γ and V̄ = (ρ, sqrt(1−ρ²)) δ x^γ d f_y f^{δ−1} / γ at (t, y)
/// on an x grid. V has one component, V̄ two (one per Brownian column).
struct ClosedForm {
    GriddedField V;
    GriddedField Vbar;
};
ClosedForm closed_form_value(const FinanceModel& model, const FSurface& fs, const GridPtr& xgrid, double t, double y);

/// How V and V̄₁ are differentiated in x.
///
/// finite_difference reads the cached grid differences. log_chebyshev fits a
/// Chebyshev series of the given degree in z = ln x by least squares and
/// differentiates it; the CRRA family x^γ a(t) is smooth in z, and unlike
/// grid differences the fit does not feed node-scale noise back into the
/// Picard iteration (with k = 2 each sweep multiplies such noise by ~1/h²).
struct XDerivativeRule {
    enum class Kind { finite_difference, log_chebyshev };
    Kind kind = Kind::log_chebyshev;
    int degree = 10;
};

/// V_x, V_xx and V̄_{1,x} per node (vbx empty when V̄ is).
struct XDerivatives {
    std::vector<double> vx, vxx, vbx;
};
/// finite_difference needs V cached to order 2 and V̄ to order 1.
/// log_chebyshev needs a one-dimensional box grid with x > 0.
XDerivatives x_derivatives(const FieldTriplet& tr, const XDerivativeRule& rule = {});

/// (V_x λ + V̄_{1,x})² / (2 V_xx), the drift of V in dV = (·) dt + V̄ dW.
/// Throws SingularityError when |V_xx| < 1e-8 max|V_xx| at some node.
GriddedField hjb_generator(const FieldTriplet& tr, double lambda, const XDerivativeRule& rule = {});

/// Operator pair for picard_solve: drift −hjb_generator at λ(Y(t)), J = 0,
/// k = 2, m = 1, p = q = 1, d = 2, no jumps. Y(t) is rebuilt from the
/// Brownian path by Euler steps, so the pair is path-functional unless d ≡ 0.
OperatorPair build_fbspde_operator(const FinanceModel& model, const XDerivativeRule& rule = {});

/// Factor value at step j along one driver path (Euler on the time grid).
double factor_at(const FinanceModel& model, const DriverView& view);

/// π*₁ = −(V_x λ + V̄_{1,x}) / (σ V_xx) per node: the present value held in
/// the stock; π*₀ = x − π*₁. SingularityError where V_xx >= 0.
GriddedField optimal_portfolio(const FieldTriplet& tr, const FinanceModel& model, double y,
                               const XDerivativeRule& rule = {});

/// Risky allocation at (driver path and step, wealth). Zero after
/// bankruptcy is applied by simulate_wealth.
struct PortfolioPolicy {
    GridPtr xgrid;
    std::function<double(const DriverView& at, double x)> risky;
};

/// Merton-type policy from the closed form at the factor path values.
PortfolioPolicy closed_form_policy(const FinanceModel& model, const FSurface& fs, const GridPtr& xgrid);
/// Policy read off a solved series.
PortfolioPolicy solution_policy(const FinanceModel& model, const SolutionSeries& solution,
                                const XDerivativeRule& rule = {});
PortfolioPolicy zero_policy(const GridPtr& xgrid);

struct WealthPaths {
    TimeGrid grid;
    std::size_t paths = 0;
    std::vector<double> X;           // [path * (steps+1) + j]
    std::vector<std::size_t> tau;    // bankruptcy step, steps if none
    double admissibility = 0.0;      // E ∫_0^τ (σ π₁)² dt
    double x(std::size_t path, std::size_t j) const noexcept { return X[path * (grid.steps + 1) + j]; }
};

/// Euler on dX = σ π₁ (λ dt + dW₁) using the drivers' W₁, frozen at the
/// first grid time with X < b. ExtrapolationError if X leaves the policy grid.
WealthPaths simulate_wealth(const PortfolioPolicy& policy, const FinanceModel& model, const DriverPaths& drivers,
                            std::size_t n_paths, int threads = 1);

struct FinanceValidationConfig {
    double x_max = 0.0;       // <= 0 selects 10 x0
    double compare_max = 0.0; // <= 0 selects 5 x0
    int resolution = 64;      // x nodes per unit length
    std::size_t steps = 64;
    std::size_t paths = 1000;
    std::uint64_t seed = 0;
    PicardConfig picard;
    XDerivativeRule derivatives;
    FactorGrid factor;         // ny = 0 selects default_factor_grid
    double v_tolerance = 0.02;
    std::size_t wealth_paths = 1000;
    std::size_t error_paths = 256;  // paths sampled for the pathwise error
};

struct FinanceReport {
    double delta = 1.0;
    double v_max_rel_error = 0.0;
    double vbar_max_abs_error = 0.0;
    double vbar1_mean = 0.0;    // time/path average of V̄₁ at x0
    double vbar1_se = 0.0;
    double merton_spread = 0.0; // max − min of π*₁/x at t = 0 on the compare window
    double merton_ratio = 0.0;  // (β−r)/(σ²(1−γ)) at y0
    double residual_rms = 0.0;
    double tau_fraction = 0.0;  // share of wealth paths bankrupt before T
    double tau_mean = 0.0;
    double admissibility = 0.0;
    bool within_tolerance = false;
    PicardDiagnostics diagnostics;
    double seconds_solve = 0.0;
};

struct FinanceRun {
    FinanceReport report;
    std::shared_ptr<const DriverPaths> drivers;
    ProblemPtr problem;
    std::shared_ptr<const SolutionSeries> solution;
    FSurface fsurface;
    WealthPaths wealth;
};

/// Solve the value-function equation with terminal x^γ/γ on [b, x_max] and
/// compare with the closed form on [b, compare_max].
FinanceRun validate_finance(const FinanceModel& model, const FinanceValidationConfig& cfg);

}  // namespace bspde
