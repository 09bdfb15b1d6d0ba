#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/drivers.hpp"
#include "bspde/fields.hpp"
#include "bspde/operators.hpp"
#include "bspde/regression.hpp"

namespace bspde {

/// H(x) of Eq. (1): a q-vector per node, possibly depending on the driver
/// state at T.
struct TerminalCondition {
    std::string name = "terminal";
    bool deterministic = true;
    std::function<void(std::span<const double> x, const DriverView& at_T, std::span<double> out)> value;
    /// Optional exact spatial derivatives; returns false when not available,
    /// in which case finite differences of the gridded H are used.
    std::function<bool(const MultiIndex& alpha, std::span<const double> x, const DriverView& at_T, std::span<double> out)>
        derivative;
};

TerminalCondition zero_terminal(int q);

/// q expressions in x1..xp, W1..Wd and L1..Lh (driver values at T). The
/// condition is deterministic when no expression reads W or L.
TerminalCondition expression_terminal(const std::vector<std::string>& exprs, const ModelDims& dims);

/// Everything a Picard solve shares across iterations: grid, dimensions,
/// jump specification, driver paths, regression plan and terminal values.
class Problem {
public:
    Problem(GridPtr grid, ModelDims dims, LevySpec levy, const DriverPaths& drivers, TerminalCondition terminal,
            const BasisConfig& basis);

    const GridPtr& grid() const noexcept { return grid_; }
    const ModelDims& dims() const noexcept { return dims_; }
    const LevySpec& levy() const noexcept { return levy_; }
    const DriverPaths& drivers() const noexcept { return *drivers_; }
    const RegressionPlan& plan() const noexcept { return plan_; }
    const TerminalCondition& terminal() const noexcept { return terminal_; }
    const TimeGrid& time_grid() const noexcept { return drivers_->grid(); }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    /// Column layout of a coefficient row: V (N q), V̄ (N q d), then Ṽ per global cell (N q each).
    std::size_t width_v() const noexcept { return grid_->size() * static_cast<std::size_t>(dims_.q); }
    std::size_t width_bar() const noexcept { return width_v() * static_cast<std::size_t>(dims_.d); }
    std::size_t width() const noexcept { return width_v() + width_bar() + plan_.total_cells() * width_v(); }

    /// H on the grid: one row if deterministic, else one row per path.
    const std::shared_ptr<const Eigen::MatrixXd>& terminal_values() const noexcept { return terminal_values_; }
    /// ∂^α H on the grid, same row convention.
    std::shared_ptr<const Eigen::MatrixXd> terminal_derivative(const MultiIndex& alpha) const;

    FieldTriplet unpack(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    Eigen::RowVectorXd pack(const FieldTriplet& t) const;

private:
    GridPtr grid_;
    ModelDims dims_;
    LevySpec levy_;
    const DriverPaths* drivers_;
    TerminalCondition terminal_;
    std::vector<std::string> warnings_;
    RegressionPlan plan_;
    std::shared_ptr<const Eigen::MatrixXd> terminal_values_;
};

using ProblemPtr = std::shared_ptr<const Problem>;

/// Projections of L and J at an iterate, per step, in coefficient form
/// (nb_j × width_v and nb_j × width_bar).
struct Generator {
    std::vector<Eigen::MatrixXd> drift;
    std::vector<Eigen::MatrixXd> diffusion;
    std::vector<char> path_independent;
};

/// A solution in regression-coefficient form: at step j < n every path's
/// triplet is φ_j(path) · C_j; at step n it is scale · H(path).
class SolutionSeries final : public TripletSeries {
public:
    /// The zero series.
    explicit SolutionSeries(ProblemPtr problem);

    const TimeGrid& time_grid() const override { return problem_->time_grid(); }
    std::size_t paths() const override { return problem_->drivers().paths(); }
    const LevySpec* levy() const override { return &problem_->levy(); }
    FieldTriplet realize(std::size_t step, std::size_t path) const override;
    bool path_independent(std::size_t step) const override;

    const Problem& problem() const noexcept { return *problem_; }
    const ProblemPtr& problem_ptr() const noexcept { return problem_; }
    const Eigen::MatrixXd& coefficients(std::size_t j) const noexcept { return coef_[j]; }
    double terminal_scale() const noexcept { return terminal_scale_; }

    /// Coefficient row for one path at step j (j < n), or the terminal row.
    Eigen::RowVectorXd row(std::size_t step, std::size_t path) const;
    /// Path average of the triplet at a step.
    FieldTriplet mean(std::size_t step) const;
    /// Monte Carlo standard error of the V̄ regression target per column at
    /// step j (empty unless requested in the solve).
    const std::vector<Eigen::RowVectorXd>& vbar_standard_errors() const noexcept { return vbar_se_; }

    SolutionSeries operator-(const SolutionSeries& other) const;

private:
    friend SolutionSeries backward_sweep(const ProblemPtr&, std::shared_ptr<const Eigen::MatrixXd>, double,
                                         const Generator&, int, bool);

    ProblemPtr problem_;
    std::vector<Eigen::MatrixXd> coef_;
    std::vector<char> pi_;
    std::shared_ptr<const Eigen::MatrixXd> terminal_;
    double terminal_scale_ = 0.0;
    std::vector<Eigen::RowVectorXd> vbar_se_;
};

struct PicardConfig {
    double gamma = 0.0;  // <= 0 selects default_gamma
    int max_iters = 20;
    double tol = 1e-6;
    BasisConfig basis;
    int c_max = 0;       // derivative-system order propagated on the final iterate
    int diag_k_max = 2;  // k truncation of the iteration norm
    enum class Init { zero, terminal } init = Init::zero;
    int threads = 1;
    bool standard_errors = false;

    void validate() const;
    double resolved_gamma(double lipschitz, double horizon) const;
};

/// γ = max(1, 12 K_D⁴ (T + 1)), which makes γ̂ (T + 1) K_D² <= 1/8 < 1/4.
double default_gamma(double lipschitz, double horizon);
/// γ̂ = 3 K_D² / (2γ).
double gamma_hat(double lipschitz, double gamma);

/// L, J evaluated at U and projected on the step bases. Deterministic
/// linear operators act on coefficient rows; deterministic operators on
/// path-independent steps are evaluated once; otherwise per path.
Generator evaluate_generator(const OperatorPair& op, const SolutionSeries& U, int threads = 1);

/// One application of the solution map: backward from V(T) = H,
///   V(t_j)  = Ê_j[V(t_{j+1})] + Δt Ê_j[L(t_j, U)]
///   V̄(t_j)  = Ê_j[J(t_j, U)] + Ê_j[ΔW (V(t_{j+1}) − Ê_j V(t_{j+1}))] / Δt
///   Ṽ(t_j)  = Ê_j[ΔÑ (V(t_{j+1}) − Ê_j V(t_{j+1}))] / (λ ν(cell) Δt)
/// Throws DivergedError on non-finite values.
SolutionSeries martingale_step(const OperatorPair& op, const SolutionSeries& U, const PicardConfig& cfg,
                               int iteration = 0, Generator* used = nullptr);

/// Backward sweep with a given generator and terminal rows.
SolutionSeries backward_sweep(const ProblemPtr& problem, std::shared_ptr<const Eigen::MatrixXd> terminal, double scale,
                              const Generator& gen, int iteration, bool standard_errors);

/// For every multi-index of order 1..c, the differentiated system: the same
/// sweep with terminal ∂^α H and generator rows replaced by their ∂^α.
std::map<MultiIndex, SolutionSeries> propagate_derivative_system(const OperatorPair& op, const SolutionSeries& U,
                                                                 const PicardConfig& cfg, int c,
                                                                 const Generator* gen = nullptr);

struct IterationRecord {
    int iteration = 0;
    double delta = 0.0;
    double ratio = 0.0;    // NaN for the first iteration
    double seconds = 0.0;  // wall time; kept out of reproducible outputs
};

struct PicardDiagnostics {
    std::vector<IterationRecord> iterations;
    double gamma = 0.0;
    double gamma_hat = 0.0;
    double lipschitz = 0.0;
    double s_hat = 0.0;        // max_i Δ_i / (Δ_{i-1} + Δ_{i-2})
    double cauchy_tail = 0.0;  // s/(1-2s) (2Δ_2 + Δ_1), +inf when s >= 1/2
    bool converged = false;
    bool aborted = false;
    int iterations_used = 0;
    std::vector<std::string> warnings;
};

struct PicardResult {
    SolutionSeries solution;
    PicardDiagnostics diagnostics;
    std::map<MultiIndex, SolutionSeries> derivatives;
};

/// Iterate U^{i+1} = Ξ(U^i) until Δ_i = ‖U^{i+1} − U^i‖ <= tol or max_iters;
/// abort after three consecutive ratios > 1. Returns the iterate with the
/// smallest Δ when not converged.
PicardResult picard_solve(const OperatorPair& op, const ProblemPtr& problem, const PicardConfig& cfg);

/// Cauchy-series estimate from a Δ sequence.
void cauchy_estimate(PicardDiagnostics& diag);

struct ForwardResidual {
    double rms = 0.0;
    std::vector<double> per_path;  // RMS over nodes and components
};

/// V(0) − Σ L Δt − Σ (J − V̄) ΔW + Σ Ṽ ΔÑ along each path, compared with H.
/// max_paths > 0 limits the check to the first max_paths paths.
ForwardResidual reconstruct_forward(const SolutionSeries& solution, const OperatorPair& op, int threads = 1,
                                    std::size_t max_paths = 0);

}  // namespace bspde
