#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bspde/expression.hpp"
#include "bspde/fields.hpp"
#include "bspde/picard.hpp"

namespace bspde {

/// Grids for D_n = {b <= |x| <= n}, n = floor(b)+1 .. n_max, on one lattice
/// of step 1/resolution. Every node of D_n is a node of D_{n+1}.
std::vector<GridPtr> annulus_family(double b, int n_max, int p, int resolution);

/// dX = μ(t, X) dt + σ(t, X) dB with B a p'-dimensional Brownian motion
/// independent of the solution drivers, X(0) = x0, stopped when |X| < b.
struct EnvironmentSpec {
    std::string preset = "custom";
    int p = 1;
    int noise_dim = 1;                  // p'
    std::vector<Expression> drift;      // p expressions in t, x1..xp
    std::vector<Expression> diffusion;  // p*p' expressions, row-major
    std::vector<double> x0;
    double b = 0.0;
    double lipschitz = 0.0;  // declared constant of μ and σ

    static EnvironmentSpec frozen(std::vector<double> x0, double b);
    /// dX = −θ X dt + σ dB (componentwise).
    static EnvironmentSpec ou(std::vector<double> x0, double b, double theta, double sigma);
    /// dX = μ X dt + σ X dB (componentwise).
    static EnvironmentSpec gbm(std::vector<double> x0, double b, double mu, double sigma);
    static EnvironmentSpec custom(const std::vector<std::string>& drift, const std::vector<std::string>& diffusion,
                                  int noise_dim, std::vector<double> x0, double b, double lipschitz);

    static std::vector<std::string> variables(int p);
    void validate() const;
};

class EnvironmentPaths {
public:
    EnvironmentPaths(TimeGrid grid, int p, std::size_t paths);

    const TimeGrid& grid() const noexcept { return grid_; }
    int dim() const noexcept { return p_; }
    std::size_t paths() const noexcept { return paths_; }
    std::span<const double> X(std::size_t path, std::size_t j) const noexcept {
        return {X_.data() + (path * (grid_.steps + 1) + j) * static_cast<std::size_t>(p_), static_cast<std::size_t>(p_)};
    }
    std::span<double> X(std::size_t path, std::size_t j) noexcept {
        return {X_.data() + (path * (grid_.steps + 1) + j) * static_cast<std::size_t>(p_), static_cast<std::size_t>(p_)};
    }
    /// Index of the first grid time with |X| < b, or `steps` when there is none.
    std::size_t tau_step(std::size_t path) const noexcept { return tau_[path]; }
    double tau(std::size_t path) const noexcept { return grid_.time(tau_[path]); }
    void set_tau(std::size_t path, std::size_t step) noexcept { tau_[path] = step; }

private:
    TimeGrid grid_;
    int p_;
    std::size_t paths_;
    std::vector<double> X_;
    std::vector<std::size_t> tau_;
};

/// Euler–Maruyama on the environment RNG stream. τ is found on the grid and
/// uses only X up to the current step.
EnvironmentPaths simulate_environment(const EnvironmentSpec& env, const TimeGrid& grid, std::uint64_t seed,
                                      std::size_t n_paths, int threads = 1);

/// Values of one solved triplet read at (t_j, X(t_j)).
struct PathPoint {
    std::size_t step = 0;
    double t = 0.0;
    std::vector<double> V;       // q
    std::vector<double> Vbar;    // q*d
    std::vector<double> Vtilde;  // per global cell, q each
    /// sups[f][o]: largest |∂^α f| over |α| = o and components, f = V, V̄, Ṽ.
    /// For Ṽ the cells are combined as sqrt(Σ λ ν(cell) sup²).
    std::vector<std::vector<double>> sups;
};

struct PathValues {
    std::size_t path = 0;
    std::size_t tau_step = 0;
    bool stopped = false;  // τ < T
    std::vector<PathPoint> points;  // steps 0..tau_step
    double terminal_gap = 0.0;      // max |V(τ, X(τ)) − H(X(τ))| when H is supplied
};

/// Multilinear interpolation of the series along every environment path up
/// to τ. Environment path m reads solution path m. Spatial derivatives up to
/// `derivative_order` are interpolated as well. Throws ExtrapolationError if
/// X leaves the active grid before τ.
std::vector<PathValues> evaluate_along_path(const TripletSeries& series, const EnvironmentPaths& env,
                                            int derivative_order = 0, const TerminalCondition* terminal = nullptr,
                                            const DriverPaths* drivers = nullptr, int threads = 1);

/// Interpolated value of a gridded field at x (all components).
std::vector<double> interpolate(const GriddedField& field, std::span<const double> x);

/// ‖f‖_∞ = Σ_{i=1}^{k_max} e^{-i} max_{j<=i} sups[j] per point (orders above
/// the interpolated ones reuse the highest available), then
/// sqrt(E Σ_{t_j<τ} (‖V‖² + ‖V̄‖² + ‖Ṽ‖²) Δt).
double path_norm(const std::vector<PathValues>& values, const TimeGrid& grid, const NormWeights& w);

/// CSV: path_id, t, X1..Xp, v1..vq, stopped.
void write_path_csv(std::ostream& os, const std::vector<PathValues>& values, const EnvironmentPaths& env);

}  // namespace bspde
