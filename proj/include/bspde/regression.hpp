#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/drivers.hpp"

namespace bspde {

/// Polynomial features of the driver state (W(t), L(t)).
struct BasisConfig {
    int degree = 1;
    bool cross_terms = false;
    double ridge = 1e-8;
    bool include_jumps = true;  // add L(t) to the state when jump channels exist

    void validate() const;
};

/// Number of monomials of total degree <= degree in `vars` variables
/// (pure powers only when cross_terms is false), constant included.
std::size_t basis_size(const BasisConfig& basis, std::size_t vars);

/// Least-squares machinery for E[· | driver state at t_j], built once per
/// set of driver paths and reused by every Picard iteration.
///
/// Each state variable is standardised by its sample mean and deviation at
/// t_j (variables with zero spread, e.g. everything at t = 0, are dropped),
/// monomials are formed and every column is scaled to unit RMS, so the
/// constant feature is exactly 1. The Gram matrix G = ΦᵀΦ/M is factorised by
/// LDLT; if its reciprocal condition is below 1e-13 the ridge is added once,
/// and if that still fails the degree is lowered.
class RegressionPlan {
public:
    struct Step {
        std::vector<std::size_t> state_vars;  // indices into (W_1..W_d, L_1..L_h)
        std::vector<double> mean;
        std::vector<double> sd;
        std::vector<std::vector<int>> exponents;  // per feature, per active state var
        Eigen::VectorXd feature_scale;
        Eigen::MatrixXd phi;  // M × nb, scaled features
        Eigen::LDLT<Eigen::MatrixXd> gram;
        int degree = 0;
        double ridge = 0.0;
        Eigen::VectorXd mean_feature;  // path average of φ
        // Cross moments with the next step (only for j + 1 < n):
        Eigen::MatrixXd next;                // Σ φ_j φ_{j+1}ᵀ / M
        std::vector<Eigen::MatrixXd> next_w;  // per l: Σ φ_j ΔW_l φ_{j+1}ᵀ / M
        std::vector<Eigen::MatrixXd> self_w;  // per l: Σ φ_j ΔW_l φ_jᵀ / M
        std::vector<Eigen::MatrixXd> next_n;  // per global cell: Σ φ_j ΔÑ φ_{j+1}ᵀ / M
        std::vector<Eigen::MatrixXd> self_n;  // per global cell: Σ φ_j ΔÑ φ_jᵀ / M

        std::size_t size() const noexcept { return static_cast<std::size_t>(phi.cols()); }
    };

    RegressionPlan(const DriverPaths& drivers, const BasisConfig& basis, std::vector<std::string>* warnings = nullptr);

    const DriverPaths& drivers() const noexcept { return *drivers_; }
    const BasisConfig& basis() const noexcept { return basis_; }
    std::size_t steps() const noexcept { return steps_.size(); }
    std::size_t paths() const noexcept { return drivers_->paths(); }
    const Step& step(std::size_t j) const noexcept { return steps_[j]; }
    /// Total number of quadrature cells over all channels; global cell index
    /// of (channel, cell) is cell_offset(channel) + cell.
    std::size_t total_cells() const noexcept { return total_cells_; }
    std::size_t cell_offset(std::size_t channel) const noexcept { return cell_offset_[channel]; }

    /// G_j⁻¹ rhs.
    Eigen::MatrixXd solve(std::size_t j, const Eigen::MatrixXd& rhs) const;

private:
    void build_step(std::size_t j, std::vector<std::string>* warnings);

    const DriverPaths* drivers_;
    BasisConfig basis_;
    std::vector<Step> steps_;
    std::vector<std::size_t> cell_offset_;
    std::size_t total_cells_ = 0;
};

}  // namespace bspde
