#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bspde/drivers.hpp"
#include "bspde/expression.hpp"
#include "bspde/fields.hpp"

namespace bspde {

enum class Adaptedness { deterministic, path_functional };

/// What an operator may see besides the fields: the time, the driver path
/// truncated at the current step, and the jump specification.
struct OperatorContext {
    double t = 0.0;
    DriverView drivers;
    const LevySpec* levy = nullptr;
};

/// Maps (context, triplet with cached derivatives) to a gridded field.
using FieldMap = std::function<GriddedField(const OperatorContext&, const FieldTriplet&)>;

/// The pair (L, J) of Eq. (1) form V(t) = H + ∫L ds + ∫(J − V̄)dW − ∫Ṽ dÑ.
/// `drift` returns q components, `diffusion` q·d (row-major like V̄); an empty
/// diffusion means J = 0.
struct OperatorPair {
    std::string name = "operator";
    ModelDims dims;
    FieldMap drift;
    FieldMap diffusion;
    int k = 0;  // derivative order of V read by the operator
    int m = 0;  // derivative order of V̄ read by the operator
    double lipschitz = 0.0;  // declared K_D
    Adaptedness adaptedness = Adaptedness::deterministic;
    /// L and J are linear in the triplet, so the solver may apply them to
    /// regression coefficient fields instead of per-path realisations.
    bool linear = false;

    void validate() const;
};

/// Drift and diffusion at one time. Both require the triplet's V cache to
/// reach order k and V̄'s to reach m (PreconditionError otherwise) and raise
/// OperatorError naming the first non-finite node.
GriddedField eval_drift(const OperatorPair& op, const OperatorContext& ctx, const FieldTriplet& triplet);
GriddedField eval_diffusion(const OperatorPair& op, const OperatorContext& ctx, const FieldTriplet& triplet);

/// L = J = 0.
OperatorPair zero_operator(const ModelDims& dims);

/// Coefficients of the linear operators
///   L u = Σ_ij a_ij ∂_ij u + Σ_j b_j ∂_j u + c u
///       + Σ_l (Σ_ij ā_ij ∂_ij ū_l + Σ_j b̄_j ∂_j ū_l + c̄ ū_l)
///   J_l u = Σ_ij ja_ij ∂_ij u + Σ_j jb_j ∂_j u + jc u   (same for every column l)
/// applied componentwise to each state r. Indices i, j run over the p space
/// axes; l over the d Brownian columns. Each coefficient is an expression in
/// x1..xp; missing entries are zero.
struct LinearCoefficients {
    std::vector<Expression> a;  // p×p row-major, or empty
    std::vector<Expression> b;  // p, or empty
    Expression c;
    std::vector<Expression> abar;
    std::vector<Expression> bbar;
    Expression cbar;
    std::vector<Expression> ja;
    std::vector<Expression> jb;
    Expression jc;

    /// Variable names used by coefficient expressions: x1..xp.
    static std::vector<std::string> variables(int p);
};

/// Example-1 operator with k = m = 2. K_D is the analytic order-0 bound.
/// Throws ConfigError if a coefficient is non-finite on the grid or has the
/// wrong number of entries.
OperatorPair build_linear_operator(const LinearCoefficients& coeffs, const ModelDims& dims, const GridPtr& grid);

/// Triangle-inequality bound on ‖ΔL^{(c)}‖ / (‖Δu‖_{C^{2+c}} + ‖Δū‖_{C^{2+c}}):
/// Σ 2^c ‖coef‖_{C^c}, with the ū terms counted d times. The diffusion bound
/// (J terms) is returned in `diffusion`.
struct LinearBound {
    double drift = 0.0;
    double diffusion = 0.0;
    double max() const noexcept { return drift > diffusion ? drift : diffusion; }
};
LinearBound linear_analytic_bound(const LinearCoefficients& coeffs, const ModelDims& dims, const GridPtr& grid, int c);

/// Pointwise scalar operator (q = 1, k = m = 0) from expressions in
/// t, x1..xp, v, vbar1..vbard and vt, where vt = Σ_i λ_i Σ_cells ν_i(cell) Ṽ_i(cell).
/// `diffusion` holds d expressions (or none for J = 0). Used for
/// derivative-free (BSDE) problems.
OperatorPair build_expression_operator(const std::string& drift, const std::vector<std::string>& diffusion,
                                       const ModelDims& dims, double lipschitz);

/// Multiply L and J by a constant.
OperatorPair scaled(OperatorPair op, double factor);

using TripletSampler = std::function<FieldTriplet(std::mt19937_64&)>;

/// Random smooth triplets: each component is a short random trigonometric
/// sum with frequencies in [-2, 2]^p and amplitudes in [-1, 1].
TripletSampler smooth_triplet_sampler(const GridPtr& grid, const ModelDims& dims, const LevySpec* levy);
GriddedField random_smooth_field(const GridPtr& grid, int components, std::mt19937_64& rng);

struct LipschitzEstimate {
    double drift = 0.0;      // max ratio for L
    double diffusion = 0.0;  // max ratio for J
    double declared = 0.0;   // op.lipschitz
    std::size_t trials_used = 0;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
    double estimate() const noexcept { return drift > diffusion ? drift : diffusion; }
};

/// Empirical Lipschitz constant: max over sampled pairs and c <= c_max of
/// ‖ΔL^{(c)}‖ / (‖Δu‖_{C^{k+c}} + ‖Δū‖_{C^{m+c}} + ‖Δũ‖_{ν,c}) and of
/// ‖ΔJ^{(c)}‖ / ‖Δu‖_{C^{m+c}}. Identical pairs are skipped with a warning.
LipschitzEstimate estimate_lipschitz(const OperatorPair& op, const TripletSampler& sampler, std::size_t trials,
                                     int c_max, std::uint64_t seed, const OperatorContext& ctx = {});

}  // namespace bspde
