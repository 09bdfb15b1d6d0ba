#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bspde/levy.hpp"

namespace bspde {

/// Space, state, Brownian and jump-channel dimensions (p, q, d, h).
struct ModelDims {
    int p = 1;
    int q = 1;
    int d = 0;
    int h = 0;

    void validate() const;
    bool operator==(const ModelDims&) const = default;
};

enum class DomainKind { box, annulus, annulus_family };

/// Discretisation target. For a box, `resolution` is the number of points
/// per axis. For annuli it is the number of points per unit length, so the
/// lattice step is 1/resolution and lattices of different radii align.
struct DomainSpec {
    DomainKind kind = DomainKind::box;
    int p = 1;
    std::vector<std::pair<double, double>> bounds;  // box only
    double inner = 0.0;                             // b
    double outer = 1.0;                             // n
    int resolution = 3;

    static DomainSpec box(std::vector<std::pair<double, double>> bounds, int resolution);
    static DomainSpec annulus(int p, double inner, double outer, int resolution);

    void validate() const;
};

using MultiIndex = std::vector<int>;

int order(const MultiIndex& alpha) noexcept;
/// All multi-indices of total order exactly c in p variables, lexicographically descending in axis 0.
std::vector<MultiIndex> multi_indices(int p, int c);
std::string to_string(const MultiIndex& alpha);

/// Regular lattice, optionally masked. Nodes are the active lattice points in
/// lexicographic order (last axis fastest). Along every axis the active
/// nodes form "runs" (maximal sequences of consecutive active lattice points),
/// which is what finite-difference stencils operate on.
class SpatialGrid {
public:
    SpatialGrid(DomainSpec domain, std::vector<double> lo, std::vector<double> spacing, std::vector<std::size_t> counts,
                std::vector<bool> active);

    const DomainSpec& domain() const noexcept { return domain_; }
    int dim() const noexcept { return static_cast<int>(lo_.size()); }
    std::size_t size() const noexcept { return lattice_of_node_.size(); }
    std::span<const double> node(std::size_t i) const noexcept { return {coords_.data() + i * lo_.size(), lo_.size()}; }
    double spacing(int axis) const noexcept { return spacing_[static_cast<std::size_t>(axis)]; }
    double lower(int axis) const noexcept { return lo_[static_cast<std::size_t>(axis)]; }
    std::size_t extent(int axis) const noexcept { return counts_[static_cast<std::size_t>(axis)]; }
    bool masked() const noexcept { return masked_; }

    /// Runs of node indices along `axis`.
    const std::vector<std::vector<std::size_t>>& runs(int axis) const noexcept {
        return runs_[static_cast<std::size_t>(axis)];
    }
    /// Length of the shortest run along `axis`.
    std::size_t shortest_run(int axis) const noexcept { return shortest_run_[static_cast<std::size_t>(axis)]; }

    /// Node index at lattice coordinates, or npos if inactive/outside.
    std::size_t node_at(std::span<const long> lattice) const noexcept;
    /// Node index whose coordinates equal `x` (within 1e-9 h), or npos.
    std::size_t find(std::span<const double> x) const noexcept;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    DomainSpec domain_;
    std::vector<double> lo_;
    std::vector<double> spacing_;
    std::vector<std::size_t> counts_;
    bool masked_ = false;
    std::vector<std::size_t> node_of_lattice_;
    std::vector<std::size_t> lattice_of_node_;
    std::vector<double> coords_;
    std::vector<std::vector<std::vector<std::size_t>>> runs_;
    std::vector<std::size_t> shortest_run_;
};

using GridPtr = std::shared_ptr<const SpatialGrid>;

/// Build the lattice for a domain. Annulus lattices are masked to
/// b <= |x| <= n and then pruned of nodes whose axis runs are shorter than
/// three points (a central difference needs three).
GridPtr make_grid(const DomainSpec& domain);

/// A q-vector per grid node plus a cache of partial derivatives.
class GriddedField {
public:
    GriddedField() = default;
    GriddedField(GridPtr grid, int components, double fill = 0.0);
    GriddedField(GridPtr grid, int components, std::vector<double> values);

    /// Sample `fn(x, out)` at every node; `out` has `components` slots.
    static GriddedField sample(GridPtr grid, int components,
                               const std::function<void(std::span<const double>, std::span<double>)>& fn);

    const SpatialGrid& grid() const noexcept { return *grid_; }
    const GridPtr& grid_ptr() const noexcept { return grid_; }
    int components() const noexcept { return q_; }
    std::size_t nodes() const noexcept { return grid_ ? grid_->size() : 0; }
    bool empty() const noexcept { return values_.empty(); }

    double operator()(std::size_t node, int comp) const noexcept { return values_[node * static_cast<std::size_t>(q_) + static_cast<std::size_t>(comp)]; }
    double& operator()(std::size_t node, int comp) noexcept { return values_[node * static_cast<std::size_t>(q_) + static_cast<std::size_t>(comp)]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    /// Components [first, first+count) as a new field (cache dropped).
    GriddedField slice(int first, int count) const;

    /// Populate the derivative cache with every multi-index of order 1..max_order.
    void cache_derivatives(int max_order);
    /// Highest order fully present in the cache (0 if none).
    int cached_order() const noexcept { return cached_order_; }
    /// Cached derivative; throws PreconditionError if it is not cached.
    const GriddedField& derivative(const MultiIndex& alpha) const;
    bool has_derivative(const MultiIndex& alpha) const noexcept;
    void drop_cache() noexcept;

    GriddedField& operator+=(const GriddedField& other);
    GriddedField& operator-=(const GriddedField& other);
    GriddedField& operator*=(double s);

    bool all_finite() const noexcept;

private:
    GridPtr grid_;
    int q_ = 0;
    std::vector<double> values_;
    std::map<MultiIndex, std::shared_ptr<const GriddedField>> cache_;
    int cached_order_ = 0;
};

GriddedField operator+(GriddedField a, const GriddedField& b);
GriddedField operator-(GriddedField a, const GriddedField& b);
GriddedField operator*(double s, GriddedField a);

/// Finite-difference partial derivative: second-order central differences in
/// the interior and second-order one-sided stencils at run ends; an order-c
/// derivative along an axis is floor(c/2) second-difference passes followed
/// by c mod 2 first-difference passes, axes applied in increasing order.
/// Uses the field's cache when present. Throws ResolutionError if some run
/// along a differentiated axis has fewer than max(3, c+1) points.
GriddedField partial_derivative(const GriddedField& field, const MultiIndex& alpha);

/// Order sups s_c = max over |alpha| = c, nodes and components of |d^alpha f|,
/// for c = 0..max_order.
std::vector<double> order_sups(const GriddedField& field, int max_order);

/// max over orders 0..k of order_sups (order 0 included, so constants have
/// their absolute value as norm).
double ck_norm(const GriddedField& field, int k);

/// Weights of the C^∞ and annulus norms: ξ(k) = e^{-k}, ξ_annulus(n) = e^{-(n+1)}.
struct NormWeights {
    int k_max = 15;
    double gamma = 0.0;

    static double xi(int k) noexcept { return std::exp(-static_cast<double>(k)); }
    static double xi_annulus(int n) noexcept { return std::exp(-static_cast<double>(n + 1)); }
    void validate() const;
};

/// sqrt(sum_{k=1}^{k_max} e^{-k} ck_norm(f, k)^2).
double cinf_norm(const GriddedField& field, const NormWeights& w);

/// Per-channel, per-quadrature-node jump integrand Ṽ_i(z).
using JumpField = std::vector<std::vector<GriddedField>>;

/// sqrt(sum_i sum_cells λ_i ν_i(cell) ck_norm(Ṽ_i(z_cell), c)^2).
double nu_norm(const JumpField& vtilde, const LevySpec& levy, int c);

/// Restrict a field to the nodes of a sub-grid sharing its lattice.
GriddedField restrict_to(const GriddedField& field, const GridPtr& subgrid);

/// sum_{n=b+1}^{n_max} e^{-(n+1)} cinf_norm(field restricted to D_n);
/// `shells[i]` is the grid of D_{b+1+i}. Throws ConfigError if shells is empty.
double annulus_norm(const GriddedField& field, const std::vector<GridPtr>& shells, int inner, const NormWeights& w);

/// The solution triplet (V, V̄, Ṽ) at one time and path. V̄ stores the q×d
/// matrix row-major: component r*d + l is state r, Brownian column l.
struct FieldTriplet {
    GriddedField V;
    GriddedField Vbar;
    JumpField Vtilde;

    static FieldTriplet zeros(const GridPtr& grid, const ModelDims& dims, const LevySpec* levy);
};

/// A solution sampled on a time grid and a set of Monte Carlo paths.
class TripletSeries {
public:
    virtual ~TripletSeries() = default;
    virtual const TimeGrid& time_grid() const = 0;
    virtual std::size_t paths() const = 0;
    virtual const LevySpec* levy() const = 0;
    /// Triplet at step j in 0..steps and a path.
    virtual FieldTriplet realize(std::size_t step, std::size_t path) const = 0;
    /// True if `realize(step, ·)` is the same for all paths.
    virtual bool path_independent(std::size_t /*step*/) const { return false; }
};

/// Explicitly stored triplets, [step][path] (single path allowed).
class StoredSeries final : public TripletSeries {
public:
    StoredSeries(TimeGrid grid, std::vector<std::vector<FieldTriplet>> triplets, const LevySpec* levy = nullptr);

    const TimeGrid& time_grid() const override { return grid_; }
    std::size_t paths() const override { return triplets_.empty() ? 0 : triplets_.front().size(); }
    const LevySpec* levy() const override { return levy_; }
    FieldTriplet realize(std::size_t step, std::size_t path) const override { return triplets_[step][path]; }

private:
    TimeGrid grid_;
    std::vector<std::vector<FieldTriplet>> triplets_;
    const LevySpec* levy_;
};

/// The three terms of the γ-weighted order-k iteration norm, each an
/// expectation (path average): E sup_t ||V||²_{C^k} e^{2γt},
/// E ∫ ||V̄||²_{C^k} e^{2γt} dt and E ∫ ||Ṽ||²_{ν,k} e^{2γt} dt.
/// The returned value is their sum, i.e. the squared order-k norm.
double mgamma_norm_squared(const TripletSeries& series, const NormWeights& w, int k, int threads = 1);

/// Full norm sqrt(sum_{k=1}^{k_max} e^{-k} mgamma_norm_squared(k)).
double mgamma_norm(const TripletSeries& series, const NormWeights& w, int threads = 1);

/// CSV: header `x1..xp, <name>1..<name>q`, plus `<name>r_d<alpha>` columns for
/// every cached derivative when `with_derivatives` is set.
void write_field_csv(std::ostream& os, const GriddedField& field, const std::string& name = "v",
                     bool with_derivatives = false);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace bspde
