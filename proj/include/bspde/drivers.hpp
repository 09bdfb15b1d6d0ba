#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "bspde/fields.hpp"
#include "bspde/levy.hpp"

namespace bspde {

/// RNG stream ids under one master seed. Streams are per (path, id), so a
/// path's noise does not depend on which other paths are simulated.
namespace streams {
inline constexpr std::uint64_t brownian = 0;
inline constexpr std::uint64_t jump_base = 1;  // channel i uses jump_base + i
inline constexpr std::uint64_t environment = 1000;
inline constexpr std::uint64_t wealth = 2000;
}  // namespace streams

struct JumpEvent {
    double time = 0.0;
    std::size_t step = 0;  // event lies in (t_step, t_{step+1}]
    std::size_t cell = 0;
    double size = 0.0;
};

/// Brownian increments, subordinator jumps and compensated jump tallies for
/// every path on one time grid. Immutable once built.
class DriverPaths {
public:
    DriverPaths() = default;

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t paths() const noexcept { return paths_; }
    int brownian_dim() const noexcept { return d_; }
    std::size_t channels() const noexcept { return cells_.size(); }
    std::size_t cells(std::size_t channel) const noexcept { return cells_[channel]; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool compensated() const noexcept { return compensated_; }

    /// ΔW over (t_j, t_{j+1}], a d-vector.
    std::span<const double> dW(std::size_t path, std::size_t step) const noexcept {
        return {dW_.data() + (path * grid_.steps + step) * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
    }
    /// W(t_j), j = 0..steps.
    std::span<const double> W(std::size_t path, std::size_t j) const noexcept {
        return {W_.data() + (path * (grid_.steps + 1) + j) * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
    }
    /// L(t_j) per channel, j = 0..steps.
    std::span<const double> L(std::size_t path, std::size_t j) const noexcept {
        return {L_.data() + (path * (grid_.steps + 1) + j) * channels(), channels()};
    }
    /// Raw jump count in (t_j, t_{j+1}] for one quadrature cell.
    double count(std::size_t path, std::size_t channel, std::size_t step, std::size_t cell) const noexcept {
        return counts_[tally_index(path, channel, step, cell)];
    }
    /// Compensated increment ΔÑ = count − λ ν(cell) Δt. Requires compensate().
    double dN(std::size_t path, std::size_t channel, std::size_t step, std::size_t cell) const noexcept {
        return dN_[tally_index(path, channel, step, cell)];
    }
    /// λ ν(cell) Δt.
    double compensator(std::size_t channel, std::size_t cell) const noexcept {
        return compensator_[cell_offset_[channel] + cell];
    }
    const std::vector<JumpEvent>& events(std::size_t path, std::size_t channel) const noexcept {
        return events_[path * channels() + channel];
    }

    friend DriverPaths simulate_brownian(const ModelDims&, const TimeGrid&, std::uint64_t, std::size_t, int);
    friend DriverPaths simulate_subordinator(const LevySpec&, const TimeGrid&, std::uint64_t, std::size_t, int);
    friend DriverPaths compensate(DriverPaths, const LevySpec&);
    friend DriverPaths combine(DriverPaths, DriverPaths);

private:
    std::size_t tally_index(std::size_t path, std::size_t channel, std::size_t step, std::size_t cell) const noexcept {
        return (path * grid_.steps + step) * total_cells_ + cell_offset_[channel] + cell;
    }

    TimeGrid grid_;
    std::size_t paths_ = 0;
    int d_ = 0;
    std::uint64_t seed_ = 0;
    bool compensated_ = false;
    std::vector<double> dW_;
    std::vector<double> W_;
    std::vector<std::size_t> cells_;
    std::vector<std::size_t> cell_offset_;
    std::size_t total_cells_ = 0;
    std::vector<double> L_;
    std::vector<double> counts_;
    std::vector<double> dN_;
    std::vector<double> compensator_;
    std::vector<std::vector<JumpEvent>> events_;
};

/// d-dimensional Brownian increments; W(0) = 0.
DriverPaths simulate_brownian(const ModelDims& dims, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths,
                              int threads = 1);

/// Compound-Poisson subordinators, one per channel; counts per cell are
/// Poisson(λ ν(cell) Δt) per step, sizes drawn inside the cell.
DriverPaths simulate_subordinator(const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths,
                                  int threads = 1);

/// Fill compensated tallies ΔÑ = count − λ ν(cell) Δt.
DriverPaths compensate(DriverPaths jumps, const LevySpec& levy);

/// Merge a Brownian-only and a jump-only DriverPaths built on the same grid,
/// seed and path count.
DriverPaths combine(DriverPaths brownian, DriverPaths jumps);

/// simulate_brownian + simulate_subordinator + compensate.
DriverPaths simulate_drivers(const ModelDims& dims, const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed,
                             std::size_t n_paths, int threads = 1);

/// Read-only window onto one path, truncated at the current step: only
/// driver values at times <= t_step are reachable. Operators receive this.
class DriverView {
public:
    DriverView() = default;
    DriverView(const DriverPaths* paths, std::size_t path, std::size_t step) : paths_(paths), path_(path), step_(step) {}

    bool empty() const noexcept { return paths_ == nullptr; }
    std::size_t path() const noexcept { return path_; }
    std::size_t step() const noexcept { return step_; }
    double time() const noexcept { return paths_ ? paths_->grid().time(step_) : 0.0; }
    std::span<const double> W() const { return W_at(step_); }
    std::span<const double> L() const { return L_at(step_); }
    /// Past values; throws PreconditionError for j > step.
    std::span<const double> W_at(std::size_t j) const;
    std::span<const double> L_at(std::size_t j) const;

private:
    const DriverPaths* paths_ = nullptr;
    std::size_t path_ = 0;
    std::size_t step_ = 0;
};

/// Long-format audit CSV: path,step,t,kind,channel,value with kind W, L or N
/// (compensated tally summed over cells), for the first `max_paths` paths.
void write_driver_csv(std::ostream& os, const DriverPaths& paths, std::size_t max_paths);

}  // namespace bspde
