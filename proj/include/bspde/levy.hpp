#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace bspde {

/// Uniform time grid t_j = j T / n on [0, T].
struct TimeGrid {
    double horizon = 1.0;
    std::size_t steps = 1;

    double dt() const noexcept { return horizon / static_cast<double>(steps); }
    double time(std::size_t j) const noexcept { return horizon * static_cast<double>(j) / static_cast<double>(steps); }
    void validate() const;
};

/// One jump channel of an h-dimensional subordinator.
///
/// The Lévy measure is either a finite list of atoms or a density on
/// [epsilon, z_cap]; below epsilon the measure is discarded (compound-Poisson
/// approximation). Either way the measure is summarised by "cells": a
/// partition of the jump sizes, each with a representative size `nodes[c]`
/// and mass `masses[c]` = ν(cell). The cells double as the quadrature rule
/// for z-integrals and as the bins of compensated-measure tallies.
class LevyChannel {
public:
    /// Finite atomic measure sum_i mass_i δ_{z_i}. Zero total mass is allowed.
    static LevyChannel atoms(std::vector<std::pair<double, double>> atoms, double intensity);

    /// Absolutely continuous measure with the given density on [epsilon, z_cap].
    /// `small_jump_mean` is ∫_0^epsilon z ν(dz), the drift discarded by truncation.
    static LevyChannel density(std::string name, std::function<double(double)> rate, double epsilon,
                               double z_cap, double intensity, std::size_t cells, double small_jump_mean);

    /// Named densities: "gamma" (a z^-1 e^{-b z}), "stable" (a z^{-1-b}, 0<b<1),
    /// "exponential" (a e^{-b z}). epsilon defaults to 1e-3 z_cap when <= 0.
    static LevyChannel named(const std::string& name, double a, double b, double z_cap, double epsilon,
                             double intensity, std::size_t cells);

    bool is_atomic() const noexcept { return atomic_; }
    double intensity() const noexcept { return intensity_; }
    std::size_t cells() const noexcept { return nodes_.size(); }
    const std::vector<double>& nodes() const noexcept { return nodes_; }
    const std::vector<double>& masses() const noexcept { return masses_; }
    double total_mass() const noexcept;
    /// ∫ z ν(dz) over the retained (truncated) measure.
    double mean_jump_mass() const noexcept;
    double small_jump_mean() const noexcept { return small_jump_mean_; }
    double epsilon() const noexcept { return epsilon_; }
    double z_cap() const noexcept { return z_cap_; }
    const std::string& name() const noexcept { return name_; }
    const std::vector<std::pair<double, double>>& atom_list() const noexcept { return atoms_; }

    /// Copy with a different time-scaling intensity λ.
    LevyChannel with_intensity(double intensity) const;

    /// Draw a jump size given a cell and a pair of uniforms. For atoms the
    /// size is the atom; for densities it is sampled inside the cell from a
    /// tabulated piecewise-uniform approximation of the density.
    double sample_size(std::size_t cell, double u) const;

    void validate() const;

private:
    bool atomic_ = true;
    std::string name_ = "atoms";
    double intensity_ = 1.0;
    double epsilon_ = 0.0;
    double z_cap_ = 0.0;
    double small_jump_mean_ = 0.0;
    std::vector<std::pair<double, double>> atoms_;
    std::vector<double> nodes_;
    std::vector<double> masses_;
    std::vector<double> edges_;
    // per-cell tabulated sub-cell CDF (density channels only)
    std::vector<std::vector<double>> sub_cdf_;
};

/// The jump specification of all h channels.
struct LevySpec {
    std::vector<LevyChannel> channels;

    std::size_t size() const noexcept { return channels.size(); }
    void validate() const;
};

}  // namespace bspde
