#include "bspde/levy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/quadrature/gauss.hpp>

#include "bspde/error.hpp"

namespace bspde {

namespace {

constexpr std::size_t kSubCells = 32;

double integrate(const std::function<double(double)>& f, double a, double b) {
    return boost::math::quadrature::gauss<double, 15>::integrate(f, a, b);
}

}  // namespace

void TimeGrid::validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("drivers", "time grid: T must be > 0");
    if (steps < 1) throw ConfigError("drivers", "time grid: steps must be >= 1");
}

LevyChannel LevyChannel::atoms(std::vector<std::pair<double, double>> atoms, double intensity) {
    LevyChannel ch;
    ch.atomic_ = true;
    ch.intensity_ = intensity;
    ch.atoms_ = std::move(atoms);
    for (const auto& [z, mass] : ch.atoms_) {
        ch.nodes_.push_back(z);
        ch.masses_.push_back(mass);
    }
    ch.validate();
    return ch;
}

LevyChannel LevyChannel::density(std::string name, std::function<double(double)> rate, double epsilon,
                                 double z_cap, double intensity, std::size_t cells, double small_jump_mean) {
    if (!(epsilon > 0.0) || !(z_cap > epsilon))
        throw ConfigError("drivers", "levy density '" + name + "': need 0 < epsilon < z_cap");
    if (cells < 1) throw ConfigError("drivers", "levy density '" + name + "': cells must be >= 1");
    LevyChannel ch;
    ch.atomic_ = false;
    ch.name_ = std::move(name);
    ch.intensity_ = intensity;
    ch.epsilon_ = epsilon;
    ch.z_cap_ = z_cap;
    ch.small_jump_mean_ = small_jump_mean;

    // Log-spaced cells resolve the z^-1 type singularity near epsilon.
    const double ratio = std::log(z_cap / epsilon);
    auto edge = [&](double frac) { return epsilon * std::exp(ratio * frac); };
    ch.edges_.resize(cells + 1);
    for (std::size_t c = 0; c <= cells; ++c) ch.edges_[c] = edge(static_cast<double>(c) / static_cast<double>(cells));
    ch.edges_.back() = z_cap;

    const auto zrate = [&](double z) { return z * rate(z); };
    for (std::size_t c = 0; c < cells; ++c) {
        const double lo = ch.edges_[c];
        const double hi = ch.edges_[c + 1];
        std::vector<double> cdf(kSubCells + 1, 0.0);
        const double sub_ratio = std::log(hi / lo);
        for (std::size_t s = 0; s < kSubCells; ++s) {
            const double a = lo * std::exp(sub_ratio * static_cast<double>(s) / kSubCells);
            const double b = lo * std::exp(sub_ratio * static_cast<double>(s + 1) / kSubCells);
            cdf[s + 1] = cdf[s] + integrate(rate, a, b);
        }
        const double mass = cdf.back();
        const double first = mass > 0.0 ? integrate(zrate, lo, hi) / mass : 0.5 * (lo + hi);
        if (mass > 0.0)
            for (double& v : cdf) v /= mass;
        ch.nodes_.push_back(first);
        ch.masses_.push_back(mass);
        ch.sub_cdf_.push_back(std::move(cdf));
    }
    ch.validate();
    return ch;
}

LevyChannel LevyChannel::named(const std::string& name, double a, double b, double z_cap, double epsilon,
                               double intensity, std::size_t cells) {
    if (!(z_cap > 0.0)) throw ConfigError("drivers", "levy density '" + name + "': z_cap must be > 0");
    if (!(epsilon > 0.0)) epsilon = 1e-3 * z_cap;
    if (name == "gamma") {
        if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("drivers", "gamma density needs a > 0, b > 0");
        auto rate = [a, b](double z) { return a * std::exp(-b * z) / z; };
        return density(name, rate, epsilon, z_cap, intensity, cells, a * (1.0 - std::exp(-b * epsilon)) / b);
    }
    if (name == "stable") {
        if (!(a > 0.0) || !(b > 0.0 && b < 1.0)) throw ConfigError("drivers", "stable density needs a > 0, 0 < b < 1");
        auto rate = [a, b](double z) { return a * std::pow(z, -1.0 - b); };
        return density(name, rate, epsilon, z_cap, intensity, cells, a * std::pow(epsilon, 1.0 - b) / (1.0 - b));
    }
    if (name == "exponential") {
        if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("drivers", "exponential density needs a > 0, b > 0");
        auto rate = [a, b](double z) { return a * std::exp(-b * z); };
        const double small = a * (1.0 - std::exp(-b * epsilon) * (1.0 + b * epsilon)) / (b * b);
        return density(name, rate, epsilon, z_cap, intensity, cells, small);
    }
    throw ConfigError("drivers", "unknown levy density '" + name + "' (expected gamma, stable or exponential)");
}

double LevyChannel::total_mass() const noexcept { return std::accumulate(masses_.begin(), masses_.end(), 0.0); }

double LevyChannel::mean_jump_mass() const noexcept {
    double s = 0.0;
    for (std::size_t c = 0; c < nodes_.size(); ++c) s += nodes_[c] * masses_[c];
    return s;
}

LevyChannel LevyChannel::with_intensity(double intensity) const {
    LevyChannel ch = *this;
    ch.intensity_ = intensity;
    ch.validate();
    return ch;
}

double LevyChannel::sample_size(std::size_t cell, double u) const {
    if (atomic_) return nodes_[cell];
    const auto& cdf = sub_cdf_[cell];
    const auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
    const std::size_t s = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()) - 1, kSubCells - 1);
    const double width = cdf[s + 1] - cdf[s];
    const double frac = width > 0.0 ? std::clamp((u - cdf[s]) / width, 0.0, 1.0) : 0.5;
    const double lo = edges_[cell];
    const double hi = edges_[cell + 1];
    const double sub_ratio = std::log(hi / lo);
    const double a = lo * std::exp(sub_ratio * static_cast<double>(s) / kSubCells);
    const double b = lo * std::exp(sub_ratio * static_cast<double>(s + 1) / kSubCells);
    return a + frac * (b - a);
}

void LevyChannel::validate() const {
    if (!(intensity_ > 0.0) || !std::isfinite(intensity_))
        throw ConfigError("drivers", "levy channel: intensity lambda must be > 0");
    for (std::size_t c = 0; c < nodes_.size(); ++c) {
        if (!(nodes_[c] > 0.0) || !std::isfinite(nodes_[c]))
            throw ConfigError("drivers", "levy channel: jump sizes must be > 0");
        if (!(masses_[c] >= 0.0) || !std::isfinite(masses_[c]))
            throw ConfigError("drivers", "levy channel: masses must be finite and >= 0");
    }
}

void LevySpec::validate() const {
    for (const auto& ch : channels) ch.validate();
}

}  // namespace bspde
