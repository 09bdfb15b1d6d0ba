#include "bspde/drivers.hpp"

#include <cmath>
#include <random>

#include "bspde/error.hpp"
#include "bspde/parallel.hpp"

namespace bspde {

DriverPaths simulate_brownian(const ModelDims& dims, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths,
                              int threads) {
    grid.validate();
    if (n_paths < 1) throw ConfigError("drivers", "n_paths must be >= 1");
    if (dims.d < 0) throw ConfigError("drivers", "d must be >= 0");
    DriverPaths out;
    out.grid_ = grid;
    out.paths_ = n_paths;
    out.d_ = dims.d;
    out.seed_ = seed;
    const auto d = static_cast<std::size_t>(dims.d);
    const std::size_t n = grid.steps;
    out.dW_.assign(n_paths * n * d, 0.0);
    out.W_.assign(n_paths * (n + 1) * d, 0.0);
    const double sd = std::sqrt(grid.dt());
    for_chunks(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            std::mt19937_64 rng(stream_seed(seed, m, streams::brownian));
            std::normal_distribution<double> normal(0.0, sd);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t l = 0; l < d; ++l) {
                    const double z = normal(rng);
                    out.dW_[(m * n + j) * d + l] = z;
                    out.W_[(m * (n + 1) + j + 1) * d + l] = out.W_[(m * (n + 1) + j) * d + l] + z;
                }
            }
        }
    });
    return out;
}

namespace {

void init_cells(const LevySpec& levy, std::vector<std::size_t>& cells, std::vector<std::size_t>& offset,
                std::size_t& total) {
    cells.clear();
    offset.clear();
    total = 0;
    for (const auto& ch : levy.channels) {
        offset.push_back(total);
        cells.push_back(ch.cells());
        total += ch.cells();
    }
}

}  // namespace

DriverPaths simulate_subordinator(const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths,
                                  int threads) {
    grid.validate();
    levy.validate();
    if (n_paths < 1) throw ConfigError("drivers", "n_paths must be >= 1");
    DriverPaths out;
    out.grid_ = grid;
    out.paths_ = n_paths;
    out.seed_ = seed;
    init_cells(levy, out.cells_, out.cell_offset_, out.total_cells_);
    const std::size_t h = levy.size();
    const std::size_t n = grid.steps;
    const double dt = grid.dt();
    out.L_.assign(n_paths * (n + 1) * h, 0.0);
    out.counts_.assign(n_paths * n * out.total_cells_, 0.0);
    out.events_.assign(n_paths * h, {});
    for_chunks(n_paths, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            for (std::size_t i = 0; i < h; ++i) {
                const auto& ch = levy.channels[i];
                std::mt19937_64 rng(stream_seed(seed, m, streams::jump_base + i));
                std::uniform_real_distribution<double> unif(0.0, 1.0);
                auto& events = out.events_[m * h + i];
                double level = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t c = 0; c < ch.cells(); ++c) {
                        const double rate = ch.intensity() * ch.masses()[c] * dt;
                        if (rate <= 0.0) continue;
                        std::poisson_distribution<long> poisson(rate);
                        const long k = poisson(rng);
                        out.counts_[(m * n + j) * out.total_cells_ + out.cell_offset_[i] + c] = static_cast<double>(k);
                        for (long e = 0; e < k; ++e) {
                            const double when = grid.time(j) + dt * unif(rng);
                            const double size = ch.sample_size(c, unif(rng));
                            events.push_back({when, j, c, size});
                            level += size;
                        }
                    }
                    out.L_[(m * (n + 1) + j + 1) * h + i] = level;
                }
            }
        }
    });
    return out;
}

DriverPaths compensate(DriverPaths jumps, const LevySpec& levy) {
    if (levy.size() != jumps.channels()) throw ConfigError("drivers", "compensate: levy spec does not match the jump paths");
    const double dt = jumps.grid_.dt();
    jumps.compensator_.assign(jumps.total_cells_, 0.0);
    for (std::size_t i = 0; i < levy.size(); ++i) {
        const auto& ch = levy.channels[i];
        if (ch.cells() != jumps.cells_[i]) throw ConfigError("drivers", "compensate: cell count mismatch");
        for (std::size_t c = 0; c < ch.cells(); ++c)
            jumps.compensator_[jumps.cell_offset_[i] + c] = ch.intensity() * ch.masses()[c] * dt;
    }
    jumps.dN_.resize(jumps.counts_.size());
    const std::size_t block = jumps.total_cells_;
    for (std::size_t r = 0; block > 0 && r < jumps.counts_.size(); r += block)
        for (std::size_t c = 0; c < block; ++c) jumps.dN_[r + c] = jumps.counts_[r + c] - jumps.compensator_[c];
    jumps.compensated_ = true;
    return jumps;
}

DriverPaths combine(DriverPaths brownian, DriverPaths jumps) {
    if (brownian.paths_ != jumps.paths_ || brownian.grid_.steps != jumps.grid_.steps ||
        brownian.grid_.horizon != jumps.grid_.horizon || brownian.seed_ != jumps.seed_)
        throw PreconditionError("drivers", "combine: Brownian and jump parts were built on different grids or seeds");
    jumps.d_ = brownian.d_;
    jumps.dW_ = std::move(brownian.dW_);
    jumps.W_ = std::move(brownian.W_);
    return jumps;
}

DriverPaths simulate_drivers(const ModelDims& dims, const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed,
                             std::size_t n_paths, int threads) {
    return combine(simulate_brownian(dims, grid, seed, n_paths, threads),
                   compensate(simulate_subordinator(levy, grid, seed, n_paths, threads), levy));
}

std::span<const double> DriverView::W_at(std::size_t j) const {
    if (!paths_) return {};
    if (j > step_) throw PreconditionError("drivers", "driver view: W(t_" + std::to_string(j) + ") lies in the future of t_" + std::to_string(step_));
    return paths_->W(path_, j);
}

std::span<const double> DriverView::L_at(std::size_t j) const {
    if (!paths_) return {};
    if (j > step_) throw PreconditionError("drivers", "driver view: L(t_" + std::to_string(j) + ") lies in the future of t_" + std::to_string(step_));
    return paths_->L(path_, j);
}

void write_driver_csv(std::ostream& os, const DriverPaths& paths, std::size_t max_paths) {
    os << "path,step,t,kind,channel,value\n";
    const std::size_t n = paths.grid().steps;
    for (std::size_t m = 0; m < std::min(max_paths, paths.paths()); ++m) {
        for (std::size_t j = 0; j <= n; ++j) {
            const std::string prefix = std::to_string(m) + ',' + std::to_string(j) + ',' + format_double(paths.grid().time(j)) + ',';
            const auto w = paths.W(m, j);
            for (std::size_t l = 0; l < w.size(); ++l) os << prefix << "W," << l + 1 << ',' << format_double(w[l]) << '\n';
            const auto L = paths.L(m, j);
            for (std::size_t i = 0; i < L.size(); ++i) os << prefix << "L," << i + 1 << ',' << format_double(L[i]) << '\n';
            if (j < n && paths.compensated()) {
                for (std::size_t i = 0; i < paths.channels(); ++i) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < paths.cells(i); ++c) s += paths.dN(m, i, j, c);
                    os << prefix << "N," << i + 1 << ',' << format_double(s) << '\n';
                }
            }
        }
    }
}

}  // namespace bspde
