#include "bspde/fields.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "bspde/error.hpp"
#include "bspde/parallel.hpp"

namespace bspde {

void ModelDims::validate() const {
    if (p < 1) throw ConfigError("fields", "dims: p must be >= 1");
    if (q < 1) throw ConfigError("fields", "dims: q must be >= 1");
    if (d < 0) throw ConfigError("fields", "dims: d must be >= 0");
    if (h < 0) throw ConfigError("fields", "dims: h must be >= 0");
}

DomainSpec DomainSpec::box(std::vector<std::pair<double, double>> bounds, int resolution) {
    DomainSpec d;
    d.kind = DomainKind::box;
    d.p = static_cast<int>(bounds.size());
    d.bounds = std::move(bounds);
    d.resolution = resolution;
    return d;
}

DomainSpec DomainSpec::annulus(int p, double inner, double outer, int resolution) {
    DomainSpec d;
    d.kind = DomainKind::annulus;
    d.p = p;
    d.inner = inner;
    d.outer = outer;
    d.resolution = resolution;
    return d;
}

void DomainSpec::validate() const {
    if (p < 1) throw ConfigError("fields", "domain: p must be >= 1");
    if (resolution < 3)
        throw ConfigError("fields", "domain: resolution >= 3 required (central differences need 3 points), got " +
                                        std::to_string(resolution));
    if (kind == DomainKind::box) {
        if (bounds.size() != static_cast<std::size_t>(p))
            throw ConfigError("fields", "domain: box needs one [lo, hi] pair per axis");
        for (const auto& [lo, hi] : bounds)
            if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
                throw ConfigError("fields", "domain: box bounds need lo < hi");
    } else {
        if (!(inner >= 0.0) || !(outer > inner) || !std::isfinite(outer))
            throw ConfigError("fields", "domain: annulus needs 0 <= b < n");
    }
}

int order(const MultiIndex& alpha) noexcept { return std::accumulate(alpha.begin(), alpha.end(), 0); }

std::vector<MultiIndex> multi_indices(int p, int c) {
    std::vector<MultiIndex> out;
    MultiIndex cur(static_cast<std::size_t>(p), 0);
    auto rec = [&](auto&& self, int axis, int left) -> void {
        if (axis == p - 1) {
            cur[static_cast<std::size_t>(axis)] = left;
            out.push_back(cur);
            return;
        }
        for (int v = left; v >= 0; --v) {
            cur[static_cast<std::size_t>(axis)] = v;
            self(self, axis + 1, left - v);
        }
    };
    rec(rec, 0, c);
    return out;
}

std::string to_string(const MultiIndex& alpha) {
    std::string s;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (i) s += '_';
        s += std::to_string(alpha[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// SpatialGrid

namespace {

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& counts) {
    std::vector<std::size_t> stride(counts.size(), 1);
    for (std::size_t a = counts.size(); a-- > 1;) stride[a - 1] = stride[a] * counts[a];
    return stride;
}

// Calls fn(line) for every lattice line along `axis`; `line` lists linear
// lattice indices in increasing axis coordinate.
template <class Fn>
void for_each_line(const std::vector<std::size_t>& counts, std::size_t axis, Fn&& fn) {
    const auto stride = strides_of(counts);
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{1}, std::multiplies<>());
    std::vector<std::size_t> line(counts[axis]);
    for (std::size_t base = 0; base < total; ++base) {
        if ((base / stride[axis]) % counts[axis] != 0) continue;
        for (std::size_t i = 0; i < counts[axis]; ++i) line[i] = base + i * stride[axis];
        fn(line);
    }
}

}  // namespace

SpatialGrid::SpatialGrid(DomainSpec domain, std::vector<double> lo, std::vector<double> spacing,
                         std::vector<std::size_t> counts, std::vector<bool> active)
    : domain_(std::move(domain)), lo_(std::move(lo)), spacing_(std::move(spacing)), counts_(std::move(counts)) {
    const std::size_t p = lo_.size();
    const auto stride = strides_of(counts_);
    node_of_lattice_.assign(active.size(), npos);
    for (std::size_t l = 0; l < active.size(); ++l) {
        if (!active[l]) {
            masked_ = true;
            continue;
        }
        node_of_lattice_[l] = lattice_of_node_.size();
        lattice_of_node_.push_back(l);
        for (std::size_t a = 0; a < p; ++a)
            coords_.push_back(lo_[a] + static_cast<double>((l / stride[a]) % counts_[a]) * spacing_[a]);
    }
    runs_.resize(p);
    shortest_run_.assign(p, 0);
    for (std::size_t a = 0; a < p; ++a) {
        std::size_t shortest = static_cast<std::size_t>(-1);
        for_each_line(counts_, a, [&](const std::vector<std::size_t>& line) {
            std::vector<std::size_t> run;
            auto flush = [&] {
                if (!run.empty()) {
                    shortest = std::min(shortest, run.size());
                    runs_[a].push_back(std::move(run));
                    run.clear();
                }
            };
            for (std::size_t l : line) {
                if (node_of_lattice_[l] == npos)
                    flush();
                else
                    run.push_back(node_of_lattice_[l]);
            }
            flush();
        });
        shortest_run_[a] = runs_[a].empty() ? 0 : shortest;
    }
}

std::size_t SpatialGrid::node_at(std::span<const long> lattice) const noexcept {
    std::size_t l = 0;
    for (std::size_t a = 0; a < counts_.size(); ++a) {
        if (lattice[a] < 0 || static_cast<std::size_t>(lattice[a]) >= counts_[a]) return npos;
        l = l * counts_[a] + static_cast<std::size_t>(lattice[a]);
    }
    return node_of_lattice_[l];
}

std::size_t SpatialGrid::find(std::span<const double> x) const noexcept {
    std::vector<long> idx(lo_.size());
    for (std::size_t a = 0; a < lo_.size(); ++a) {
        const double u = (x[a] - lo_[a]) / spacing_[a];
        const double r = std::round(u);
        if (std::abs(u - r) > 1e-9) return npos;
        idx[a] = static_cast<long>(r);
    }
    return node_at(idx);
}

GridPtr make_grid(const DomainSpec& domain) {
    domain.validate();
    const auto p = static_cast<std::size_t>(domain.p);
    std::vector<double> lo(p), spacing(p);
    std::vector<std::size_t> counts(p);
    if (domain.kind == DomainKind::box) {
        for (std::size_t a = 0; a < p; ++a) {
            lo[a] = domain.bounds[a].first;
            counts[a] = static_cast<std::size_t>(domain.resolution);
            spacing[a] = (domain.bounds[a].second - domain.bounds[a].first) / (domain.resolution - 1);
        }
        const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{1}, std::multiplies<>());
        return std::make_shared<SpatialGrid>(domain, lo, spacing, counts, std::vector<bool>(total, true));
    }

    // Annuli: lattice points k/res for |k| <= n*res, so every radius shares one lattice.
    const double h = 1.0 / domain.resolution;
    const auto half = static_cast<long>(std::floor(domain.outer * domain.resolution + 1e-9));
    for (std::size_t a = 0; a < p; ++a) {
        lo[a] = -static_cast<double>(half) * h;
        spacing[a] = h;
        counts[a] = static_cast<std::size_t>(2 * half + 1);
    }
    const auto stride = strides_of(counts);
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{1}, std::multiplies<>());
    std::vector<bool> active(total);
    const double tol = 1e-9 * h;
    for (std::size_t l = 0; l < total; ++l) {
        double r2 = 0.0;
        for (std::size_t a = 0; a < p; ++a) {
            const double x = lo[a] + static_cast<double>((l / stride[a]) % counts[a]) * h;
            r2 += x * x;
        }
        const double r = std::sqrt(r2);
        active[l] = r >= domain.inner - tol && r <= domain.outer + tol;
    }
    // Drop nodes on axis runs shorter than 3 until none remain. The result is
    // the largest such subset, hence monotone in the mask and nested across radii.
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t a = 0; a < p; ++a) {
            for_each_line(counts, a, [&](const std::vector<std::size_t>& line) {
                std::size_t i = 0;
                while (i < line.size()) {
                    if (!active[line[i]]) {
                        ++i;
                        continue;
                    }
                    std::size_t j = i;
                    while (j < line.size() && active[line[j]]) ++j;
                    if (j - i < 3) {
                        for (std::size_t t = i; t < j; ++t) active[line[t]] = false;
                        changed = true;
                    }
                    i = j;
                }
            });
        }
    }
    if (std::none_of(active.begin(), active.end(), [](bool b) { return b; }))
        throw ConfigError("fields", "domain: annulus lattice is empty at this resolution");
    return std::make_shared<SpatialGrid>(domain, lo, spacing, counts, std::move(active));
}

// ---------------------------------------------------------------------------
// GriddedField

GriddedField::GriddedField(GridPtr grid, int components, double fill)
    : grid_(std::move(grid)), q_(components), values_(grid_->size() * static_cast<std::size_t>(components), fill) {}

GriddedField::GriddedField(GridPtr grid, int components, std::vector<double> values)
    : grid_(std::move(grid)), q_(components), values_(std::move(values)) {
    if (values_.size() != grid_->size() * static_cast<std::size_t>(q_))
        throw PreconditionError("fields", "field value count does not match grid size times q");
}

GriddedField GriddedField::sample(GridPtr grid, int components,
                                  const std::function<void(std::span<const double>, std::span<double>)>& fn) {
    GriddedField f(std::move(grid), components);
    const auto q = static_cast<std::size_t>(components);
    for (std::size_t i = 0; i < f.nodes(); ++i) fn(f.grid_->node(i), std::span<double>(f.values_.data() + i * q, q));
    return f;
}

GriddedField GriddedField::slice(int first, int count) const {
    GriddedField out(grid_, count);
    for (std::size_t i = 0; i < nodes(); ++i)
        for (int c = 0; c < count; ++c) out(i, c) = (*this)(i, first + c);
    return out;
}

namespace {

enum class Stencil { first, second };

// One finite-difference pass along `axis`, all components.
GriddedField apply_stencil(const GriddedField& f, int axis, Stencil op) {
    const SpatialGrid& g = f.grid();
    const double h = g.spacing(axis);
    const int q = f.components();
    GriddedField out(f.grid_ptr(), q);
    for (const auto& run : g.runs(axis)) {
        const std::size_t n = run.size();
        for (int c = 0; c < q; ++c) {
            auto v = [&](std::size_t i) { return f(run[i], c); };
            if (op == Stencil::first) {
                const double inv = 1.0 / (2.0 * h);
                out(run[0], c) = (-3.0 * v(0) + 4.0 * v(1) - v(2)) * inv;
                for (std::size_t i = 1; i + 1 < n; ++i) out(run[i], c) = (v(i + 1) - v(i - 1)) * inv;
                out(run[n - 1], c) = (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) * inv;
            } else {
                const double inv = 1.0 / (h * h);
                for (std::size_t i = 1; i + 1 < n; ++i) out(run[i], c) = (v(i - 1) - 2.0 * v(i) + v(i + 1)) * inv;
                if (n >= 4) {
                    out(run[0], c) = (2.0 * v(0) - 5.0 * v(1) + 4.0 * v(2) - v(3)) * inv;
                    out(run[n - 1], c) = (2.0 * v(n - 1) - 5.0 * v(n - 2) + 4.0 * v(n - 3) - v(n - 4)) * inv;
                } else {
                    out(run[0], c) = out(run[1], c);
                    out(run[n - 1], c) = out(run[1], c);
                }
            }
        }
    }
    return out;
}

void check_support(const SpatialGrid& g, const MultiIndex& alpha) {
    if (alpha.size() != static_cast<std::size_t>(g.dim()))
        throw PreconditionError("fields", "multi-index " + to_string(alpha) + " does not match grid dimension " +
                                              std::to_string(g.dim()));
    for (int a = 0; a < g.dim(); ++a) {
        const int c = alpha[static_cast<std::size_t>(a)];
        if (c < 0) throw PreconditionError("fields", "negative multi-index entry");
        if (c == 0) continue;
        const auto need = static_cast<std::size_t>(std::max(3, c + 1));
        if (g.shortest_run(a) < need)
            throw ResolutionError("fields", "derivative of order " + std::to_string(c) + " along axis " +
                                                std::to_string(a + 1) + " needs runs of >= " + std::to_string(need) +
                                                " points; grid has " + std::to_string(g.shortest_run(a)));
    }
}

// Highest differentiated axis of alpha, and the predecessor index whose
// derivative one stencil pass turns into d^alpha.
std::pair<int, Stencil> last_pass(const MultiIndex& alpha, MultiIndex& pred) {
    int a = static_cast<int>(alpha.size()) - 1;
    while (alpha[static_cast<std::size_t>(a)] == 0) --a;
    pred = alpha;
    const bool odd = alpha[static_cast<std::size_t>(a)] % 2 == 1;
    pred[static_cast<std::size_t>(a)] -= odd ? 1 : 2;
    return {a, odd ? Stencil::first : Stencil::second};
}

// Every derivative of order 1..max_order, one stencil pass each.
std::map<MultiIndex, GriddedField> derivative_table(const GriddedField& f, int max_order) {
    std::map<MultiIndex, GriddedField> table;
    const int p = f.grid().dim();
    for (int c = 1; c <= max_order; ++c) {
        for (const auto& alpha : multi_indices(p, c)) {
            check_support(f.grid(), alpha);
            MultiIndex pred;
            const auto [axis, op] = last_pass(alpha, pred);
            const GriddedField& base = order(pred) == 0 ? f : table.at(pred);
            table.emplace(alpha, apply_stencil(base, axis, op));
        }
    }
    return table;
}

}  // namespace

void GriddedField::cache_derivatives(int max_order) {
    if (max_order <= cached_order_) return;
    if (q_ == 0 || nodes() == 0) {
        cached_order_ = max_order;
        return;
    }
    GriddedField plain(grid_, q_, values_);
    for (auto& [alpha, d] : derivative_table(plain, max_order))
        cache_[alpha] = std::make_shared<const GriddedField>(std::move(d));
    cached_order_ = max_order;
}

const GriddedField& GriddedField::derivative(const MultiIndex& alpha) const {
    const auto it = cache_.find(alpha);
    if (it == cache_.end())
        throw PreconditionError("fields", "derivative " + to_string(alpha) + " is not cached (cached to order " +
                                              std::to_string(cached_order_) + ")");
    return *it->second;
}

bool GriddedField::has_derivative(const MultiIndex& alpha) const noexcept { return cache_.count(alpha) > 0; }

void GriddedField::drop_cache() noexcept {
    cache_.clear();
    cached_order_ = 0;
}

GriddedField& GriddedField::operator+=(const GriddedField& other) {
    if (other.values_.size() != values_.size()) throw PreconditionError("fields", "field shape mismatch in +=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    drop_cache();
    return *this;
}

GriddedField& GriddedField::operator-=(const GriddedField& other) {
    if (other.values_.size() != values_.size()) throw PreconditionError("fields", "field shape mismatch in -=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    drop_cache();
    return *this;
}

GriddedField& GriddedField::operator*=(double s) {
    for (double& v : values_) v *= s;
    drop_cache();
    return *this;
}

bool GriddedField::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

GriddedField operator+(GriddedField a, const GriddedField& b) { return a += b; }
GriddedField operator-(GriddedField a, const GriddedField& b) { return a -= b; }
GriddedField operator*(double s, GriddedField a) { return a *= s; }

GriddedField partial_derivative(const GriddedField& field, const MultiIndex& alpha) {
    check_support(field.grid(), alpha);
    if (order(alpha) == 0) return GriddedField(field.grid_ptr(), field.components(), std::vector<double>(field.values().begin(), field.values().end()));
    if (field.has_derivative(alpha)) {
        const GriddedField& d = field.derivative(alpha);
        return GriddedField(d.grid_ptr(), d.components(), std::vector<double>(d.values().begin(), d.values().end()));
    }
    GriddedField cur(field.grid_ptr(), field.components(), std::vector<double>(field.values().begin(), field.values().end()));
    for (int a = 0; a < field.grid().dim(); ++a) {
        const int c = alpha[static_cast<std::size_t>(a)];
        for (int s = 0; s < c / 2; ++s) cur = apply_stencil(cur, a, Stencil::second);
        if (c % 2 == 1) cur = apply_stencil(cur, a, Stencil::first);
    }
    return cur;
}

namespace {

double sup_abs(const GriddedField& f) {
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

std::vector<double> order_sups(const GriddedField& field, int max_order) {
    std::vector<double> sups(static_cast<std::size_t>(max_order) + 1, 0.0);
    if (field.components() == 0 || field.nodes() == 0) return sups;
    sups[0] = sup_abs(field);
    if (max_order == 0) return sups;
    const int p = field.grid().dim();
    if (field.cached_order() >= max_order) {
        for (int c = 1; c <= max_order; ++c)
            for (const auto& alpha : multi_indices(p, c))
                sups[static_cast<std::size_t>(c)] = std::max(sups[static_cast<std::size_t>(c)], sup_abs(field.derivative(alpha)));
        return sups;
    }
    for (const auto& [alpha, d] : derivative_table(field, max_order))
        sups[static_cast<std::size_t>(order(alpha))] = std::max(sups[static_cast<std::size_t>(order(alpha))], sup_abs(d));
    return sups;
}

double ck_norm(const GriddedField& field, int k) {
    if (k < 0) throw PreconditionError("fields", "ck_norm: k must be >= 0");
    const auto s = order_sups(field, k);
    return *std::max_element(s.begin(), s.end());
}

void NormWeights::validate() const {
    if (k_max < 1) throw ConfigError("fields", "norms: k_max must be >= 1");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("fields", "norms: gamma must be finite and >= 0");
}

namespace {

// Running max of order sups: ck_norm(f, k) for k = 0..max_order.
std::vector<double> ck_profile(const GriddedField& field, int max_order) {
    auto s = order_sups(field, max_order);
    for (std::size_t k = 1; k < s.size(); ++k) s[k] = std::max(s[k], s[k - 1]);
    return s;
}

}  // namespace

double cinf_norm(const GriddedField& field, const NormWeights& w) {
    const auto ck = ck_profile(field, w.k_max);
    double s = 0.0;
    for (int k = 1; k <= w.k_max; ++k) s += NormWeights::xi(k) * ck[static_cast<std::size_t>(k)] * ck[static_cast<std::size_t>(k)];
    return std::sqrt(s);
}

namespace {

// λ_i ν_i(cell) ck_norm(Ṽ_i(cell), k)² summed over channels and cells, for k = 0..max_order.
std::vector<double> nu_profile_sq(const JumpField& vtilde, const LevySpec& levy, int max_order) {
    if (vtilde.size() != levy.size())
        throw PreconditionError("fields", "jump field has " + std::to_string(vtilde.size()) + " channels, levy spec has " +
                                              std::to_string(levy.size()));
    std::vector<double> out(static_cast<std::size_t>(max_order) + 1, 0.0);
    for (std::size_t i = 0; i < levy.size(); ++i) {
        const auto& ch = levy.channels[i];
        if (ch.cells() == 0) throw ConfigError("fields", "nu norm: channel " + std::to_string(i + 1) + " has an empty quadrature");
        if (vtilde[i].size() != ch.cells())
            throw PreconditionError("fields", "jump field channel " + std::to_string(i + 1) + " does not match its quadrature");
        for (std::size_t c = 0; c < ch.cells(); ++c) {
            const double weight = ch.intensity() * ch.masses()[c];
            if (weight == 0.0) continue;
            const auto ck = ck_profile(vtilde[i][c], max_order);
            for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * ck[k] * ck[k];
        }
    }
    return out;
}

}  // namespace

double nu_norm(const JumpField& vtilde, const LevySpec& levy, int c) {
    return std::sqrt(nu_profile_sq(vtilde, levy, c).back());
}

GriddedField restrict_to(const GriddedField& field, const GridPtr& subgrid) {
    GriddedField out(subgrid, field.components());
    for (std::size_t i = 0; i < subgrid->size(); ++i) {
        const std::size_t src = field.grid().find(subgrid->node(i));
        if (src == SpatialGrid::npos) throw PreconditionError("fields", "restrict: sub-grid node is not on the source lattice");
        for (int c = 0; c < field.components(); ++c) out(i, c) = field(src, c);
    }
    return out;
}

double annulus_norm(const GriddedField& field, const std::vector<GridPtr>& shells, int inner, const NormWeights& w) {
    if (shells.empty()) throw ConfigError("fields", "annulus norm: n_max must exceed b");
    double s = 0.0;
    for (std::size_t i = 0; i < shells.size(); ++i)
        s += NormWeights::xi_annulus(inner + 1 + static_cast<int>(i)) * cinf_norm(restrict_to(field, shells[i]), w);
    return s;
}

FieldTriplet FieldTriplet::zeros(const GridPtr& grid, const ModelDims& dims, const LevySpec* levy) {
    FieldTriplet t;
    t.V = GriddedField(grid, dims.q);
    t.Vbar = GriddedField(grid, dims.q * dims.d);
    if (levy)
        for (const auto& ch : levy->channels) t.Vtilde.emplace_back(ch.cells(), GriddedField(grid, dims.q));
    return t;
}

StoredSeries::StoredSeries(TimeGrid grid, std::vector<std::vector<FieldTriplet>> triplets, const LevySpec* levy)
    : grid_(grid), triplets_(std::move(triplets)), levy_(levy) {
    if (triplets_.size() != grid_.steps + 1)
        throw PreconditionError("fields", "stored series needs steps + 1 time slices");
    for (const auto& slice : triplets_)
        if (slice.size() != triplets_.front().size())
            throw PreconditionError("fields", "stored series has ragged path counts");
}

namespace {

// Per-path contributions to the squared order-k norm, k = 0..max_order.
std::vector<double> path_terms(const TripletSeries& series, std::size_t path, double gamma, int max_order) {
    const TimeGrid& tg = series.time_grid();
    const double dt = tg.dt();
    const LevySpec* levy = series.levy();
    const auto K = static_cast<std::size_t>(max_order) + 1;
    std::vector<double> sup_v(K, 0.0), int_bar(K, 0.0), int_tilde(K, 0.0);
    for (std::size_t j = 0; j <= tg.steps; ++j) {
        const FieldTriplet tr = series.realize(j, path);
        const double weight = std::exp(2.0 * gamma * tg.time(j));
        const auto cv = ck_profile(tr.V, max_order);
        for (std::size_t k = 0; k < K; ++k) sup_v[k] = std::max(sup_v[k], weight * cv[k] * cv[k]);
        if (j == tg.steps) break;
        if (!tr.Vbar.empty()) {
            const auto cb = ck_profile(tr.Vbar, max_order);
            for (std::size_t k = 0; k < K; ++k) int_bar[k] += dt * weight * cb[k] * cb[k];
        }
        if (levy && levy->size() > 0 && !tr.Vtilde.empty()) {
            const auto ct = nu_profile_sq(tr.Vtilde, *levy, max_order);
            for (std::size_t k = 0; k < K; ++k) int_tilde[k] += dt * weight * ct[k];
        }
    }
    std::vector<double> out(K);
    for (std::size_t k = 0; k < K; ++k) out[k] = sup_v[k] + int_bar[k] + int_tilde[k];
    return out;
}

std::vector<double> expected_terms(const TripletSeries& series, double gamma, int max_order, int threads) {
    const auto K = static_cast<std::size_t>(max_order) + 1;
    bool fixed = true;
    for (std::size_t j = 0; j <= series.time_grid().steps && fixed; ++j) fixed = series.path_independent(j);
    const std::size_t n = fixed ? std::min<std::size_t>(1, series.paths()) : series.paths();
    if (n == 0) return std::vector<double>(K, 0.0);
    constexpr std::size_t chunk = 64;
    std::vector<std::vector<double>> partial(chunk_count(n, chunk), std::vector<double>(K, 0.0));
    for_chunks(
        n, threads,
        [&](std::size_t c, std::size_t begin, std::size_t end) {
            for (std::size_t m = begin; m < end; ++m) {
                const auto t = path_terms(series, m, gamma, max_order);
                for (std::size_t k = 0; k < K; ++k) partial[c][k] += t[k];
            }
        },
        chunk);
    std::vector<double> total(K, 0.0);
    for (const auto& p : partial)
        for (std::size_t k = 0; k < K; ++k) total[k] += p[k];
    for (double& v : total) v /= static_cast<double>(n);
    return total;
}

}  // namespace

double mgamma_norm_squared(const TripletSeries& series, const NormWeights& w, int k, int threads) {
    if (k < 0) throw PreconditionError("fields", "mgamma norm: k must be >= 0");
    return expected_terms(series, w.gamma, k, threads).back();
}

double mgamma_norm(const TripletSeries& series, const NormWeights& w, int threads) {
    const auto terms = expected_terms(series, w.gamma, w.k_max, threads);
    double s = 0.0;
    for (int k = 1; k <= w.k_max; ++k) s += NormWeights::xi(k) * terms[static_cast<std::size_t>(k)];
    return std::sqrt(s);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_field_csv(std::ostream& os, const GriddedField& field, const std::string& name, bool with_derivatives) {
    const SpatialGrid& g = field.grid();
    const int q = field.components();
    auto column = [&](int r) { return q == 1 ? name : name + std::to_string(r + 1); };

    std::vector<std::pair<std::string, const GriddedField*>> extra;
    if (with_derivatives)
        for (int c = 1; c <= field.cached_order(); ++c)
            for (const auto& alpha : multi_indices(g.dim(), c))
                if (field.has_derivative(alpha)) extra.emplace_back("_d" + to_string(alpha), &field.derivative(alpha));

    for (int a = 0; a < g.dim(); ++a) os << (a ? "," : "") << 'x' << (a + 1);
    for (int r = 0; r < q; ++r) os << ',' << column(r);
    for (const auto& [suffix, f] : extra)
        for (int r = 0; r < q; ++r) os << ',' << column(r) << suffix;
    os << '\n';
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto x = g.node(i);
        for (int a = 0; a < g.dim(); ++a) os << (a ? "," : "") << format_double(x[static_cast<std::size_t>(a)]);
        for (int r = 0; r < q; ++r) os << ',' << format_double(field(i, r));
        for (const auto& [suffix, f] : extra)
            for (int r = 0; r < q; ++r) os << ',' << format_double((*f)(i, r));
        os << '\n';
    }
}

}  // namespace bspde
