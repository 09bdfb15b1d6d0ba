#include "bspde/operators.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

#include "bspde/error.hpp"

namespace bspde {

void OperatorPair::validate() const {
    dims.validate();
    if (k < 0 || m < 0) throw ConfigError("operators", name + ": derivative orders must be >= 0");
    if (k < m) throw ConfigError("operators", name + ": drift order k must be >= diffusion order m");
    if (!(lipschitz >= 0.0) || !std::isfinite(lipschitz))
        throw ConfigError("operators", name + ": declared Lipschitz constant must be finite and >= 0");
    if (!drift) throw ConfigError("operators", name + ": drift is not set");
}

namespace {

void require_caches(const OperatorPair& op, const FieldTriplet& tr, int v_order, int vbar_order) {
    if (v_order > 0 && tr.V.cached_order() < v_order)
        throw PreconditionError("operators", op.name + ": V derivative cache must reach order " + std::to_string(v_order) +
                                                 " (has " + std::to_string(tr.V.cached_order()) + ")");
    if (vbar_order > 0 && !tr.Vbar.empty() && tr.Vbar.cached_order() < vbar_order)
        throw PreconditionError("operators", op.name + ": V̄ derivative cache must reach order " +
                                                 std::to_string(vbar_order) + " (has " +
                                                 std::to_string(tr.Vbar.cached_order()) + ")");
}

void require_finite(const OperatorPair& op, const GriddedField& f, const char* what, double t) {
    if (f.all_finite()) return;
    for (std::size_t i = 0; i < f.nodes(); ++i) {
        for (int c = 0; c < f.components(); ++c) {
            if (std::isfinite(f(i, c))) continue;
            std::ostringstream msg;
            msg << op.name << ": " << what << " is non-finite at t=" << t << ", node " << i << " x=(";
            const auto x = f.grid().node(i);
            for (std::size_t a = 0; a < x.size(); ++a) msg << (a ? "," : "") << x[a];
            msg << "), component " << c;
            throw OperatorError("operators", msg.str());
        }
    }
}

}  // namespace

GriddedField eval_drift(const OperatorPair& op, const OperatorContext& ctx, const FieldTriplet& triplet) {
    require_caches(op, triplet, op.k, op.m);
    GriddedField out = op.drift(ctx, triplet);
    if (out.components() != op.dims.q)
        throw OperatorError("operators", op.name + ": drift returned " + std::to_string(out.components()) +
                                             " components, expected q=" + std::to_string(op.dims.q));
    require_finite(op, out, "drift", ctx.t);
    return out;
}

GriddedField eval_diffusion(const OperatorPair& op, const OperatorContext& ctx, const FieldTriplet& triplet) {
    const int width = op.dims.q * op.dims.d;
    if (!op.diffusion) return GriddedField(triplet.V.grid_ptr(), width);
    require_caches(op, triplet, op.m, op.m);
    GriddedField out = op.diffusion(ctx, triplet);
    if (out.components() != width)
        throw OperatorError("operators", op.name + ": diffusion returned " + std::to_string(out.components()) +
                                             " components, expected q*d=" + std::to_string(width));
    require_finite(op, out, "diffusion", ctx.t);
    return out;
}

OperatorPair zero_operator(const ModelDims& dims) {
    OperatorPair op;
    op.name = "zero";
    op.dims = dims;
    op.drift = [q = dims.q](const OperatorContext&, const FieldTriplet& tr) { return GriddedField(tr.V.grid_ptr(), q); };
    op.linear = true;
    return op;
}

std::vector<std::string> LinearCoefficients::variables(int p) {
    std::vector<std::string> v;
    for (int a = 1; a <= p; ++a) v.push_back("x" + std::to_string(a));
    return v;
}

namespace {

// One coefficient times one partial derivative of V (or of every V̄ column).
struct LinearTerm {
    MultiIndex alpha;
    bool constant = true;
    double value = 0.0;
    std::shared_ptr<const GriddedField> field;

    double at(std::size_t node) const { return constant ? value : (*field)(node, 0); }
};

struct LinearTerms {
    std::vector<LinearTerm> plain;  // act on V
    std::vector<LinearTerm> bar;    // act on each column of V̄
    std::vector<LinearTerm> jump;   // J terms, act on V
};

void collect(std::vector<LinearTerm>& out, const std::vector<Expression>& second, const std::vector<Expression>& first,
             const Expression& zeroth, int p, const GridPtr& grid, const char* label) {
    const auto P = static_cast<std::size_t>(p);
    if (!second.empty() && second.size() != P * P)
        throw ConfigError("operators", std::string(label) + ": second-order coefficients need p*p entries");
    if (!first.empty() && first.size() != P)
        throw ConfigError("operators", std::string(label) + ": first-order coefficients need p entries");
    auto add = [&](const Expression& e, MultiIndex alpha, const std::string& name) {
        LinearTerm t;
        t.alpha = std::move(alpha);
        if (e.is_constant()) {
            t.value = e(std::span<const double>{});
            if (!std::isfinite(t.value)) throw ConfigError("operators", "coefficient " + name + " is not finite");
            if (t.value == 0.0) return;
        } else {
            t.constant = false;
            auto f = GriddedField::sample(grid, 1, [&](std::span<const double> x, std::span<double> o) { o[0] = e(x); });
            if (!f.all_finite())
                throw ConfigError("operators", "coefficient " + name + " = '" + e.text() + "' is unbounded on the grid");
            t.field = std::make_shared<const GriddedField>(std::move(f));
        }
        out.push_back(std::move(t));
    };
    for (std::size_t i = 0; i < second.size(); ++i) {
        MultiIndex alpha(P, 0);
        alpha[i / P] += 1;
        alpha[i % P] += 1;
        add(second[i], alpha, std::string(label) + "_a" + std::to_string(i / P + 1) + std::to_string(i % P + 1));
    }
    for (std::size_t j = 0; j < first.size(); ++j) {
        MultiIndex alpha(P, 0);
        alpha[j] = 1;
        add(first[j], alpha, std::string(label) + "_b" + std::to_string(j + 1));
    }
    add(zeroth, MultiIndex(P, 0), std::string(label) + "_c");
}

const GriddedField& source(const GriddedField& f, const MultiIndex& alpha) {
    return order(alpha) == 0 ? f : f.derivative(alpha);
}

}  // namespace

OperatorPair build_linear_operator(const LinearCoefficients& coeffs, const ModelDims& dims, const GridPtr& grid) {
    dims.validate();
    if (grid->dim() != dims.p) throw ConfigError("operators", "linear operator: grid dimension differs from p");
    auto terms = std::make_shared<LinearTerms>();
    collect(terms->plain, coeffs.a, coeffs.b, coeffs.c, dims.p, grid, "L");
    collect(terms->bar, coeffs.abar, coeffs.bbar, coeffs.cbar, dims.p, grid, "Lbar");
    collect(terms->jump, coeffs.ja, coeffs.jb, coeffs.jc, dims.p, grid, "J");

    OperatorPair op;
    op.name = "linear";
    op.dims = dims;
    op.k = 2;
    op.m = 2;
    op.linear = true;
    op.adaptedness = Adaptedness::deterministic;
    op.lipschitz = linear_analytic_bound(coeffs, dims, grid, 0).max();
    const int q = dims.q;
    const int d = dims.d;
    op.drift = [terms, q, d](const OperatorContext&, const FieldTriplet& tr) {
        GriddedField out(tr.V.grid_ptr(), q);
        const std::size_t n = out.nodes();
        for (const auto& t : terms->plain) {
            const GriddedField& src = source(tr.V, t.alpha);
            for (std::size_t i = 0; i < n; ++i)
                for (int r = 0; r < q; ++r) out(i, r) += t.at(i) * src(i, r);
        }
        if (d > 0 && !tr.Vbar.empty()) {
            for (const auto& t : terms->bar) {
                const GriddedField& src = source(tr.Vbar, t.alpha);
                for (std::size_t i = 0; i < n; ++i)
                    for (int r = 0; r < q; ++r)
                        for (int l = 0; l < d; ++l) out(i, r) += t.at(i) * src(i, r * d + l);
            }
        }
        return out;
    };
    if (d > 0 && !terms->jump.empty()) {
        op.diffusion = [terms, q, d](const OperatorContext&, const FieldTriplet& tr) {
            GriddedField out(tr.V.grid_ptr(), q * d);
            for (const auto& t : terms->jump) {
                const GriddedField& src = source(tr.V, t.alpha);
                for (std::size_t i = 0; i < out.nodes(); ++i)
                    for (int r = 0; r < q; ++r)
                        for (int l = 0; l < d; ++l) out(i, r * d + l) += t.at(i) * src(i, r);
            }
            return out;
        };
    }
    return op;
}

LinearBound linear_analytic_bound(const LinearCoefficients& coeffs, const ModelDims& dims, const GridPtr& grid, int c) {
    const double scale = std::pow(2.0, c);
    auto norm = [&](const Expression& e) {
        if (e.is_constant()) return std::abs(e(std::span<const double>{}));
        const auto f = GriddedField::sample(grid, 1, [&](std::span<const double> x, std::span<double> o) { o[0] = e(x); });
        if (!f.all_finite()) throw ConfigError("operators", "coefficient '" + e.text() + "' is unbounded on the grid");
        return ck_norm(f, c);
    };
    auto group = [&](const std::vector<Expression>& s, const std::vector<Expression>& f, const Expression& z) {
        double total = norm(z);
        for (const auto& e : s) total += norm(e);
        for (const auto& e : f) total += norm(e);
        return scale * total;
    };
    LinearBound b;
    b.drift = group(coeffs.a, coeffs.b, coeffs.c) + dims.d * group(coeffs.abar, coeffs.bbar, coeffs.cbar);
    b.diffusion = dims.d > 0 ? group(coeffs.ja, coeffs.jb, coeffs.jc) : 0.0;
    return b;
}

OperatorPair build_expression_operator(const std::string& drift, const std::vector<std::string>& diffusion,
                                       const ModelDims& dims, double lipschitz) {
    dims.validate();
    if (dims.q != 1) throw ConfigError("operators", "expression operator supports q = 1 only");
    if (!diffusion.empty() && diffusion.size() != static_cast<std::size_t>(dims.d))
        throw ConfigError("operators", "expression operator: need one diffusion expression per Brownian column (d=" +
                                           std::to_string(dims.d) + ")");
    std::vector<std::string> vars{"t"};
    for (int a = 1; a <= dims.p; ++a) vars.push_back("x" + std::to_string(a));
    vars.emplace_back("v");
    for (int l = 1; l <= dims.d; ++l) vars.push_back("vbar" + std::to_string(l));
    vars.emplace_back("vt");
    auto lexpr = std::make_shared<const Expression>(Expression::parse(drift, vars));
    auto jexpr = std::make_shared<std::vector<Expression>>();
    for (const auto& s : diffusion) jexpr->push_back(Expression::parse(s, vars));

    const int p = dims.p;
    const int d = dims.d;
    // Pointwise argument vector for node i.
    auto args = [p, d](const OperatorContext& ctx, const FieldTriplet& tr, std::size_t i, std::vector<double>& a) {
        a.assign(static_cast<std::size_t>(p + d + 3), 0.0);
        a[0] = ctx.t;
        const auto x = tr.V.grid().node(i);
        std::copy(x.begin(), x.end(), a.begin() + 1);
        a[static_cast<std::size_t>(p + 1)] = tr.V(i, 0);
        for (int l = 0; l < d && !tr.Vbar.empty(); ++l) a[static_cast<std::size_t>(p + 2 + l)] = tr.Vbar(i, l);
        double vt = 0.0;
        if (ctx.levy)
            for (std::size_t ch = 0; ch < tr.Vtilde.size() && ch < ctx.levy->size(); ++ch) {
                const auto& chan = ctx.levy->channels[ch];
                for (std::size_t c = 0; c < tr.Vtilde[ch].size(); ++c)
                    vt += chan.intensity() * chan.masses()[c] * tr.Vtilde[ch][c](i, 0);
            }
        a[static_cast<std::size_t>(p + d + 2)] = vt;
    };

    OperatorPair op;
    op.name = "expression";
    op.dims = dims;
    op.lipschitz = lipschitz;
    op.drift = [lexpr, args](const OperatorContext& ctx, const FieldTriplet& tr) {
        GriddedField out(tr.V.grid_ptr(), 1);
        std::vector<double> a;
        for (std::size_t i = 0; i < out.nodes(); ++i) {
            args(ctx, tr, i, a);
            out(i, 0) = (*lexpr)(a);
        }
        return out;
    };
    if (!jexpr->empty()) {
        op.diffusion = [jexpr, args, d](const OperatorContext& ctx, const FieldTriplet& tr) {
            GriddedField out(tr.V.grid_ptr(), d);
            std::vector<double> a;
            for (std::size_t i = 0; i < out.nodes(); ++i) {
                args(ctx, tr, i, a);
                for (int l = 0; l < d; ++l) out(i, l) = (*jexpr)[static_cast<std::size_t>(l)](a);
            }
            return out;
        };
    }
    return op;
}

OperatorPair scaled(OperatorPair op, double factor) {
    auto drift = op.drift;
    op.drift = [drift, factor](const OperatorContext& ctx, const FieldTriplet& tr) { return factor * drift(ctx, tr); };
    if (op.diffusion) {
        auto diffusion = op.diffusion;
        op.diffusion = [diffusion, factor](const OperatorContext& ctx, const FieldTriplet& tr) {
            return factor * diffusion(ctx, tr);
        };
    }
    op.lipschitz *= std::abs(factor);
    op.name = "scaled " + op.name;
    return op;
}

GriddedField random_smooth_field(const GridPtr& grid, int components, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> amp(-1.0, 1.0), freq(-2.0, 2.0), phase(0.0, 2.0 * std::numbers::pi);
    const int p = grid->dim();
    constexpr int terms = 3;
    std::vector<double> a(static_cast<std::size_t>(components * terms)), ph(a.size()), w(a.size() * static_cast<std::size_t>(p));
    std::vector<double> offset(static_cast<std::size_t>(components));
    for (auto& v : offset) v = amp(rng);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = amp(rng);
        ph[i] = phase(rng);
        for (int k = 0; k < p; ++k) w[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(k)] = freq(rng);
    }
    return GriddedField::sample(grid, components, [&](std::span<const double> x, std::span<double> out) {
        for (int c = 0; c < components; ++c) {
            double s = offset[static_cast<std::size_t>(c)];
            for (int t = 0; t < terms; ++t) {
                const std::size_t i = static_cast<std::size_t>(c * terms + t);
                double arg = ph[i];
                for (int k = 0; k < p; ++k) arg += w[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)];
                s += a[i] * std::cos(arg);
            }
            out[static_cast<std::size_t>(c)] = s;
        }
    });
}

TripletSampler smooth_triplet_sampler(const GridPtr& grid, const ModelDims& dims, const LevySpec* levy) {
    return [grid, dims, levy](std::mt19937_64& rng) {
        FieldTriplet t;
        t.V = random_smooth_field(grid, dims.q, rng);
        t.Vbar = dims.d > 0 ? random_smooth_field(grid, dims.q * dims.d, rng) : GriddedField(grid, 0);
        if (levy)
            for (const auto& ch : levy->channels) {
                t.Vtilde.emplace_back();
                for (std::size_t c = 0; c < ch.cells(); ++c) t.Vtilde.back().push_back(random_smooth_field(grid, dims.q, rng));
            }
        return t;
    };
}

LipschitzEstimate estimate_lipschitz(const OperatorPair& op, const TripletSampler& sampler, std::size_t trials,
                                     int c_max, std::uint64_t seed, const OperatorContext& ctx) {
    if (trials < 1) throw ConfigError("operators", "estimate_lipschitz: trials must be >= 1");
    if (c_max < 0) throw ConfigError("operators", "estimate_lipschitz: c_max must be >= 0");
    LipschitzEstimate est;
    est.declared = op.lipschitz;
    std::mt19937_64 rng(seed);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        FieldTriplet u = sampler(rng);
        FieldTriplet v = sampler(rng);
        FieldTriplet du;
        du.V = u.V - v.V;
        du.Vbar = u.Vbar - v.Vbar;
        du.Vtilde = u.Vtilde;
        for (std::size_t ch = 0; ch < du.Vtilde.size(); ++ch)
            for (std::size_t c = 0; c < du.Vtilde[ch].size(); ++c) du.Vtilde[ch][c] -= v.Vtilde[ch][c];

        const double base = ck_norm(du.V, 0) + ck_norm(du.Vbar, 0) +
                            (ctx.levy && !du.Vtilde.empty() ? nu_norm(du.Vtilde, *ctx.levy, 0) : 0.0);
        if (base == 0.0) {
            ++est.skipped;
            est.warnings.push_back("trial " + std::to_string(trial) + ": sampler produced identical triplets; skipped");
            continue;
        }
        ++est.trials_used;
        for (FieldTriplet* t : {&u, &v}) {
            t->V.cache_derivatives(op.k);
            t->Vbar.cache_derivatives(op.m);
        }
        const GriddedField dl = eval_drift(op, ctx, u) - eval_drift(op, ctx, v);
        const GriddedField dj = eval_diffusion(op, ctx, u) - eval_diffusion(op, ctx, v);
        const auto sl = order_sups(dl, c_max);
        const auto sj = order_sups(dj, c_max);
        for (int c = 0; c <= c_max; ++c) {
            const double den = ck_norm(du.V, op.k + c) + ck_norm(du.Vbar, op.m + c) +
                               (ctx.levy && !du.Vtilde.empty() ? nu_norm(du.Vtilde, *ctx.levy, c) : 0.0);
            if (den > 0.0) est.drift = std::max(est.drift, sl[static_cast<std::size_t>(c)] / den);
            const double dden = ck_norm(du.V, op.m + c);
            if (dden > 0.0) est.diffusion = std::max(est.diffusion, sj[static_cast<std::size_t>(c)] / dden);
        }
    }
    return est;
}

}  // namespace bspde
