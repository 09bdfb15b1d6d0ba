#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bspde/error.hpp"
#include "bspde/operators.hpp"

using namespace bspde;

namespace {

GridPtr line(int n) { return make_grid(DomainSpec::box({{0.0, 1.0}}, n)); }

Expression ex(const std::string& s, int p = 1) { return Expression::parse(s, LinearCoefficients::variables(p)); }

FieldTriplet triplet_of(const GridPtr& g, const ModelDims& dims, GriddedField V) {
    auto tr = FieldTriplet::zeros(g, dims, nullptr);
    tr.V = std::move(V);
    tr.V.cache_derivatives(2);
    tr.Vbar.cache_derivatives(2);
    return tr;
}

GriddedField scalar(const GridPtr& g, std::function<double(double)> fn) {
    return GriddedField::sample(g, 1, [&](std::span<const double> x, std::span<double> out) { out[0] = fn(x[0]); });
}

std::vector<double> values_of(const GriddedField& f) { return {f.values().begin(), f.values().end()}; }

}  // namespace

TEST(LinearOperator, AllZeroCoefficients) {
    auto g = line(9);
    ModelDims dims{1, 1, 1, 0};
    auto op = build_linear_operator({}, dims, g);
    EXPECT_EQ(op.k, 2);
    EXPECT_EQ(op.m, 2);
    auto tr = triplet_of(g, dims, scalar(g, [](double x) { return std::exp(x); }));
    for (double v : values_of(eval_drift(op, {}, tr))) EXPECT_EQ(v, 0.0);
    auto J = eval_diffusion(op, {}, tr);
    EXPECT_EQ(J.components(), 1);
    for (double v : J.values()) EXPECT_EQ(v, 0.0);
}

TEST(LinearOperator, MultiplicationAndSign) {
    auto g = line(9);
    ModelDims dims{1, 1, 0, 0};
    LinearCoefficients one;
    one.c = Expression::constant(1.0);
    auto tr = triplet_of(g, dims, GriddedField(g, 1, 5.0));
    for (double v : values_of(eval_drift(build_linear_operator(one, dims, g), {}, tr))) EXPECT_EQ(v, 5.0);

    LinearCoefficients minus;
    minus.c = Expression::constant(-1.0);
    auto tr2 = triplet_of(g, dims, scalar(g, [](double x) { return 1.0 + x * x; }));
    auto L = eval_drift(build_linear_operator(minus, dims, g), {}, tr2);
    for (std::size_t i = 0; i < g->size(); ++i) EXPECT_EQ(L(i, 0), -tr2.V(i, 0));
}

TEST(LinearOperator, SecondOrderTermOnQuadratic) {
    auto g = line(21);
    ModelDims dims{1, 1, 0, 0};
    LinearCoefficients c;
    c.a = {Expression::constant(1.0)};
    auto tr = triplet_of(g, dims, scalar(g, [](double x) { return x * x; }));
    for (double v : values_of(eval_drift(build_linear_operator(c, dims, g), {}, tr))) EXPECT_NEAR(v, 2.0, 1e-10);
}

TEST(LinearOperator, HeatTypeIsHalfLaplacian) {
    auto g = make_grid(DomainSpec::box({{0.0, 1.0}, {0.0, 1.0}}, 11));
    ModelDims dims{2, 1, 0, 0};
    LinearCoefficients c;
    c.a = {Expression::constant(0.5), Expression::constant(0.0), Expression::constant(0.0), Expression::constant(0.5)};
    auto V = GriddedField::sample(g, 1, [](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] * x[0] + 3.0 * x[1] * x[1];
    });
    auto tr = triplet_of(g, dims, V);
    // ½ (2 + 6)
    for (double v : values_of(eval_drift(build_linear_operator(c, dims, g), {}, tr))) EXPECT_NEAR(v, 4.0, 1e-9);
}

TEST(LinearOperator, DiffusionColumns) {
    auto g = line(11);
    ModelDims dims{1, 1, 2, 0};
    LinearCoefficients c;
    c.jc = Expression::constant(1.0);
    auto tr = triplet_of(g, dims, GriddedField(g, 1, 1.0));
    auto J = eval_diffusion(build_linear_operator(c, dims, g), {}, tr);
    ASSERT_EQ(J.components(), 2);
    for (double v : J.values()) EXPECT_EQ(v, 1.0);

    LinearCoefficients d;
    d.jb = {Expression::constant(1.0)};
    ModelDims one{1, 1, 1, 0};
    auto tr3 = triplet_of(g, one, scalar(g, [](double x) { return 3.0 * x; }));
    for (double v : values_of(eval_diffusion(build_linear_operator(d, one, g), {}, tr3))) EXPECT_NEAR(v, 3.0, 1e-10);
}

TEST(LinearOperator, Linearity) {
    auto g = line(17);
    ModelDims dims{1, 1, 1, 0};
    LinearCoefficients c;
    c.a = {ex("1 + x1^2")};
    c.b = {ex("sin(x1)")};
    c.c = ex("-0.5");
    c.bbar = {ex("cos(x1)")};
    auto op = build_linear_operator(c, dims, g);
    std::mt19937_64 rng(3);
    auto u = random_smooth_field(g, 1, rng), v = random_smooth_field(g, 1, rng);
    auto ub = random_smooth_field(g, 1, rng), vb = random_smooth_field(g, 1, rng);
    auto make = [&](const GriddedField& a, const GriddedField& b) {
        auto tr = FieldTriplet::zeros(g, dims, nullptr);
        tr.V = a;
        tr.Vbar = b;
        tr.V.cache_derivatives(2);
        tr.Vbar.cache_derivatives(2);
        return tr;
    };
    double alpha = 1.7, beta = -0.3;
    auto lhs = eval_drift(op, {}, make(alpha * u + beta * v, alpha * ub + beta * vb));
    auto rhs = alpha * eval_drift(op, {}, make(u, ub)) + beta * eval_drift(op, {}, make(v, vb));
    for (std::size_t i = 0; i < g->size(); ++i) EXPECT_NEAR(lhs(i, 0), rhs(i, 0), 1e-12 * (1.0 + std::abs(rhs(i, 0))));
}

TEST(LinearOperator, MissingCacheAndBadCoefficients) {
    auto g = line(9);
    ModelDims dims{1, 1, 0, 0};
    auto op = build_linear_operator({}, dims, g);
    auto tr = FieldTriplet::zeros(g, dims, nullptr);
    EXPECT_THROW(eval_drift(op, {}, tr), PreconditionError);

    LinearCoefficients bad;
    bad.c = ex("1 / (x1 - x1)");
    EXPECT_THROW(build_linear_operator(bad, dims, g), ConfigError);
    LinearCoefficients wrong;
    wrong.b = {Expression::constant(1.0), Expression::constant(1.0)};
    EXPECT_THROW(build_linear_operator(wrong, dims, g), ConfigError);
}

TEST(LinearOperator, NonFiniteOutputIsAnOperatorError) {
    auto g = line(9);
    ModelDims dims{1, 1, 0, 0};
    LinearCoefficients c;
    c.c = Expression::constant(1.0);
    auto op = build_linear_operator(c, dims, g);
    auto V = GriddedField(g, 1, 1.0);
    V(4, 0) = std::numeric_limits<double>::infinity();
    auto tr = triplet_of(g, dims, V);
    EXPECT_THROW(eval_drift(op, {}, tr), OperatorError);
}

TEST(Lipschitz, ZeroScaledAndBounded) {
    auto g = line(17);
    ModelDims dims{1, 1, 1, 0};
    auto sampler = smooth_triplet_sampler(g, dims, nullptr);
    auto z = estimate_lipschitz(zero_operator(dims), sampler, 5, 1, 9);
    EXPECT_EQ(z.estimate(), 0.0);

    LinearCoefficients c;
    c.a = {ex("0.5 + 0.25*x1")};
    c.b = {ex("x1")};
    c.c = ex("-1");
    c.cbar = ex("0.3");
    c.jc = ex("0.7");
    auto op = build_linear_operator(c, dims, g);
    auto e1 = estimate_lipschitz(op, sampler, 20, 0, 9);
    auto e2 = estimate_lipschitz(scaled(op, 2.0), sampler, 20, 0, 9);
    EXPECT_GT(e1.estimate(), 0.0);
    EXPECT_NEAR(e2.drift, 2.0 * e1.drift, 1e-12 * e2.drift);
    EXPECT_NEAR(e2.diffusion, 2.0 * e1.diffusion, 1e-12 * e2.diffusion);

    // triangle-inequality bound from the coefficients, summed independently
    double A = 0.75 + 1.0 + 1.0 + 0.3;
    auto bound = linear_analytic_bound(c, dims, g, 0);
    EXPECT_NEAR(bound.drift, A, 1e-12);
    EXPECT_LE(e1.drift, A);
    EXPECT_LE(e1.diffusion, 0.7 + 1e-12);
}

TEST(Lipschitz, IdenticalPairsAreSkipped) {
    auto g = line(9);
    ModelDims dims{1, 1, 0, 0};
    TripletSampler same = [&](std::mt19937_64&) {
        auto tr = FieldTriplet::zeros(g, dims, nullptr);
        tr.V = GriddedField(g, 1, 1.0);
        return tr;
    };
    auto e = estimate_lipschitz(zero_operator(dims), same, 3, 0, 1);
    EXPECT_EQ(e.skipped, 3u);
    EXPECT_FALSE(e.warnings.empty());
}

TEST(ExpressionOperator, PointwiseDriftAndDeterminism) {
    ModelDims dims{1, 1, 1, 0};
    auto op = build_expression_operator("-0.2*v + vbar1", {"0.5*v"}, dims, 0.5);
    auto g = line(5);
    auto tr = FieldTriplet::zeros(g, dims, nullptr);
    tr.V = GriddedField(g, 1, 2.0);
    tr.Vbar = GriddedField(g, 1, 1.0);
    auto L = eval_drift(op, {}, tr);
    for (double v : L.values()) EXPECT_NEAR(v, 0.6, 1e-15);
    auto L2 = eval_drift(op, {}, tr);
    for (std::size_t i = 0; i < g->size(); ++i) EXPECT_EQ(L(i, 0), L2(i, 0));
    for (double v : values_of(eval_diffusion(op, {}, tr))) EXPECT_EQ(v, 1.0);
}
