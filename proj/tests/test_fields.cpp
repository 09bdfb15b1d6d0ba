#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "bspde/error.hpp"
#include "bspde/fields.hpp"
#include "bspde/operators.hpp"

using namespace bspde;

namespace {

GridPtr line(double lo, double hi, int n) { return make_grid(DomainSpec::box({{lo, hi}}, n)); }

GriddedField scalar(const GridPtr& g, double (*fn)(double)) {
    return GriddedField::sample(g, 1, [fn](std::span<const double> x, std::span<double> out) { out[0] = fn(x[0]); });
}

LevySpec unit_atom(int channels) {
    LevySpec spec;
    for (int i = 0; i < channels; ++i) spec.channels.push_back(LevyChannel::atoms({{1.0, 1.0}}, 1.0));
    return spec;
}

// Sum of four cosines with frequencies |ω| <= 0.3 per axis.
GriddedField band_limited(const GridPtr& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto p = static_cast<std::size_t>(g->dim());
    std::vector<double> w(4 * p), phase(4), amp(4);
    for (auto& v : w) v = 0.3 * u(rng);
    for (int i = 0; i < 4; ++i) {
        phase[static_cast<std::size_t>(i)] = 3.0 * u(rng);
        amp[static_cast<std::size_t>(i)] = 0.25 * u(rng);
    }
    return GriddedField::sample(g, 1, [&](std::span<const double> x, std::span<double> out) {
        out[0] = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double arg = phase[i];
            for (std::size_t a = 0; a < p; ++a) arg += w[i * p + a] * x[a];
            out[0] += amp[i] * std::cos(arg);
        }
    });
}

}  // namespace

TEST(Grid, BoxNodes) {
    auto g = line(0.0, 1.0, 5);
    ASSERT_EQ(g->size(), 5u);
    EXPECT_DOUBLE_EQ(g->spacing(0), 0.25);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g->node(i)[0], 0.25 * static_cast<double>(i));
}

TEST(Grid, SquareIsLexicographic) {
    auto g = make_grid(DomainSpec::box({{0.0, 1.0}, {0.0, 1.0}}, 3));
    ASSERT_EQ(g->size(), 9u);
    // last axis fastest
    EXPECT_DOUBLE_EQ(g->node(1)[0], 0.0);
    EXPECT_DOUBLE_EQ(g->node(1)[1], 0.5);
    EXPECT_DOUBLE_EQ(g->node(3)[0], 0.5);
    EXPECT_DOUBLE_EQ(g->node(3)[1], 0.0);
}

TEST(Grid, OneDimensionalAnnulusIsTwoIntervals) {
    auto g = make_grid(DomainSpec::annulus(1, 1.0, 2.0, 4));
    ASSERT_EQ(g->size(), 10u);
    for (std::size_t i = 0; i < g->size(); ++i) {
        double a = std::abs(g->node(i)[0]);
        EXPECT_GE(a, 1.0 - 1e-12);
        EXPECT_LE(a, 2.0 + 1e-12);
    }
}

TEST(Grid, RejectsTooFewPoints) {
    EXPECT_THROW(make_grid(DomainSpec::box({{0.0, 1.0}}, 2)), ConfigError);
}

TEST(PartialDerivative, ConstantGivesZero) {
    auto g = line(0.0, 1.0, 11);
    GriddedField f(g, 1, 7.0);
    auto d = partial_derivative(f, {1});
    for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(PartialDerivative, CentralDifferenceExactOnQuadratic) {
    auto g = line(0.0, 2.0, 21);  // h = 0.1
    auto f = scalar(g, [](double x) { return x * x; });
    auto d = partial_derivative(f, {1});
    std::size_t at1 = g->find(std::vector<double>{1.0});
    ASSERT_NE(at1, SpatialGrid::npos);
    EXPECT_NEAR(d(at1, 0), 2.0, 1e-12);
    auto d2 = partial_derivative(f, {2});
    for (double v : d2.values()) EXPECT_NEAR(v, 2.0, 1e-9);
}

TEST(PartialDerivative, SineSlopeAtOrigin) {
    auto g = line(-1.0, 1.0, 41);  // h = 0.05
    auto f = scalar(g, [](double x) { return std::sin(x); });
    auto d = partial_derivative(f, {1});
    std::size_t at0 = g->find(std::vector<double>{0.0});
    EXPECT_NEAR(d(at0, 0), 1.0, 5e-4);
}

TEST(PartialDerivative, MixedPartialsCommute) {
    auto g = make_grid(DomainSpec::box({{0.0, 1.0}, {0.0, 1.0}}, 33));
    auto f = GriddedField::sample(g, 1, [](std::span<const double> x, std::span<double> out) {
        out[0] = std::sin(2.0 * x[0]) * std::exp(x[1]);
    });
    auto xy = partial_derivative(partial_derivative(f, {1, 0}), {0, 1});
    auto yx = partial_derivative(partial_derivative(f, {0, 1}), {1, 0});
    double h = g->spacing(0);
    for (std::size_t i = 0; i < g->size(); ++i) EXPECT_NEAR(xy(i, 0), yx(i, 0), 10 * h * h);
}

TEST(PartialDerivative, CoarseGridIsAResolutionError) {
    auto g = line(0.0, 1.0, 3);
    GriddedField f(g, 1, 1.0);
    EXPECT_THROW(partial_derivative(f, {3}), ResolutionError);
}

TEST(Cache, MissingDerivativeIsAPreconditionError) {
    auto g = line(0.0, 1.0, 9);
    GriddedField f(g, 1, 1.0);
    EXPECT_THROW(f.derivative({1}), PreconditionError);
    f.cache_derivatives(2);
    EXPECT_EQ(f.cached_order(), 2);
    EXPECT_NO_THROW(f.derivative({2}));
}

TEST(CkNorm, HandValues) {
    auto g = line(0.0, 1.0, 11);
    EXPECT_EQ(ck_norm(GriddedField(g, 1, 0.0), 3), 0.0);
    EXPECT_NEAR(ck_norm(scalar(g, [](double x) { return x; }), 1), 1.0, 1e-12);
    EXPECT_NEAR(ck_norm(GriddedField(g, 1, 3.0), 2), 3.0, 1e-15);
}

TEST(CinfNorm, ConstantFieldSeries) {
    auto g = line(0.0, 1.0, 33);
    NormWeights w;
    w.k_max = 15;
    // Σ_{k>=1} e^{-k} = 1/(e-1)
    double oracle = 2.0 * std::sqrt(1.0 / (std::numbers::e - 1.0));
    EXPECT_NEAR(cinf_norm(GriddedField(g, 1, 2.0), w), oracle, 1e-5);
    EXPECT_EQ(cinf_norm(GriddedField(g, 1, 0.0), w), 0.0);
}

TEST(NuNorm, SingleAndDoubleAtom) {
    auto g = line(0.0, 1.0, 5);
    EXPECT_EQ(nu_norm({{GriddedField(g, 1, 0.0)}}, unit_atom(1), 0), 0.0);
    EXPECT_NEAR(nu_norm({{GriddedField(g, 1, 2.0)}}, unit_atom(1), 0), 2.0, 1e-15);
    JumpField two{{GriddedField(g, 1, 2.0)}, {GriddedField(g, 1, 2.0)}};
    EXPECT_NEAR(nu_norm(two, unit_atom(2), 0), std::sqrt(8.0), 1e-14);
}

TEST(MgammaNorm, DeterministicUnitField) {
    auto g = line(0.0, 1.0, 5);
    TimeGrid tg{1.0, 8};
    ModelDims dims{1, 1, 1, 0};
    std::vector<std::vector<FieldTriplet>> steps;
    for (std::size_t j = 0; j <= tg.steps; ++j) {
        auto tr = FieldTriplet::zeros(g, dims, nullptr);
        tr.V = GriddedField(g, 1, 1.0);
        steps.push_back({tr});
    }
    StoredSeries series(tg, steps);
    NormWeights w;
    w.gamma = 0.0;
    EXPECT_NEAR(mgamma_norm_squared(series, w, 0), 1.0, 1e-14);
    w.gamma = 1.0;
    EXPECT_NEAR(mgamma_norm_squared(series, w, 0), std::exp(2.0), 1e-12);

    std::vector<std::vector<FieldTriplet>> zero(tg.steps + 1, {FieldTriplet::zeros(g, dims, nullptr)});
    w.k_max = 2;
    EXPECT_EQ(mgamma_norm(StoredSeries(tg, zero), w), 0.0);
}

TEST(MgammaNorm, NondecreasingInGamma) {
    auto g = line(0.0, 1.0, 9);
    TimeGrid tg{1.0, 4};
    ModelDims dims{1, 1, 1, 0};
    std::mt19937_64 rng(5);
    std::vector<std::vector<FieldTriplet>> steps;
    for (std::size_t j = 0; j <= tg.steps; ++j) {
        auto tr = FieldTriplet::zeros(g, dims, nullptr);
        tr.V = random_smooth_field(g, 1, rng);
        tr.Vbar = random_smooth_field(g, 1, rng);
        steps.push_back({tr});
    }
    StoredSeries series(tg, steps);
    double prev = 0.0;
    for (double gamma : {0.0, 0.5, 1.0, 2.0}) {
        NormWeights w;
        w.gamma = gamma;
        w.k_max = 4;
        double v = mgamma_norm(series, w);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(AnnulusNorm, GeometricSeriesAndSingleShell) {
    // b = 0, shells D_1..D_20 each holding a constant field with cinf_norm 1
    NormWeights w;
    w.k_max = 4;
    double partial = 0.0;
    for (int k = 1; k <= w.k_max; ++k) partial += std::exp(-k);
    double c = 1.0 / std::sqrt(partial);
    std::vector<GridPtr> shells;
    for (int n = 1; n <= 20; ++n) shells.push_back(make_grid(DomainSpec::annulus(1, 0.0, n, 4)));
    GriddedField f(shells.back(), 1, c);
    double oracle = 1.0 / (std::numbers::e * (std::numbers::e - 1.0));
    EXPECT_NEAR(annulus_norm(f, shells, 0, w), oracle, 1e-5);

    // only D_{b+1}
    std::vector<GridPtr> one{shells.front()};
    GriddedField f1(one.front(), 1, 1.0);
    EXPECT_NEAR(annulus_norm(f1, one, 0, w), std::exp(-2.0) * cinf_norm(f1, w), 1e-14);
    EXPECT_THROW(annulus_norm(f1, {}, 0, w), ConfigError);
}

TEST(NormProperties, HomogeneityTriangleMonotonicity) {
    // unit lattice spacing and low frequencies keep every discrete derivative
    // bounded; on fine grids order-k differences amplify round-off by ~(4/h²)^(k/2)
    auto g = make_grid(DomainSpec::box({{0.0, 16.0}, {0.0, 16.0}}, 17));
    std::mt19937_64 rng(11);
    NormWeights w;
    w.k_max = 8;
    for (int trial = 0; trial < 20; ++trial) {
        auto f = band_limited(g, rng), h = band_limited(g, rng);
        double alpha = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
        EXPECT_NEAR(ck_norm(alpha * f, 3), std::abs(alpha) * ck_norm(f, 3), 1e-12 * std::abs(alpha) * ck_norm(f, 3));
        EXPECT_NEAR(cinf_norm(alpha * f, w), std::abs(alpha) * cinf_norm(f, w), 1e-12 * std::abs(alpha) * cinf_norm(f, w));
        EXPECT_LE(ck_norm(f + h, 3), ck_norm(f, 3) + ck_norm(h, 3) + 1e-12);
        EXPECT_LE(cinf_norm(f + h, w), cinf_norm(f, w) + cinf_norm(h, w) + 1e-12);
        for (int k = 0; k < 8; ++k) EXPECT_LE(ck_norm(f, k), ck_norm(f, k + 1));
    }
}

TEST(NormProperties, TruncationStableFrom15To20) {
    auto g = make_grid(DomainSpec::box({{0.0, 24.0}}, 25));
    std::mt19937_64 rng(2);
    NormWeights w15, w20;
    w15.k_max = 15;
    w20.k_max = 20;
    for (int trial = 0; trial < 10; ++trial) {
        auto f = band_limited(g, rng);
        EXPECT_LT(std::abs(cinf_norm(f, w20) - cinf_norm(f, w15)), 1e-5);
    }
}

TEST(FieldCsv, HeaderAndShortestDoubles) {
    auto g = line(0.0, 1.0, 3);
    auto f = scalar(g, [](double x) { return 0.1 + x; });
    std::ostringstream os;
    write_field_csv(os, f, "v");
    EXPECT_EQ(os.str(), "x1,v\n0,0.1\n0.5,0.6\n1,1.1\n");
    EXPECT_EQ(format_double(0.1), "0.1");
}
