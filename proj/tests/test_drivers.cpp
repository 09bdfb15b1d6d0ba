#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "bspde/drivers.hpp"
#include "bspde/error.hpp"

using namespace bspde;

namespace {

struct Moments {
    double mean = 0.0, var = 0.0, se = 0.0;
};

Moments moments(const std::vector<double>& x) {
    Moments m;
    const double n = static_cast<double>(x.size());
    m.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= n - 1.0;
    m.se = std::sqrt(m.var / n);
    return m;
}

LevySpec atom_spec(double z, double mass, double lambda) {
    LevySpec s;
    s.channels.push_back(LevyChannel::atoms({{z, mass}}, lambda));
    return s;
}

}  // namespace

TEST(Brownian, StartsAtZeroAndIsDeterministic) {
    ModelDims dims{1, 1, 2, 0};
    TimeGrid tg{1.0, 8};
    auto a = simulate_brownian(dims, tg, 42, 50);
    auto b = simulate_brownian(dims, tg, 42, 50, 3);
    for (std::size_t p = 0; p < 50; ++p) {
        EXPECT_EQ(a.W(p, 0)[0], 0.0);
        EXPECT_EQ(a.W(p, 0)[1], 0.0);
        for (std::size_t j = 0; j <= tg.steps; ++j)
            for (int l = 0; l < 2; ++l) EXPECT_EQ(a.W(p, j)[static_cast<std::size_t>(l)], b.W(p, j)[static_cast<std::size_t>(l)]);
    }
}

TEST(Brownian, TerminalMomentsAndIndependence) {
    ModelDims dims{1, 1, 2, 0};
    TimeGrid tg{1.0, 4};
    const std::size_t n = 100000;
    auto dr = simulate_brownian(dims, tg, 7, n);
    std::vector<double> w1(n), w2(n), prod(n);
    for (std::size_t p = 0; p < n; ++p) {
        w1[p] = dr.W(p, tg.steps)[0];
        w2[p] = dr.W(p, tg.steps)[1];
        prod[p] = w1[p] * w2[p];
    }
    auto m1 = moments(w1);
    EXPECT_LT(std::abs(m1.mean), 3.0 * std::sqrt(1.0 / n));
    EXPECT_NEAR(m1.var, 1.0, 0.03);
    auto c = moments(prod);
    EXPECT_LT(std::abs(c.mean), 3.0 * c.se);
}

TEST(Brownian, PathDoesNotDependOnPathCount) {
    ModelDims dims{1, 1, 1, 0};
    TimeGrid tg{1.0, 4};
    auto few = simulate_brownian(dims, tg, 3, 5);
    auto many = simulate_brownian(dims, tg, 3, 500);
    for (std::size_t p = 0; p < 5; ++p)
        for (std::size_t j = 0; j < tg.steps; ++j) EXPECT_EQ(few.dW(p, j)[0], many.dW(p, j)[0]);
}

TEST(Subordinator, ZeroMassMeansNoJumps) {
    TimeGrid tg{1.0, 8};
    auto dr = simulate_subordinator(atom_spec(1.0, 0.0, 1.0), tg, 1, 100);
    for (std::size_t p = 0; p < 100; ++p) EXPECT_EQ(dr.L(p, tg.steps)[0], 0.0);
}

TEST(Subordinator, MeanOfSingleAtom) {
    // E L(1) = λ t z mass = 2, Var L(1) = λ t z² mass = 2
    TimeGrid tg{1.0, 8};
    const std::size_t n = 100000;
    auto dr = simulate_subordinator(atom_spec(1.0, 2.0, 1.0), tg, 11, n);
    std::vector<double> L1(n);
    for (std::size_t p = 0; p < n; ++p) L1[p] = dr.L(p, tg.steps)[0];
    EXPECT_LT(std::abs(moments(L1).mean - 2.0), 3.0 * std::sqrt(2.0 / n));
}

TEST(Subordinator, NondecreasingAndUncorrelatedIncrements) {
    LevySpec s;
    s.channels.push_back(LevyChannel::named("gamma", 1.0, 2.0, 3.0, 0.0, 1.5, 8));
    TimeGrid tg{1.0, 2};
    const std::size_t n = 50000;
    auto dr = simulate_subordinator(s, tg, 5, n);
    std::vector<double> a(n), b(n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t j = 0; j < tg.steps; ++j) ASSERT_LE(dr.L(p, j)[0], dr.L(p, j + 1)[0]);
        a[p] = dr.L(p, 1)[0] - dr.L(p, 0)[0];
        b[p] = dr.L(p, 2)[0] - dr.L(p, 1)[0];
    }
    const double ma = moments(a).mean, mb = moments(b).mean;
    std::vector<double> cov(n);
    for (std::size_t p = 0; p < n; ++p) cov[p] = (a[p] - ma) * (b[p] - mb);
    auto c = moments(cov);
    EXPECT_LT(std::abs(c.mean), 3.0 * c.se);
    // subordinator mean λ t ∫ z ν(dz) over the retained measure
    const double expect = 1.5 * s.channels[0].mean_jump_mass();
    std::vector<double> L1(n);
    for (std::size_t p = 0; p < n; ++p) L1[p] = dr.L(p, 2)[0];
    auto m = moments(L1);
    EXPECT_LT(std::abs(m.mean - expect), 3.0 * m.se);
}

TEST(Compensate, PureCompensatorAndMartingaleMean) {
    TimeGrid tg{1.0, 4};
    const std::size_t n = 100000;
    auto spec = atom_spec(0.5, 3.0, 1.0);
    auto dr = compensate(simulate_subordinator(spec, tg, 13, n), spec);
    ASSERT_TRUE(dr.compensated());
    const double comp = 1.0 * 3.0 * tg.dt();
    EXPECT_DOUBLE_EQ(dr.compensator(0, 0), comp);
    std::vector<double> total(n);
    bool saw_empty = false;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t j = 0; j < tg.steps; ++j) {
            if (dr.count(p, 0, j, 0) == 0.0) {
                EXPECT_EQ(dr.dN(p, 0, j, 0), -comp);
                saw_empty = true;
            }
            total[p] += dr.dN(p, 0, j, 0);
        }
    EXPECT_TRUE(saw_empty);
    auto m = moments(total);
    EXPECT_LT(std::abs(m.mean), 3.0 * m.se);
}

TEST(Compensate, CompensatorIsLinearInIntensity) {
    TimeGrid tg{1.0, 4};
    auto one = atom_spec(0.5, 3.0, 1.0);
    auto two = atom_spec(0.5, 3.0, 2.0);
    auto a = compensate(simulate_subordinator(one, tg, 1, 10), one);
    auto b = compensate(simulate_subordinator(two, tg, 1, 10), two);
    EXPECT_EQ(b.compensator(0, 0), 2.0 * a.compensator(0, 0));
}

TEST(Drivers, CombinedPathsAndCsv) {
    ModelDims dims{1, 1, 1, 1};
    TimeGrid tg{1.0, 2};
    auto spec = atom_spec(1.0, 1.0, 1.0);
    auto dr = simulate_drivers(dims, spec, tg, 9, 3);
    EXPECT_EQ(dr.brownian_dim(), 1);
    EXPECT_EQ(dr.channels(), 1u);
    std::ostringstream os;
    write_driver_csv(os, dr, 1);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "path,step,t,kind,channel,value");
}

TEST(DriverView, NoLookahead) {
    ModelDims dims{1, 1, 1, 0};
    TimeGrid tg{1.0, 4};
    auto dr = simulate_brownian(dims, tg, 1, 2);
    DriverView v(&dr, 1, 2);
    EXPECT_EQ(v.W()[0], dr.W(1, 2)[0]);
    EXPECT_NO_THROW(v.W_at(1));
    EXPECT_THROW(v.W_at(3), PreconditionError);
}

TEST(Levy, InvalidSpecsRejected) {
    EXPECT_THROW(LevyChannel::atoms({{-1.0, 1.0}}, 1.0).validate(), ConfigError);
    EXPECT_THROW(LevyChannel::atoms({{1.0, 1.0}}, 0.0).validate(), ConfigError);
}
