#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nlos/forward.hpp"
#include "nlos/grid.hpp"

using namespace nlos;

TEST(Grid, VoxelDepthFromTimeWindow) {
    const SceneGrid g = make_grid(32, 32, 64, 128, 1.0, 0.003);
    EXPECT_DOUBLE_EQ(g.voxel_depth(), 0.003);
    EXPECT_DOUBLE_EQ(g.pitch(), 1.0 / 32.0);
    EXPECT_EQ(g.n_voxel(), 32u * 32u * 64u);
    EXPECT_EQ(g.n_scan(), 32u * 32u);
}

TEST(Grid, MinimalGrid) {
    const SceneGrid g = make_grid(1, 1, 1, 1, 1.0, 0.01);
    EXPECT_DOUBLE_EQ(g.voxel_depth(), 0.005);
    EXPECT_DOUBLE_EQ(g.lateral_of(0), 0.0);
}

TEST(Grid, RejectsBadDimensions) {
    EXPECT_THROW(make_grid(0, 8, 8, 8, 1.0, 0.01), std::invalid_argument);
    EXPECT_THROW(make_grid(8, 0, 8, 8, 1.0, 0.01), std::invalid_argument);
    EXPECT_THROW(make_grid(8, 8, 0, 8, 1.0, 0.01), std::invalid_argument);
    EXPECT_THROW(make_grid(8, 8, 8, 0, 1.0, 0.01), std::invalid_argument);
    EXPECT_THROW(make_grid(8, 8, 8, 8, 0.0, 0.01), std::invalid_argument);
    EXPECT_THROW(make_grid(8, 8, 8, 8, 1.0, -1.0), std::invalid_argument);
}

TEST(Grid, LateralCoordinatesCentered) {
    const SceneGrid g = make_grid(4, 4, 4, 8, 1.0, 0.01);
    EXPECT_DOUBLE_EQ(g.lateral_of(0), -0.375);
    EXPECT_DOUBLE_EQ(g.lateral_of(3), 0.375);
}

TEST(Grid, BinOfDepthTotalAndInRange) {
    for (auto [nz, nt] : {std::pair{64, 128}, {16, 32}, {7, 50}, {1, 1}, {40, 40}}) {
        const SceneGrid g = make_grid(4, 4, nz, nt, 1.0, 0.003);
        for (std::size_t iz = 0; iz < g.nz; ++iz) {
            const long b = g.bin_of_depth(iz);
            EXPECT_GE(b, 0);
            EXPECT_LT(b, static_cast<long>(g.nt));
        }
    }
}

TEST(Grid, ScanMaskNeedsOneTrueEntry) {
    EXPECT_THROW(ScanMask(Array2<std::uint8_t>(3, 3, 0)), std::invalid_argument);
    Array2<std::uint8_t> m(3, 3, 0);
    m(1, 2) = 7;
    const ScanMask s(m);
    EXPECT_EQ(s.count(), 1u);
    EXPECT_TRUE(s(1, 2));
    EXPECT_EQ(s.raw()(1, 2), 1);
}

TEST(Grid, GammaFromExamples) {
    const SceneGrid g = make_grid(2, 2, 1, 2, 1.0, 0.01);
    TransientCube ones(g);
    for (double& v : ones.data.flat()) v = 1.0;
    EXPECT_DOUBLE_EQ(gamma_from(1.0, ones), 8.0);
    EXPECT_DOUBLE_EQ(gamma_from(0.0, ones), 0.0);
}

TEST(Grid, GammaFromMatchesIndependentSum) {
    const SceneGrid g = make_grid(12, 12, 16, 32, 1.0, 0.02);
    const TransientCube tau = render_transient(synth_scene(SceneKind::sphere_cap, g));
    // Second pass in a different order (reverse, long double).
    long double s = 0;
    const auto v = tau.data.flat();
    for (std::size_t i = v.size(); i > 0; --i) s += v[i - 1];
    const double expect = 5e-7 * static_cast<double>(s);
    EXPECT_NEAR(gamma_from(5e-7, tau), expect, 1e-12 * std::abs(expect));
}

TEST(Grid, GammaFromLinear) {
    const SceneGrid g = make_grid(3, 3, 2, 4, 1.0, 0.1);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0, 1);
    TransientCube a(g), b(g), ab(g);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = U(rng);
        b.data[i] = U(rng);
        ab.data[i] = a.data[i] + b.data[i];
    }
    EXPECT_NEAR(gamma_from(2.0, ab), gamma_from(2.0, a) + gamma_from(2.0, b), 1e-12);
    EXPECT_NEAR(gamma_from(3.0, a), 3.0 * gamma_from(1.0, a), 1e-12);
}

TEST(Grid, ParamsDefaultsAndValidation) {
    SolverParams p;
    EXPECT_EQ(p.rho, 25.0);
    EXPECT_EQ(p.eta, 1e-5);
    EXPECT_EQ(p.r1, 0.1);
    EXPECT_EQ(p.r2, 2.0);
    EXPECT_EQ(p.r3, 20.0);
    EXPECT_EQ(p.p, 4);
    EXPECT_EQ(p.k_max, 120);
    EXPECT_FALSE(p.nonneg_clamp);
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.sigma = 1.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.lambda = 0.0;
    EXPECT_NO_THROW(p.validate());
    p.r3 = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}
