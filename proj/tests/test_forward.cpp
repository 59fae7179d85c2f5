#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "nlos/forward.hpp"
#include "nlos/forward_fft.hpp"
#include "nlos/vecops.hpp"

using namespace nlos;

namespace {

VoxelAlbedo random_volume(const SceneGrid& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    VoxelAlbedo u(g);
    for (double& v : u.data.flat()) v = n(rng);
    return u;
}

TransientCube random_transient(const SceneGrid& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    TransientCube t(g);
    for (double& v : t.data.flat()) v = n(rng);
    return t;
}

// Straight transcription of the sum over all (scan, voxel) pairs.
TransientCube naive_render(const VoxelAlbedo& u) {
    const SceneGrid& g = u.grid;
    TransientCube tau(g);
    for (std::size_t sy = 0; sy < g.ny; ++sy)
        for (std::size_t sx = 0; sx < g.nx; ++sx)
            for (std::size_t y = 0; y < g.ny; ++y)
                for (std::size_t x = 0; x < g.nx; ++x)
                    for (std::size_t z = 0; z < g.nz; ++z) {
                        const double dx = g.lateral_of(x) - g.lateral_of(sx);
                        const double dy = g.lateral_of(y) - g.lateral_of(sy);
                        const double dz = (static_cast<double>(z) + 1.0) * g.voxel_depth();
                        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                        const long t = std::lround(d / g.bin_length);
                        if (t < 0 || t >= static_cast<long>(g.nt)) continue;
                        tau.data(sy, sx, static_cast<std::size_t>(t)) += u.data(y, x, z) / std::pow(d, 4);
                    }
    return tau;
}

}  // namespace

TEST(Forward, SingleVoxelInFrontOfScanPoint) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 1.0, 0.01);
    VoxelAlbedo u(g);
    const std::size_t iz = 6;
    u.data(3, 5, iz) = 1.0;
    const TransientCube tau = render_transient(u);
    const double z0 = g.depth_of(iz);
    const auto col = tau.data.column(3, 5);
    const auto t0 = static_cast<std::size_t>(std::lround(z0 / g.bin_length));
    for (std::size_t t = 0; t < g.nt; ++t) {
        if (t == t0) EXPECT_NEAR(col[t], 1.0 / std::pow(z0, 4), 1e-9 / std::pow(z0, 4));
        else EXPECT_EQ(col[t], 0.0);
    }
}

TEST(Forward, ZeroInZeroOut) {
    const SceneGrid g = make_grid(6, 5, 7, 20, 0.5, 0.01);
    const ConfocalTransport A(g);
    const TransientCube t = A.forward(VoxelAlbedo(g));
    const VoxelAlbedo u = A.adjoint(TransientCube(g));
    for (double v : t.data.flat()) EXPECT_EQ(v, 0.0);
    for (double v : u.data.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, MatchesNaiveSummation) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 0.4, 0.01);
    for (std::uint64_t s = 1; s <= 10; ++s) {
        const VoxelAlbedo u = random_volume(g, s);
        const TransientCube a = render_transient(u);
        const TransientCube b = naive_render(u);
        const double scale = vec::norm(b.data.flat());
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            ASSERT_NEAR(a.data[i], b.data[i], 1e-12 * scale) << "seed " << s << " index " << i;
        }
    }
}

TEST(Forward, AdjointInnerProduct) {
    for (auto [nz, nt] : {std::pair{32, 64}, {32, 32}}) {
        const SceneGrid g = make_grid(16, 16, nz, nt, 1.0, 0.01);
        const ConfocalTransport A(g);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const VoxelAlbedo u = random_volume(g, 100 + s);
            const TransientCube t = random_transient(g, 200 + s);
            const TransientCube au = A.forward(u);
            const double lhs = vec::dot(au.data.flat(), t.data.flat());
            const double rhs = vec::dot(u.data.flat(), A.adjoint(t).data.flat());
            EXPECT_LE(std::abs(lhs - rhs) / (vec::norm(au.data.flat()) * vec::norm(t.data.flat())),
                      1e-10);
        }
    }
}

TEST(Forward, MaskedAdjointInnerProduct) {
    const SceneGrid g = make_grid(12, 12, 16, 32, 1.0, 0.01);
    const ConfocalTransport A(g);
    Array2<std::uint8_t> m(12, 12, 0);
    for (std::size_t y = 1; y < 12; y += 3)
        for (std::size_t x = 0; x < 12; x += 2) m(y, x) = 1;
    const ScanMask mask(m);
    const VoxelAlbedo u = random_volume(g, 7);
    const TransientCube t = random_transient(g, 8);
    const TransientCube au = A.forward(u, &mask);
    EXPECT_EQ(vec::norm(au.data.flat()), vec::norm(apply_selection(au, mask).data.flat()));
    const double lhs = vec::dot(au.data.flat(), t.data.flat());
    const double rhs = vec::dot(u.data.flat(), A.adjoint(t, &mask).data.flat());
    EXPECT_LE(std::abs(lhs - rhs) / (vec::norm(au.data.flat()) * vec::norm(t.data.flat())), 1e-10);
}

TEST(Forward, ImpulseAdjointIsShellFootprint) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 0.5, 0.01);
    const std::size_t sy = 2, sx = 5, t = 14;
    TransientCube tau(g);
    tau.data(sy, sx, t) = 1.0;
    const VoxelAlbedo u = adjoint_transient(tau);
    for (std::size_t y = 0; y < g.ny; ++y)
        for (std::size_t x = 0; x < g.nx; ++x)
            for (std::size_t z = 0; z < g.nz; ++z) {
                const double dx = g.lateral_of(x) - g.lateral_of(sx);
                const double dy = g.lateral_of(y) - g.lateral_of(sy);
                const double dz = g.depth_of(z);
                const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                const double expect = std::lround(d / g.bin_length) == static_cast<long>(t) ? std::pow(d, -4) : 0.0;
                ASSERT_NEAR(u.data(y, x, z), expect, 1e-9 * std::max(expect, 1.0));
            }
}

TEST(Forward, SelectionAllTrueIsIdentity) {
    const SceneGrid g = make_grid(5, 4, 3, 6, 1.0, 0.1);
    const TransientCube t = random_transient(g, 3);
    EXPECT_EQ(apply_selection(t, ScanMask::full(4, 5)).data, t.data);
}

TEST(Forward, SelectionRegularSublattice) {
    const SceneGrid g = make_grid(64, 64, 2, 4, 1.0, 0.1);
    const TransientCube t = random_transient(g, 4);
    Array2<std::uint8_t> m(64, 64, 0);
    for (std::size_t y = 0; y < 64; y += 4)
        for (std::size_t x = 0; x < 64; x += 4) m(y, x) = 1;
    const ScanMask mask(m);
    EXPECT_EQ(mask.count(), 256u);
    const TransientCube s = apply_selection(t, mask);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
            for (double v : s.data.column(y, x)) {
                if (y % 4 == 0 && x % 4 == 0) EXPECT_NE(v, 0.0);
                else EXPECT_EQ(v, 0.0);
            }
    EXPECT_THROW(apply_selection(t, ScanMask::full(8, 8)), std::invalid_argument);
}

TEST(Forward, NoiseIdentityWhenZero) {
    const SceneGrid g = make_grid(4, 4, 4, 8, 1.0, 0.1);
    const TransientCube t = random_transient(g, 9);
    EXPECT_EQ(add_noise(t, 0.0, 0.0, 123).data, t.data);
}

TEST(Forward, GaussianNoiseStatistics) {
    const SceneGrid g = make_grid(32, 32, 8, 64, 1.0, 0.1);
    const TransientCube n = add_noise(TransientCube(g), 1.0, 0.0, 42);
    const auto v = n.data.flat();
    const double cnt = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= cnt;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / cnt);
    EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(cnt));
    EXPECT_LT(std::abs(sd - 1.0), 3.0 / std::sqrt(cnt));
}

TEST(Forward, NoiseDeterministicPerSeed) {
    const SceneGrid g = make_grid(6, 6, 4, 10, 1.0, 0.1);
    TransientCube t(g);
    for (double& v : t.data.flat()) v = 3.0;
    EXPECT_EQ(add_noise(t, 0.5, 10.0, 77).data, add_noise(t, 0.5, 10.0, 77).data);
    EXPECT_NE(add_noise(t, 0.5, 10.0, 77).data, add_noise(t, 0.5, 10.0, 78).data);
    EXPECT_THROW(add_noise(t, -1.0, 0.0, 1), std::invalid_argument);
}

TEST(Forward, PlaneScene) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 1.0, 0.01);
    const VoxelAlbedo u = synth_scene(SceneKind::plane, g);
    std::size_t n = 0;
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            for (std::size_t z = 0; z < 16; ++z)
                if (u.data(y, x, z) != 0.0) {
                    ++n;
                    EXPECT_EQ(z, 8u);
                }
    EXPECT_EQ(n, 64u);
}

TEST(Forward, ScenesAreSingleValued) {
    const SceneGrid g = make_grid(32, 24, 64, 128, 1.0, 0.003);
    for (SceneKind k : {SceneKind::plane, SceneKind::sphere_cap, SceneKind::letter_T}) {
        const VoxelAlbedo u = synth_scene(k, g);
        std::size_t occupied = 0;
        for (std::size_t y = 0; y < g.ny; ++y)
            for (std::size_t x = 0; x < g.nx; ++x) {
                int nz = 0;
                for (double v : u.data.column(y, x)) nz += v != 0.0;
                EXPECT_LE(nz, 1);
                occupied += nz;
            }
        EXPECT_GT(occupied, 0u);
    }
}

TEST(Forward, SceneParsing) {
    EXPECT_EQ(parse_scene_kind("letter_T"), SceneKind::letter_T);
    try {
        parse_scene_kind("cube");
        FAIL();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        for (auto name : scene_kind_names) EXPECT_NE(msg.find(name), std::string::npos);
    }
}

TEST(Forward, OpNormOfIdentityIsOne) {
    const std::size_t n = 50;
    const double est = estimate_op_norm(
        [](std::span<const double> in, std::span<double> out) { std::ranges::copy(in, out.begin()); },
        n, 20);
    EXPECT_NEAR(est, 1.0, 1e-12);
}

TEST(Forward, OpNormMatchesDenseSvd) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 0.5, 0.01);
    const ConfocalTransport A(g);
    const std::size_t n = g.n_voxel();
    // A^T A materialized column by column.
    Eigen::MatrixXd ata(n, n);
    VoxelAlbedo e(g);
    for (std::size_t j = 0; j < n; ++j) {
        std::ranges::fill(e.data.flat(), 0.0);
        e.data[j] = 1.0;
        const VoxelAlbedo col = A.adjoint(A.forward(e));
        for (std::size_t i = 0; i < n; ++i) ata(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col.data[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ata, Eigen::EigenvaluesOnly);
    const double sigma_max = std::sqrt(es.eigenvalues().maxCoeff());
    const double est = estimate_op_norm(g, 20);
    EXPECT_NEAR(est, sigma_max, 0.01 * sigma_max);
    EXPECT_LE(est, sigma_max * (1 + 1e-9));
}

TEST(Forward, Linearity) {
    const SceneGrid g = make_grid(8, 8, 8, 16, 0.5, 0.01);
    const VoxelAlbedo u = random_volume(g, 11);
    VoxelAlbedo u2 = u;
    for (double& v : u2.data.flat()) v *= 2.0;
    const TransientCube a = render_transient(u), b = render_transient(u2);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_DOUBLE_EQ(b.data[i], 2.0 * a.data[i]);
}

TEST(ForwardFft, AdjointInnerProduct) {
    const SceneGrid g = make_grid(16, 16, 32, 64, 1.0, 0.01);
    const ResampledTransport F(g);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const VoxelAlbedo u = random_volume(g, 300 + s);
        const TransientCube t = random_transient(g, 400 + s);
        const TransientCube fu = F.forward(u);
        const double lhs = vec::dot(fu.data.flat(), t.data.flat());
        const double rhs = vec::dot(u.data.flat(), F.adjoint(t).data.flat());
        EXPECT_LE(std::abs(lhs - rhs) / (vec::norm(fu.data.flat()) * vec::norm(t.data.flat())), 1e-10);
    }
}

TEST(ForwardFft, AgreesWithReferenceOnSmoothVolume) {
    // Lateral pitch equal to one time bin, so transients are smooth at bin scale.
    const SceneGrid g = make_grid(32, 32, 64, 128, 32 * 0.003, 0.003);
    VoxelAlbedo u(g);
    for (std::size_t y = 0; y < g.ny; ++y)
        for (std::size_t x = 0; x < g.nx; ++x)
            for (std::size_t z = g.nz / 4; z < g.nz; ++z) {
                const double fy = (y + 0.5) / g.ny - 0.5, fx = (x + 0.5) / g.nx - 0.5;
                const double fz = (z + 0.5) / g.nz - 0.6;
                u.data(y, x, z) = std::exp(-(fx * fx + fy * fy) / 0.05 - fz * fz / 0.02);
            }
    const TransientCube ref = ConfocalTransport(g).forward(u);
    const TransientCube fast = ResampledTransport(g).forward(u);
    const double rel = vec::dist(ref.data.flat(), fast.data.flat()) / vec::norm(ref.data.flat());
    EXPECT_LT(rel, 0.05);
}

TEST(ForwardFft, SingleVoxelHitsReferenceBin) {
    const SceneGrid g = make_grid(8, 8, 16, 32, 1.0, 0.01);
    VoxelAlbedo u(g);
    u.data(3, 4, 10) = 1.0;
    const TransientCube a = ConfocalTransport(g).forward(u);
    const TransientCube b = ResampledTransport(g, 8).forward(u);
    for (std::size_t sy = 0; sy < g.ny; ++sy)
        for (std::size_t sx = 0; sx < g.nx; ++sx) {
            const auto ca = a.data.column(sy, sx);
            const auto cb = b.data.column(sy, sx);
            double ma = 0, mb = 0, ta = 0, tb = 0;
            for (std::size_t t = 0; t < g.nt; ++t) {
                ma += ca[t];
                mb += cb[t];
                ta += t * ca[t];
                tb += t * cb[t];
            }
            if (ma == 0.0) continue;
            // Resampling spreads the return over neighbouring bins but keeps
            // its mass and arrival time.
            EXPECT_NEAR(mb, ma, 0.02 * ma) << sy << "," << sx;
            EXPECT_NEAR(tb / mb, ta / ma, 0.5) << sy << "," << sx;
        }
}
