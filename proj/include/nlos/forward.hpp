#pragma once

// Discrete confocal light transport:
//
//   tau(x', t) = sum_x u(x) / |x' - x|^4 * [round(|x' - x| / bin_length) == t]
//
// Every voxel lands in exactly one bin per scan point, so the operator is a
// sparse matrix with one entry per (scan, voxel) pair inside the time window.
// The entries depend only on the lateral offset |x' - x| and the voxel depth,
// which is what ConfocalTransport tabulates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nlos/grid.hpp"
#include "nlos/vecops.hpp"

namespace nlos {

/// Linear map between volumes and transients. A null mask means every scan point.
class TransportOperator {
public:
    virtual ~TransportOperator() = default;
    virtual const SceneGrid& grid() const = 0;
    virtual TransientCube forward(const VoxelAlbedo& u, const ScanMask* mask = nullptr) const = 0;
    virtual VoxelAlbedo adjoint(const TransientCube& tau, const ScanMask* mask = nullptr) const = 0;
};

class ConfocalTransport final : public TransportOperator {
public:
    explicit ConfocalTransport(const SceneGrid& grid) : grid_(grid) {
        const double h = grid.pitch();
        offsets_.resize(grid.ny * grid.nx);
        reach_x_ = 0;
        reach_y_ = 0;
        for (std::size_t ady = 0; ady < grid.ny; ++ady) {
            for (std::size_t adx = 0; adx < grid.nx; ++adx) {
                const double rx = static_cast<double>(adx) * h;
                const double ry = static_cast<double>(ady) * h;
                const double r2 = rx * rx + ry * ry;
                Run run{static_cast<std::uint32_t>(bins_.size()), 0};
                for (std::size_t iz = 0; iz < grid.nz; ++iz) {
                    const double z = grid.depth_of(iz);
                    const double d2 = r2 + z * z;
                    const double d = std::sqrt(d2);
                    const long b = grid.bin_of_distance(d);
                    // d grows with iz, so the valid entries form a prefix.
                    if (b >= static_cast<long>(grid.nt)) break;
                    bins_.push_back(static_cast<std::int32_t>(b));
                    weights_.push_back(1.0 / (d2 * d2));
                    ++run.count;
                }
                offsets_[ady * grid.nx + adx] = run;
                if (run.count > 0) {
                    reach_x_ = std::max(reach_x_, adx);
                    reach_y_ = std::max(reach_y_, ady);
                }
            }
        }
    }

    const SceneGrid& grid() const override { return grid_; }

    /// Number of stored (scan, voxel) entries for a full scan; the cost of one apply.
    std::size_t nnz(const ScanMask* mask = nullptr) const {
        std::size_t n = 0;
        for_each_pair(mask, [&](std::size_t, std::size_t, std::size_t, std::size_t, const Run& r) {
            n += r.count;
        });
        return n;
    }

    TransientCube forward(const VoxelAlbedo& u, const ScanMask* mask = nullptr) const override {
        require_same_grid(u.grid, grid_, "ConfocalTransport::forward");
        check_mask(mask);
        TransientCube tau(grid_);
        // Depth extent of the nonzero part of each column; zero columns are skipped.
        std::vector<std::uint32_t> extent(grid_.ny * grid_.nx, 0);
        for (std::size_t y = 0; y < grid_.ny; ++y) {
            for (std::size_t x = 0; x < grid_.nx; ++x) {
                const auto col = u.data.column(y, x);
                std::uint32_t e = 0;
                for (std::size_t iz = col.size(); iz > 0; --iz) {
                    if (col[iz - 1] != 0.0) {
                        e = static_cast<std::uint32_t>(iz);
                        break;
                    }
                }
                extent[y * grid_.nx + x] = e;
            }
        }
        for_each_pair(mask, [&](std::size_t sy, std::size_t sx, std::size_t y, std::size_t x,
                                const Run& run) {
            const std::uint32_t n = std::min(run.count, extent[y * grid_.nx + x]);
            if (n == 0) return;
            double* out = tau.data.column(sy, sx).data();
            const double* col = u.data.column(y, x).data();
            const std::int32_t* b = bins_.data() + run.start;
            const double* w = weights_.data() + run.start;
            for (std::uint32_t iz = 0; iz < n; ++iz) out[b[iz]] += w[iz] * col[iz];
        });
        return tau;
    }

    VoxelAlbedo adjoint(const TransientCube& tau, const ScanMask* mask = nullptr) const override {
        require_same_grid(tau.grid, grid_, "ConfocalTransport::adjoint");
        check_mask(mask);
        VoxelAlbedo u(grid_);
        for_each_pair(mask, [&](std::size_t sy, std::size_t sx, std::size_t y, std::size_t x,
                                const Run& run) {
            const double* in = tau.data.column(sy, sx).data();
            double* col = u.data.column(y, x).data();
            const std::int32_t* b = bins_.data() + run.start;
            const double* w = weights_.data() + run.start;
            for (std::uint32_t iz = 0; iz < run.count; ++iz) col[iz] += w[iz] * in[b[iz]];
        });
        return u;
    }

    /// Squared column norms of S*A, i.e. the diagonal of (SA)^T (SA).
    Array3<double> column_norms_sq(const ScanMask* mask = nullptr) const {
        check_mask(mask);
        Array3<double> out(grid_.ny, grid_.nx, grid_.nz, 0.0);
        for_each_pair(mask, [&](std::size_t, std::size_t, std::size_t y, std::size_t x,
                                const Run& run) {
            double* col = out.column(y, x).data();
            const double* w = weights_.data() + run.start;
            for (std::uint32_t iz = 0; iz < run.count; ++iz) col[iz] += w[iz] * w[iz];
        });
        return out;
    }

private:
    struct Run {
        std::uint32_t start;
        std::uint32_t count;
    };

    void check_mask(const ScanMask* mask) const {
        if (mask && (mask->ny() != grid_.ny || mask->nx() != grid_.nx)) {
            throw std::invalid_argument("ConfocalTransport: mask shape does not match grid");
        }
    }

    // Visits (scan, voxel column) pairs in a fixed order: scans row-major outer,
    // columns row-major inner, restricted to lateral offsets that reach the window.
    template <class F>
    void for_each_pair(const ScanMask* mask, F&& f) const {
        for (std::size_t sy = 0; sy < grid_.ny; ++sy) {
            const std::size_t y0 = sy > reach_y_ ? sy - reach_y_ : 0;
            const std::size_t y1 = std::min(grid_.ny, sy + reach_y_ + 1);
            for (std::size_t sx = 0; sx < grid_.nx; ++sx) {
                if (mask && !(*mask)(sy, sx)) continue;
                const std::size_t x0 = sx > reach_x_ ? sx - reach_x_ : 0;
                const std::size_t x1 = std::min(grid_.nx, sx + reach_x_ + 1);
                for (std::size_t y = y0; y < y1; ++y) {
                    const std::size_t ady = y > sy ? y - sy : sy - y;
                    for (std::size_t x = x0; x < x1; ++x) {
                        const std::size_t adx = x > sx ? x - sx : sx - x;
                        const Run& run = offsets_[ady * grid_.nx + adx];
                        if (run.count == 0) continue;
                        f(sy, sx, y, x, run);
                    }
                }
            }
        }
    }

    SceneGrid grid_;
    std::vector<Run> offsets_;  // [ady][adx]
    std::vector<std::int32_t> bins_;
    std::vector<double> weights_;
    std::size_t reach_x_ = 0;
    std::size_t reach_y_ = 0;
};

inline TransientCube render_transient(const VoxelAlbedo& u) {
    return ConfocalTransport(u.grid).forward(u);
}

inline VoxelAlbedo adjoint_transient(const TransientCube& tau) {
    return ConfocalTransport(tau.grid).adjoint(tau);
}

inline TransientCube apply_selection(const TransientCube& tau, const ScanMask& mask) {
    if (mask.ny() != tau.grid.ny || mask.nx() != tau.grid.nx) {
        throw std::invalid_argument("apply_selection: mask shape does not match grid");
    }
    TransientCube out = tau;
    for (std::size_t y = 0; y < tau.grid.ny; ++y) {
        for (std::size_t x = 0; x < tau.grid.nx; ++x) {
            if (!mask(y, x)) std::ranges::fill(out.data.column(y, x), 0.0);
        }
    }
    return out;
}

/// Optional Poisson (shot) noise at `poisson_scale` counts per unit, then
/// additive Gaussian noise. Both zero is the identity.
inline TransientCube add_noise(const TransientCube& tau, double gauss_sigma, double poisson_scale,
                               std::uint64_t seed) {
    if (gauss_sigma < 0 || poisson_scale < 0) {
        throw std::invalid_argument("add_noise: noise levels must be >= 0");
    }
    TransientCube out = tau;
    if (gauss_sigma == 0 && poisson_scale == 0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : out.data.flat()) {
        if (poisson_scale > 0) {
            std::poisson_distribution<long long> pois(std::max(v, 0.0) * poisson_scale);
            v = static_cast<double>(pois(rng)) / poisson_scale;
        }
        if (gauss_sigma > 0) v += gauss_sigma * gauss(rng);
    }
    return out;
}

enum class SceneKind { plane, sphere_cap, letter_T };

inline constexpr std::array<std::string_view, 3> scene_kind_names{"plane", "sphere_cap",
                                                                  "letter_T"};

inline SceneKind parse_scene_kind(std::string_view s) {
    if (s == "plane") return SceneKind::plane;
    if (s == "sphere_cap") return SceneKind::sphere_cap;
    if (s == "letter_T") return SceneKind::letter_T;
    throw std::invalid_argument("unknown scene '" + std::string(s) +
                                "' (valid: plane, sphere_cap, letter_T)");
}

/// Single-layer test scenes with unit albedo: at most one voxel per column.
inline VoxelAlbedo synth_scene(SceneKind kind, const SceneGrid& g) {
    VoxelAlbedo u(g);
    const std::size_t mid = g.nz / 2;
    const double nx = static_cast<double>(g.nx);
    const double ny = static_cast<double>(g.ny);
    switch (kind) {
        case SceneKind::plane:
            for (std::size_t y = 0; y < g.ny; ++y)
                for (std::size_t x = 0; x < g.nx; ++x) u.data(y, x, mid) = 1.0;
            break;
        case SceneKind::sphere_cap: {
            // Cap of a sphere bulging toward the wall, centered laterally.
            const double cx = 0.5 * (nx - 1.0);
            const double cy = 0.5 * (ny - 1.0);
            const double radius = 0.375 * std::min(nx, ny);
            const double back = 0.65 * static_cast<double>(g.nz);
            const double height = 0.3 * static_cast<double>(g.nz);
            for (std::size_t y = 0; y < g.ny; ++y) {
                for (std::size_t x = 0; x < g.nx; ++x) {
                    const double dx = (static_cast<double>(x) - cx) / radius;
                    const double dy = (static_cast<double>(y) - cy) / radius;
                    const double rr = dx * dx + dy * dy;
                    if (rr > 1.0) continue;
                    const long iz = std::lround(back - height * std::sqrt(1.0 - rr));
                    u.data(y, x, static_cast<std::size_t>(
                                     std::clamp<long>(iz, 0, static_cast<long>(g.nz) - 1))) = 1.0;
                }
            }
            break;
        }
        case SceneKind::letter_T: {
            auto in = [](double v, double lo, double hi) { return v >= lo && v < hi; };
            for (std::size_t y = 0; y < g.ny; ++y) {
                for (std::size_t x = 0; x < g.nx; ++x) {
                    const double fx = (static_cast<double>(x) + 0.5) / nx;
                    const double fy = (static_cast<double>(y) + 0.5) / ny;
                    const bool bar = in(fy, 0.2, 0.35) && in(fx, 0.2, 0.8);
                    const bool stem = in(fy, 0.35, 0.8) && in(fx, 0.4, 0.6);
                    if (bar || stem) u.data(y, x, mid) = 1.0;
                }
            }
            break;
        }
    }
    return u;
}

/// Power iteration for the largest eigenvalue of a symmetric PSD map M = A^T A
/// acting on vectors of length n; returns the estimate of ||A||_2 = sqrt(lambda_max).
/// The estimate is nondecreasing in `iters`.
inline double estimate_op_norm(const std::function<void(std::span<const double>, std::span<double>)>&
                                   apply_normal,
                               std::size_t n, int iters) {
    if (iters < 1) throw std::invalid_argument("estimate_op_norm: iters must be >= 1");
    std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> y(n, 0.0);
    double est = 0.0;
    for (int k = 0; k < iters; ++k) {
        std::ranges::fill(y, 0.0);
        apply_normal(x, y);
        const double ny = vec::norm(y);
        est = ny;
        if (ny == 0.0) break;
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ny;
    }
    return std::sqrt(est);
}

inline double estimate_op_norm(const TransportOperator& op, int iters,
                               const ScanMask* mask = nullptr) {
    const SceneGrid& g = op.grid();
    VoxelAlbedo u(g);
    return estimate_op_norm(
        [&](std::span<const double> in, std::span<double> out) {
            std::ranges::copy(in, u.data.flat().begin());
            const VoxelAlbedo back = op.adjoint(op.forward(u, mask), mask);
            std::ranges::copy(back.data.flat(), out.begin());
        },
        g.n_voxel(), iters);
}

inline double estimate_op_norm(const SceneGrid& grid, int iters) {
    return estimate_op_norm(ConfocalTransport(grid), iters);
}

}  // namespace nlos
