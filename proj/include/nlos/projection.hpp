#pragma once

// Weighted projection of a volume onto the wall-parallel plane, and the
// selective back-projection that places each albedo value at its depth.
//
// For a column with positive entries u_i at depth indices z_i:
//   w_i = u_i^p / sum_j u_j^p,   I = sum_i w_i u_i,   D = round(sum_i w_i z_i) + 1
// Columns without positive entries are EMPTY (D = 0, I = 0).

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

#include "nlos/grid.hpp"

namespace nlos {

/// Entries at or below this fraction of the volume maximum count as zero.
inline constexpr double projection_zero_fraction = 1e-12;

struct Projection {
    AlbedoMap albedo;
    DepthMap depth;
};

inline Projection project(const VoxelAlbedo& u, int p) {
    if (p < 1) throw std::invalid_argument("project: weight power p must be >= 1");
    const SceneGrid& g = u.grid;
    Projection out{AlbedoMap(g.ny, g.nx), DepthMap(g.ny, g.nx)};

    double vmax = 0.0;
    for (double v : u.data.flat()) vmax = std::max(vmax, v);
    if (!(vmax > 0.0)) return out;
    const double thr = projection_zero_fraction * vmax;

    for (std::size_t y = 0; y < g.ny; ++y) {
        for (std::size_t x = 0; x < g.nx; ++x) {
            const auto col = u.data.column(y, x);
            double cmax = 0.0;
            for (double v : col) cmax = std::max(cmax, v);
            if (!(cmax > thr)) continue;
            // Powers are taken relative to the column max so large p cannot overflow.
            double wsum = 0.0, isum = 0.0, zsum = 0.0;
            for (std::size_t iz = 0; iz < col.size(); ++iz) {
                const double v = col[iz];
                if (!(v > thr)) continue;
                const double w = std::pow(v / cmax, p);
                wsum += w;
                isum += w * v;
                zsum += w * static_cast<double>(iz);
            }
            out.albedo.val(y, x) = isum / wsum;
            out.depth.idx(y, x) = static_cast<std::int32_t>(std::lround(zsum / wsum)) + 1;
        }
    }
    return out;
}

inline VoxelAlbedo back_project(const AlbedoMap& albedo, const DepthMap& depth,
                                const SceneGrid& g) {
    if (albedo.val.ny() != g.ny || albedo.val.nx() != g.nx || depth.idx.ny() != g.ny ||
        depth.idx.nx() != g.nx) {
        throw std::invalid_argument("back_project: map shape does not match grid");
    }
    VoxelAlbedo u(g);
    for (std::size_t y = 0; y < g.ny; ++y) {
        for (std::size_t x = 0; x < g.nx; ++x) {
            const std::int32_t d = depth.idx(y, x);
            if (d < 0 || d > static_cast<std::int32_t>(g.nz)) {
                throw std::invalid_argument("back_project: depth index out of range");
            }
            if (d == DepthMap::empty) continue;
            u.data(y, x, static_cast<std::size_t>(d - 1)) = albedo.val(y, x);
        }
    }
    return u;
}

}  // namespace nlos
