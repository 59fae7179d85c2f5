#pragma once

// Shared discretization for the hidden volume, the relay-wall scan lattice and
// the time axis, plus the dense array types every other module works on.
//
// Memory order is [y][x][last] row-major everywhere (last = z for volumes,
// t for transients), which is also the on-disk payload order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlos {

/// Dense row-major 2D array indexed (iy, ix).
template <class T>
class Array2 {
public:
    Array2() = default;
    Array2(std::size_t ny, std::size_t nx, T fill = T{})
        : ny_(ny), nx_(nx), data_(ny * nx, fill) {}

    std::size_t ny() const { return ny_; }
    std::size_t nx() const { return nx_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t iy, std::size_t ix) { return data_[iy * nx_ + ix]; }
    const T& operator()(std::size_t iy, std::size_t ix) const { return data_[iy * nx_ + ix]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool same_shape(const Array2& o) const { return ny_ == o.ny_ && nx_ == o.nx_; }
    bool operator==(const Array2&) const = default;

private:
    std::size_t ny_ = 0;
    std::size_t nx_ = 0;
    std::vector<T> data_;
};

/// Dense row-major 3D array indexed (iy, ix, k).
template <class T>
class Array3 {
public:
    Array3() = default;
    Array3(std::size_t ny, std::size_t nx, std::size_t nk, T fill = T{})
        : ny_(ny), nx_(nx), nk_(nk), data_(ny * nx * nk, fill) {}

    std::size_t ny() const { return ny_; }
    std::size_t nx() const { return nx_; }
    std::size_t nk() const { return nk_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t iy, std::size_t ix, std::size_t k) {
        return data_[(iy * nx_ + ix) * nk_ + k];
    }
    const T& operator()(std::size_t iy, std::size_t ix, std::size_t k) const {
        return data_[(iy * nx_ + ix) * nk_ + k];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Contiguous run along the last axis at lateral position (iy, ix).
    std::span<T> column(std::size_t iy, std::size_t ix) {
        return {data_.data() + (iy * nx_ + ix) * nk_, nk_};
    }
    std::span<const T> column(std::size_t iy, std::size_t ix) const {
        return {data_.data() + (iy * nx_ + ix) * nk_, nk_};
    }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }

    bool same_shape(const Array3& o) const {
        return ny_ == o.ny_ && nx_ == o.nx_ && nk_ == o.nk_;
    }
    bool operator==(const Array3&) const = default;

private:
    std::size_t ny_ = 0;
    std::size_t nx_ = 0;
    std::size_t nk_ = 0;
    std::vector<T> data_;
};

using Field2 = Array2<double>;

/// Geometry of the confocal setup. The wall is the plane z = 0; scan points sit
/// on lateral voxel centers; voxel iz is centered at depth (iz + 1) * voxel_depth.
struct SceneGrid {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;
    std::size_t nt = 0;
    double wall_size = 0.0;   // lateral extent [m]
    double bin_length = 0.0;  // one-way meters per time bin

    static constexpr double speed_of_light = 299792458.0;  // m/s, informational

    double pitch() const { return wall_size / static_cast<double>(nx); }
    double voxel_depth() const {
        return static_cast<double>(nt) * bin_length / (2.0 * static_cast<double>(nz));
    }
    double depth_of(std::size_t iz) const {
        return static_cast<double>(iz + 1) * voxel_depth();
    }
    /// Lateral coordinate of scan point / voxel center ix (wall centered at 0).
    double lateral_of(std::size_t i) const {
        return (static_cast<double>(i) + 0.5) * pitch() - 0.5 * wall_size;
    }
    /// Nearest time bin of a one-way path length d.
    long bin_of_distance(double d) const {
        return std::lround(d / bin_length);
    }
    /// Bin of the direct return from voxel depth iz; always in [0, nt).
    std::size_t bin_of_depth(std::size_t iz) const {
        const long b = bin_of_distance(depth_of(iz));
        return static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(nt) - 1));
    }

    std::size_t n_scan() const { return nx * ny; }
    std::size_t n_voxel() const { return nx * ny * nz; }

    bool operator==(const SceneGrid&) const = default;
};

inline SceneGrid make_grid(std::size_t nx, std::size_t ny, std::size_t nz, std::size_t nt,
                           double wall_size, double bin_length) {
    if (nx < 1 || ny < 1 || nz < 1 || nt < 1) {
        throw std::invalid_argument("make_grid: all counts must be >= 1");
    }
    if (!(wall_size > 0.0) || !(bin_length > 0.0) || !std::isfinite(wall_size) ||
        !std::isfinite(bin_length)) {
        throw std::invalid_argument("make_grid: wall_size and bin_length must be positive");
    }
    return SceneGrid{nx, ny, nz, nt, wall_size, bin_length};
}

/// Measured or rendered transient tau, indexed [iy][ix][it].
struct TransientCube {
    SceneGrid grid;
    Array3<double> data;

    TransientCube() = default;
    explicit TransientCube(const SceneGrid& g) : grid(g), data(g.ny, g.nx, g.nt, 0.0) {}
    TransientCube(const SceneGrid& g, Array3<double> d) : grid(g), data(std::move(d)) {
        if (data.ny() != g.ny || data.nx() != g.nx || data.nk() != g.nt) {
            throw std::invalid_argument("TransientCube: data shape does not match grid");
        }
    }
};

/// Volumetric albedo u, indexed [iy][ix][iz].
struct VoxelAlbedo {
    SceneGrid grid;
    Array3<double> data;

    VoxelAlbedo() = default;
    explicit VoxelAlbedo(const SceneGrid& g) : grid(g), data(g.ny, g.nx, g.nz, 0.0) {}
    VoxelAlbedo(const SceneGrid& g, Array3<double> d) : grid(g), data(std::move(d)) {
        if (data.ny() != g.ny || data.nx() != g.nx || data.nk() != g.nz) {
            throw std::invalid_argument("VoxelAlbedo: data shape does not match grid");
        }
    }
};

/// Which wall positions were scanned. Constant over time.
class ScanMask {
public:
    ScanMask() = default;
    explicit ScanMask(Array2<std::uint8_t> m) : mask_(std::move(m)) {
        if (std::none_of(mask_.flat().begin(), mask_.flat().end(),
                         [](std::uint8_t v) { return v != 0; })) {
            throw std::invalid_argument("ScanMask: at least one scan position is required");
        }
        for (auto& v : mask_.flat()) v = v ? 1 : 0;
    }
    static ScanMask full(std::size_t ny, std::size_t nx) {
        return ScanMask(Array2<std::uint8_t>(ny, nx, 1));
    }

    bool operator()(std::size_t iy, std::size_t ix) const { return mask_(iy, ix) != 0; }
    std::size_t ny() const { return mask_.ny(); }
    std::size_t nx() const { return mask_.nx(); }
    std::size_t count() const {
        return static_cast<std::size_t>(
            std::count(mask_.flat().begin(), mask_.flat().end(), std::uint8_t{1}));
    }
    const Array2<std::uint8_t>& raw() const { return mask_; }
    bool operator==(const ScanMask&) const = default;

private:
    Array2<std::uint8_t> mask_;
};

/// Depth index map. 0 is EMPTY; k >= 1 means voxel depth index k - 1.
struct DepthMap {
    static constexpr std::int32_t empty = 0;
    Array2<std::int32_t> idx;

    DepthMap() = default;
    DepthMap(std::size_t ny, std::size_t nx) : idx(ny, nx, empty) {}
};

struct AlbedoMap {
    Field2 val;

    AlbedoMap() = default;
    AlbedoMap(std::size_t ny, std::size_t nx) : val(ny, nx, 0.0) {}
    explicit AlbedoMap(Field2 v) : val(std::move(v)) {}
};

/// Per-pixel 2-vector (d/dx, d/dy).
struct GradField {
    Field2 x;
    Field2 y;

    GradField() = default;
    GradField(std::size_t ny, std::size_t nx) : x(ny, nx, 0.0), y(ny, nx, 0.0) {}
};

/// Per-pixel symmetric 2x2 matrix; the off-diagonal entry is stored once.
struct HessianField {
    Field2 xx;
    Field2 xy;
    Field2 yy;

    HessianField() = default;
    HessianField(std::size_t ny, std::size_t nx)
        : xx(ny, nx, 0.0), xy(ny, nx, 0.0), yy(ny, nx, 0.0) {}
};

enum class OperatorKind { sparse, fft };

struct SolverParams {
    // Scene dependent, no usable default.
    double sigma = std::numeric_limits<double>::quiet_NaN();
    double lambda = std::numeric_limits<double>::quiet_NaN();

    double rho = 25.0;
    double eta = 1e-5;
    double r1 = 0.1;
    double r2 = 2.0;
    double r3 = 20.0;
    int p = 4;

    int k_max = 120;
    int fista_iters = 20;    // initialization (sparse L1) iterations
    int u_iters = 1;         // proximal-gradient steps per outer u-update
    int admm_iters_D = 10;
    int admm_iters_I = 10;
    double step_t = 0.0;     // <= 0 selects the automatic step
    bool nonneg_clamp = false;
    bool precondition = true;
    bool reset_multipliers = false;
    int power_iters = 20;
    OperatorKind op = OperatorKind::sparse;

    // Tikhonov baseline.
    double lct_mu = 1e-3;
    int cg_iters = 200;
    double cg_tol = 1e-8;

    void validate() const {
        if (std::isnan(sigma)) throw std::invalid_argument("SolverParams: missing required 'sigma'");
        if (std::isnan(lambda)) throw std::invalid_argument("SolverParams: missing required 'lambda'");
        if (sigma < 0 || lambda < 0 || rho < 0 || eta < 0) {
            throw std::invalid_argument("SolverParams: sigma, lambda, rho, eta must be >= 0");
        }
        if (!(r1 > 0) || !(r2 > 0) || !(r3 > 0)) {
            throw std::invalid_argument("SolverParams: r1, r2, r3 must be > 0");
        }
        if (p < 1) throw std::invalid_argument("SolverParams: p must be >= 1");
        if (k_max < 0 || fista_iters < 0 || u_iters < 1 || admm_iters_D < 0 || admm_iters_I < 0 ||
            power_iters < 1) {
            throw std::invalid_argument("SolverParams: iteration counts out of range");
        }
    }
};

/// gamma = sigma * sum(tau0): weight of the L1 term, tied to the data magnitude.
inline double gamma_from(double sigma, const TransientCube& tau0) {
    const auto v = tau0.data.flat();
    return sigma * std::accumulate(v.begin(), v.end(), 0.0);
}

inline void require_same_grid(const SceneGrid& a, const SceneGrid& b, const char* what) {
    if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

}  // namespace nlos
