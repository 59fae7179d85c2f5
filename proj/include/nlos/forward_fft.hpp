#pragma once

// Fast approximation of the confocal transport by resampling to squared
// distance. With s = (d / bin)^2 and v = (z / bin)^2, a voxel at lateral offset
// r (in bins) lands at s = v + r^2, which is shift-invariant in (y, x, v):
//
//   A ~= Bin * W * Conv * Splat
//
//   Splat  depth z -> uniform s-grid by linear interpolation at v = z^2
//   Conv   zero-padded 3D convolution with the splatted cone r^2 (FFT)
//   W      1 / d^4 evaluated at each s sample
//   Bin    s-grid -> time bins, each sample's hat integrated over the bin's
//          s-interval [(t - 1/2)^2, (t + 1/2)^2)
//
// Each factor is applied with its exact transpose in adjoint(), so the pair is
// adjoint to rounding. The cost is a pair of FFTs on a (2 ny, 2 nx, ~1.25 Ns)
// grid, i.e. O(N^3 log N), against O(N^5) for the tabulated operator.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "nlos/fft.hpp"
#include "nlos/forward.hpp"
#include "nlos/grid.hpp"

namespace nlos {

class ResampledTransport final : public TransportOperator {
public:
    /// `oversample` s-samples per time bin on average.
    explicit ResampledTransport(const SceneGrid& grid, int oversample = 4) : grid_(grid) {
        if (oversample < 1) throw std::invalid_argument("ResampledTransport: oversample >= 1");
        const double nt = static_cast<double>(grid.nt);
        ns_ = static_cast<std::size_t>(oversample) * grid.nt;
        delta_ = (nt + 0.5) * (nt + 0.5) / static_cast<double>(ns_);

        // Depth splat.
        std::size_t kmax = 0;
        splat_.resize(grid.nz);
        for (std::size_t iz = 0; iz < grid.nz; ++iz) {
            const double z = grid.depth_of(iz) / grid.bin_length;
            const double f = z * z / delta_;
            const auto k0 = static_cast<std::size_t>(std::floor(f));
            splat_[iz] = {k0, f - static_cast<double>(k0)};
            kmax = std::max(kmax, k0 + 1);
        }
        nv_ = kmax + 1;
        ly_ = 2 * grid.ny;
        lx_ = 2 * grid.nx;
        ls_ = good_size(ns_ + nv_);

        // Sample weights 1 / d^4 in meters, floored at the nearest voxel depth.
        const double s_floor = std::pow(grid.depth_of(0) / grid.bin_length, 2);
        const double b2 = grid.bin_length * grid.bin_length;
        weight_.resize(ns_);
        for (std::size_t k = 0; k < ns_; ++k) {
            const double s = std::max(static_cast<double>(k) * delta_, s_floor) * b2;
            weight_[k] = 1.0 / (s * s);
        }

        // Hat-to-bin overlaps.
        bin_first_.resize(ns_ + 1, 0);
        for (std::size_t k = 0; k < ns_; ++k) {
            const double sk = static_cast<double>(k) * delta_;
            const double lo = std::max(0.0, sk - delta_);
            const double hi = sk + delta_;
            const auto t0 = static_cast<std::size_t>(std::max(0.0, std::floor(std::sqrt(lo) - 0.5)));
            const auto t1 = std::min<std::size_t>(grid.nt,
                                                  static_cast<std::size_t>(std::sqrt(hi) + 0.5) + 1);
            for (std::size_t t = t0; t < t1; ++t) {
                const double a = t == 0 ? -1e300 : std::pow(static_cast<double>(t) - 0.5, 2);
                const double b = std::pow(static_cast<double>(t) + 0.5, 2);
                const double frac = hat_cdf((b - sk) / delta_) - hat_cdf((a - sk) / delta_);
                if (frac > 0.0) {
                    bin_t_.push_back(static_cast<std::uint32_t>(t));
                    bin_w_.push_back(frac);
                }
            }
            bin_first_[k + 1] = bin_t_.size();
        }

        // Spectrum of the splatted cone.
        fft::RealPlan& plan = fft::plan3(ly_, lx_, ls_);
        auto buf = plan.real();
        std::ranges::fill(buf, 0.0);
        const double h = grid.pitch() / grid.bin_length;
        const long ny = static_cast<long>(grid.ny), nx = static_cast<long>(grid.nx);
        for (long dy = -(ny - 1); dy < ny; ++dy) {
            for (long dx = -(nx - 1); dx < nx; ++dx) {
                const double f = h * h * static_cast<double>(dx * dx + dy * dy) / delta_;
                if (f >= static_cast<double>(ns_)) continue;
                const auto k0 = static_cast<std::size_t>(std::floor(f));
                const double a = f - static_cast<double>(k0);
                const std::size_t base = (wrap(dy, ly_) * lx_ + wrap(dx, lx_)) * ls_;
                buf[base + k0] += 1.0 - a;
                if (k0 + 1 < ls_) buf[base + k0 + 1] += a;
            }
        }
        plan.forward();
        const auto sp = plan.spectrum();
        kernel_.assign(sp.begin(), sp.end());
    }

    const SceneGrid& grid() const override { return grid_; }

    TransientCube forward(const VoxelAlbedo& u, const ScanMask* mask = nullptr) const override {
        require_same_grid(u.grid, grid_, "ResampledTransport::forward");
        check_mask(mask);
        fft::RealPlan& plan = fft::plan3(ly_, lx_, ls_);
        auto buf = plan.real();
        std::ranges::fill(buf, 0.0);
        for (std::size_t y = 0; y < grid_.ny; ++y) {
            for (std::size_t x = 0; x < grid_.nx; ++x) {
                const auto col = u.data.column(y, x);
                double* dst = buf.data() + (y * lx_ + x) * ls_;
                for (std::size_t iz = 0; iz < grid_.nz; ++iz) {
                    const auto [k0, a] = splat_[iz];
                    dst[k0] += (1.0 - a) * col[iz];
                    dst[k0 + 1] += a * col[iz];
                }
            }
        }
        convolve(plan, false);
        TransientCube tau(grid_);
        for (std::size_t sy = 0; sy < grid_.ny; ++sy) {
            for (std::size_t sx = 0; sx < grid_.nx; ++sx) {
                if (mask && !(*mask)(sy, sx)) continue;
                const double* src = buf.data() + (sy * lx_ + sx) * ls_;
                auto out = tau.data.column(sy, sx);
                for (std::size_t k = 0; k < ns_; ++k) {
                    const double v = src[k] * weight_[k];
                    for (std::size_t j = bin_first_[k]; j < bin_first_[k + 1]; ++j) {
                        out[bin_t_[j]] += bin_w_[j] * v;
                    }
                }
            }
        }
        return tau;
    }

    VoxelAlbedo adjoint(const TransientCube& tau, const ScanMask* mask = nullptr) const override {
        require_same_grid(tau.grid, grid_, "ResampledTransport::adjoint");
        check_mask(mask);
        fft::RealPlan& plan = fft::plan3(ly_, lx_, ls_);
        auto buf = plan.real();
        std::ranges::fill(buf, 0.0);
        for (std::size_t sy = 0; sy < grid_.ny; ++sy) {
            for (std::size_t sx = 0; sx < grid_.nx; ++sx) {
                if (mask && !(*mask)(sy, sx)) continue;
                double* dst = buf.data() + (sy * lx_ + sx) * ls_;
                const auto in = tau.data.column(sy, sx);
                for (std::size_t k = 0; k < ns_; ++k) {
                    double s = 0.0;
                    for (std::size_t j = bin_first_[k]; j < bin_first_[k + 1]; ++j) {
                        s += bin_w_[j] * in[bin_t_[j]];
                    }
                    dst[k] = weight_[k] * s;
                }
            }
        }
        convolve(plan, true);
        VoxelAlbedo u(grid_);
        for (std::size_t y = 0; y < grid_.ny; ++y) {
            for (std::size_t x = 0; x < grid_.nx; ++x) {
                const double* src = buf.data() + (y * lx_ + x) * ls_;
                auto col = u.data.column(y, x);
                for (std::size_t iz = 0; iz < grid_.nz; ++iz) {
                    const auto [k0, a] = splat_[iz];
                    col[iz] = (1.0 - a) * src[k0] + a * src[k0 + 1];
                }
            }
        }
        return u;
    }

    std::size_t fft_size() const { return ly_ * lx_ * ls_; }

private:
    struct Splat {
        std::size_t k0;
        double a;
    };

    static std::size_t wrap(long i, std::size_t n) {
        const long m = static_cast<long>(n);
        return static_cast<std::size_t>(((i % m) + m) % m);
    }

    // Integral of the unit-area hat on [-1, 1] from -inf to x.
    static double hat_cdf(double x) {
        if (x <= -1.0) return 0.0;
        if (x >= 1.0) return 1.0;
        if (x <= 0.0) return 0.5 * (1.0 + x) * (1.0 + x);
        return 1.0 - 0.5 * (1.0 - x) * (1.0 - x);
    }

    // Smallest n' >= n whose only prime factors are 2, 3, 5.
    static std::size_t good_size(std::size_t n) {
        for (std::size_t m = n;; ++m) {
            std::size_t r = m;
            for (std::size_t p : {2u, 3u, 5u})
                while (r % p == 0) r /= p;
            if (r == 1) return m;
        }
    }

    void check_mask(const ScanMask* mask) const {
        if (mask && (mask->ny() != grid_.ny || mask->nx() != grid_.nx)) {
            throw std::invalid_argument("ResampledTransport: mask shape does not match grid");
        }
    }

    void convolve(fft::RealPlan& plan, bool transpose) const {
        plan.forward();
        auto sp = plan.spectrum();
        if (transpose) {
            for (std::size_t i = 0; i < sp.size(); ++i) sp[i] *= std::conj(kernel_[i]);
        } else {
            for (std::size_t i = 0; i < sp.size(); ++i) sp[i] *= kernel_[i];
        }
        plan.inverse();
    }

    SceneGrid grid_;
    std::size_t ns_ = 0, nv_ = 0, ly_ = 0, lx_ = 0, ls_ = 0;
    double delta_ = 0.0;
    std::vector<Splat> splat_;
    std::vector<double> weight_;
    std::vector<std::size_t> bin_first_;
    std::vector<std::uint32_t> bin_t_;
    std::vector<double> bin_w_;
    std::vector<std::complex<double>> kernel_;
};

}  // namespace nlos
