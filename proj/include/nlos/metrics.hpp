#pragma once

// Image-level quality metrics, computed on normalized front-view maximum
// intensity projections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlos/grid.hpp"
#include "nlos/vecops.hpp"

namespace nlos {

/// Min-max normalization to [0, 1]; a flat image maps to 0.
inline Field2 normalize_minmax(Field2 img) {
    const auto [lo, hi] = std::ranges::minmax(img.flat());
    if (!(hi > lo)) {
        std::ranges::fill(img.flat(), 0.0);
        return img;
    }
    for (double& v : img.flat()) v = (v - lo) / (hi - lo);
    return img;
}

/// Per-pixel max over depth, scaled to [0, 1] by the min and max of the whole
/// volume (so a full-coverage plane stays a silhouette of ones, while a
/// constant volume maps to 0).
inline Field2 max_intensity_projection(const VoxelAlbedo& u) {
    const SceneGrid& g = u.grid;
    const auto [lo, hi] = std::ranges::minmax(u.data.flat());
    Field2 img(g.ny, g.nx);
    if (!(hi > lo)) return img;
    for (std::size_t y = 0; y < g.ny; ++y) {
        for (std::size_t x = 0; x < g.nx; ++x) {
            const auto col = u.data.column(y, x);
            img(y, x) = (*std::ranges::max_element(col) - lo) / (hi - lo);
        }
    }
    return img;
}

inline void require_same_shape(const Field2& a, const Field2& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// 10 log10(1 / MSE) for images on [0, 1]; +inf when identical.
inline double psnr(const Field2& ref, const Field2& test) {
    require_same_shape(ref, test, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = ref[i] - test[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(ref.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean local SSIM with a Gaussian window and periodic padding.
inline double ssim(const Field2& a, const Field2& b, const SsimConfig& cfg = {}) {
    require_same_shape(a, b, "ssim");
    const int r = cfg.window / 2;
    std::vector<double> k(static_cast<std::size_t>(cfg.window));
    double ks = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * i * i / (cfg.sigma * cfg.sigma));
        ks += k[i + r];
    }
    for (double& v : k) v /= ks;

    const long ny = static_cast<long>(a.ny()), nx = static_cast<long>(a.nx());
    auto wrap = [](long i, long n) { return ((i % n) + n) % n; };
    // Separable filtering of a, b, a^2, b^2, ab.
    auto filter = [&](auto&& fn) {
        Field2 tmp(a.ny(), a.nx()), out(a.ny(), a.nx());
        for (long y = 0; y < ny; ++y)
            for (long x = 0; x < nx; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * fn(y, wrap(x + i, nx));
                tmp(y, x) = s;
            }
        for (long y = 0; y < ny; ++y)
            for (long x = 0; x < nx; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * tmp(wrap(y + i, ny), x);
                out(y, x) = s;
            }
        return out;
    };
    const Field2 mu_a = filter([&](long y, long x) { return a(y, x); });
    const Field2 mu_b = filter([&](long y, long x) { return b(y, x); });
    const Field2 aa = filter([&](long y, long x) { return a(y, x) * a(y, x); });
    const Field2 bb = filter([&](long y, long x) { return b(y, x) * b(y, x); });
    const Field2 ab = filter([&](long y, long x) { return a(y, x) * b(y, x); });

    const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
    const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = aa[i] - ma * ma;
        const double vb = bb[i] - mb * mb;
        const double cov = ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(a.size());
}

/// ||new - old|| / ||old||; +inf when old is zero.
inline double rel_error(std::span<const double> u_new, std::span<const double> u_old) {
    if (u_new.size() != u_old.size()) throw std::invalid_argument("rel_error: size mismatch");
    const double den = vec::norm(u_old);
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return vec::dist(u_new, u_old) / den;
}

inline double rel_error(const VoxelAlbedo& u_new, const VoxelAlbedo& u_old) {
    return rel_error(u_new.data.flat(), u_old.data.flat());
}

}  // namespace nlos
