#pragma once

// Periodic finite differences on 2D fields, their exact adjoints, shrinkage
// operators, the adaptive shape-operator weights, FFT solvers for the screened
// Poisson / biharmonic systems, and the image post-processing filters.
//
// Stencils (periodic):
//   grad:    gx = f(x+1) - f(x),          gy = f(y+1) - f(y)
//   hessian: hxx = f(x+1) - 2f(x) + f(x-1), hyy likewise,
//            hxy = f(x+1,y+1) - f(x+1,y) - f(x,y+1) + f(x,y)
// With these, div(grad) has Fourier symbol L = 2cos(2pi k/nx) + 2cos(2pi l/ny) - 4
// and div2(hessian) has symbol L^2, so the FFT solvers invert the exact discrete
// normal equations.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nlos/fft.hpp"
#include "nlos/grid.hpp"

namespace nlos {

namespace detail {
inline std::size_t wrap_next(std::size_t i, std::size_t n) { return i + 1 == n ? 0 : i + 1; }
inline std::size_t wrap_prev(std::size_t i, std::size_t n) { return i == 0 ? n - 1 : i - 1; }
}  // namespace detail

inline GradField grad2d(const Field2& f) {
    const std::size_t ny = f.ny(), nx = f.nx();
    GradField g(ny, nx);
    for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t yn = detail::wrap_next(y, ny);
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t xn = detail::wrap_next(x, nx);
            g.x(y, x) = f(y, xn) - f(y, x);
            g.y(y, x) = f(yn, x) - f(y, x);
        }
    }
    return g;
}

/// Negative adjoint of grad2d: <grad f, v> = -<f, div v>.
inline Field2 div2d(const GradField& v) {
    const std::size_t ny = v.x.ny(), nx = v.x.nx();
    Field2 d(ny, nx);
    for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t yp = detail::wrap_prev(y, ny);
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t xp = detail::wrap_prev(x, nx);
            d(y, x) = (v.x(y, x) - v.x(y, xp)) + (v.y(y, x) - v.y(yp, x));
        }
    }
    return d;
}

inline HessianField hessian2d(const Field2& f) {
    const std::size_t ny = f.ny(), nx = f.nx();
    HessianField h(ny, nx);
    for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t yn = detail::wrap_next(y, ny);
        const std::size_t yp = detail::wrap_prev(y, ny);
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t xn = detail::wrap_next(x, nx);
            const std::size_t xp = detail::wrap_prev(x, nx);
            h.xx(y, x) = f(y, xn) - 2.0 * f(y, x) + f(y, xp);
            h.yy(y, x) = f(yn, x) - 2.0 * f(y, x) + f(yp, x);
            h.xy(y, x) = f(yn, xn) - f(y, xn) - f(yn, x) + f(y, x);
        }
    }
    return h;
}

/// Frobenius inner product of two symmetric fields (off-diagonal counted twice).
inline double frob_dot(const HessianField& a, const HessianField& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.xx.size(); ++i) {
        s += a.xx[i] * b.xx[i] + 2.0 * a.xy[i] * b.xy[i] + a.yy[i] * b.yy[i];
    }
    return s;
}

/// Adjoint of hessian2d under the Frobenius inner product: <hess f, w> = <f, div2 w>.
inline Field2 div2_2d(const HessianField& w) {
    const std::size_t ny = w.xx.ny(), nx = w.xx.nx();
    Field2 d(ny, nx);
    for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t yn = detail::wrap_next(y, ny);
        const std::size_t yp = detail::wrap_prev(y, ny);
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t xn = detail::wrap_next(x, nx);
            const std::size_t xp = detail::wrap_prev(x, nx);
            const double dxx = w.xx(y, xn) - 2.0 * w.xx(y, x) + w.xx(y, xp);
            const double dyy = w.yy(yn, x) - 2.0 * w.yy(y, x) + w.yy(yp, x);
            const double dxy = w.xy(y, x) - w.xy(y, xp) - w.xy(yp, x) + w.xy(yp, xp);
            d(y, x) = dxx + 2.0 * dxy + dyy;
        }
    }
    return d;
}

inline double grad_dot(const GradField& a, const GradField& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.x.size(); ++i) s += a.x[i] * b.x[i] + a.y[i] * b.y[i];
    return s;
}

/// max(|a| - xi, 0) * a / |a|, with 0 for a = 0.
inline std::vector<double> shrink_vec(std::span<const double> a, double xi) {
    if (xi < 0) throw std::invalid_argument("shrink_vec: threshold must be >= 0");
    double n2 = 0.0;
    for (double v : a) n2 += v * v;
    const double n = std::sqrt(n2);
    std::vector<double> out(a.size(), 0.0);
    if (n > xi) {
        const double s = (n - xi) / n;
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    }
    return out;
}

struct Sym2 {
    double xx = 0.0;
    double xy = 0.0;
    double yy = 0.0;

    double frob() const { return std::sqrt(xx * xx + 2.0 * xy * xy + yy * yy); }
    bool operator==(const Sym2&) const = default;
};

/// Frobenius-norm shrinkage of a symmetric 2x2 matrix.
inline Sym2 shrink_frob(const Sym2& m, double xi) {
    if (xi < 0) throw std::invalid_argument("shrink_frob: threshold must be >= 0");
    const double n = m.frob();
    if (!(n > xi)) return {};
    const double s = (n - xi) / n;
    return {s * m.xx, s * m.xy, s * m.yy};
}

/// Pointwise isotropic shrinkage of a gradient field with a per-pixel threshold.
inline GradField shrink_field(const GradField& a, const Field2& xi) {
    GradField out(a.x.ny(), a.x.nx());
    for (std::size_t i = 0; i < a.x.size(); ++i) {
        const double n = std::hypot(a.x[i], a.y[i]);
        if (n > xi[i]) {
            const double s = (n - xi[i]) / n;
            out.x[i] = s * a.x[i];
            out.y[i] = s * a.y[i];
        }
    }
    return out;
}

inline HessianField shrink_field(const HessianField& a, const Field2& xi) {
    HessianField out(a.xx.ny(), a.xx.nx());
    for (std::size_t i = 0; i < a.xx.size(); ++i) {
        const Sym2 s = shrink_frob({a.xx[i], a.xy[i], a.yy[i]}, xi[i]);
        out.xx[i] = s.xx;
        out.xy[i] = s.xy;
        out.yy[i] = s.yy;
    }
    return out;
}

struct ShapeWeights {
    Field2 alpha;  // |grad beta|
    Field2 beta;   // 1 / sqrt(1 + |grad D|^2)
};

/// Adaptive first/second-order weights of the linearized shape operator.
inline ShapeWeights alpha_beta(const Field2& depth) {
    const GradField g = grad2d(depth);
    Field2 beta(depth.ny(), depth.nx());
    for (std::size_t i = 0; i < beta.size(); ++i) {
        beta[i] = 1.0 / std::sqrt(1.0 + g.x[i] * g.x[i] + g.y[i] * g.y[i]);
    }
    const GradField gb = grad2d(beta);
    Field2 alpha(depth.ny(), depth.nx());
    for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] = std::hypot(gb.x[i], gb.y[i]);
    return {std::move(alpha), std::move(beta)};
}

/// Fourier symbol of the periodic 5-point Laplacian at frequency (l, k).
inline double laplacian_symbol(std::size_t l, std::size_t ny, std::size_t k, std::size_t nx) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return 2.0 * std::cos(two_pi * static_cast<double>(k) / static_cast<double>(nx)) +
           2.0 * std::cos(two_pi * static_cast<double>(l) / static_cast<double>(ny)) - 4.0;
}

/// Solves (Id - r1 Lap + r2 Lap^2) f = rhs on the periodic grid.
inline Field2 solve_screened_biharmonic(const Field2& rhs, double r1, double r2) {
    if (r1 < 0 || r2 < 0) throw std::invalid_argument("solve_screened_biharmonic: r1, r2 >= 0");
    const std::size_t ny = rhs.ny(), nx = rhs.nx();
    auto& plan = fft::plan2(ny, nx);
    std::ranges::copy(rhs.flat(), plan.real().begin());
    plan.forward();
    auto spec = plan.spectrum();
    const std::size_t nh = nx / 2 + 1;
    for (std::size_t l = 0; l < ny; ++l) {
        for (std::size_t k = 0; k < nh; ++k) {
            const double L = laplacian_symbol(l, ny, k, nx);
            spec[l * nh + k] /= 1.0 - r1 * L + r2 * L * L;
        }
    }
    plan.inverse();
    Field2 out(ny, nx);
    std::ranges::copy(plan.real(), out.flat().begin());
    return out;
}

/// Solves (Id - r3 Lap) f = rhs on the periodic grid.
inline Field2 solve_screened_poisson(const Field2& rhs, double r3) {
    if (r3 < 0) throw std::invalid_argument("solve_screened_poisson: r3 >= 0");
    return solve_screened_biharmonic(rhs, r3, 0.0);
}

/// Explicit application of (Id - r1 div grad + r2 div2 hess), the operator the
/// biharmonic solver inverts.
inline Field2 apply_screened_biharmonic(const Field2& f, double r1, double r2) {
    const Field2 lap = div2d(grad2d(f));
    const Field2 bih = div2_2d(hessian2d(f));
    Field2 out(f.ny(), f.nx());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] - r1 * lap[i] + r2 * bih[i];
    return out;
}

// Post-processing ----------------------------------------------------------

/// Periodic convolution with a unit-sum Gaussian truncated at 4 sigma.
inline Field2 gaussian_smooth(const Field2& img, double sigma) {
    if (sigma < 0) throw std::invalid_argument("gaussian_smooth: sigma must be >= 0");
    if (sigma == 0.0) return img;
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double ks = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ks += k[i + radius];
    }
    for (double& v : k) v /= ks;

    const long ny = static_cast<long>(img.ny()), nx = static_cast<long>(img.nx());
    auto wrap = [](long i, long n) { return ((i % n) + n) % n; };
    Field2 tmp(img.ny(), img.nx()), out(img.ny(), img.nx());
    for (long y = 0; y < ny; ++y)
        for (long x = 0; x < nx; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img(y, wrap(x + i, nx));
            tmp(y, x) = s;
        }
    for (long y = 0; y < ny; ++y)
        for (long x = 0; x < nx; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp(wrap(y + i, ny), x);
            out(y, x) = s;
        }
    return out;
}

/// Linear-interpolated percentile (0..100) of the image values.
inline double percentile(const Field2& img, double pct) {
    std::vector<double> v(img.flat().begin(), img.flat().end());
    if (v.empty()) return 0.0;
    std::ranges::sort(v);
    const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

/// Clips values to the [lo_pct, hi_pct] percentile range.
inline Field2 truncate(const Field2& img, double lo_pct, double hi_pct) {
    if (!(0.0 <= lo_pct && lo_pct <= hi_pct && hi_pct <= 100.0)) {
        throw std::invalid_argument("truncate: need 0 <= lo_pct <= hi_pct <= 100");
    }
    const double lo = percentile(img, lo_pct);
    const double hi = percentile(img, hi_pct);
    Field2 out = img;
    for (double& v : out.flat()) v = std::clamp(v, lo, hi);
    return out;
}

/// Zeroes values below frac * max.
inline Field2 threshold(const Field2& img, double frac) {
    if (!(0.0 <= frac && frac <= 1.0)) throw std::invalid_argument("threshold: frac in [0, 1]");
    double vmax = 0.0;
    for (double v : img.flat()) vmax = std::max(vmax, v);
    const double cut = frac * vmax;
    Field2 out = img;
    for (double& v : out.flat()) {
        if (v < cut) v = 0.0;
    }
    return out;
}

}  // namespace nlos
