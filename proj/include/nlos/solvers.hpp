#pragma once

// Joint reconstruction of volumetric albedo u, completed transient tau, depth
// map D and albedo map I by alternating minimization:
//
//   E(u, tau, D, I) = 1/2 |Au - tau|^2 + rho/2 |S tau - tau0|^2 + gamma |u|_1
//                   + lambda/2 |u - Pdag(I, D)|^2 + eta TV(I)
//                   + sum |alpha(D)| |grad D| + beta(D) |hess D|_F
//
// Each outer iteration updates tau (closed form), D (ADMM with vector and
// Frobenius shrinkage plus an FFT biharmonic solve), I (ADMM TV), then u (one
// or more accelerated proximal-gradient steps whose momentum persists across
// outer iterations).
//
// Step sizes: the plain rule is t = 1 / (||A||^2 + lambda). Because the 1/d^4
// falloff spreads column norms of A over many orders of magnitude, the default
// uses a diagonal (Jacobi) metric instead: per-voxel steps s / diag(H)_i with s
// from a power iteration on the rescaled Hessian. The fixed point and objective
// are unchanged; only the geometry of the step is.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlos/diffprox.hpp"
#include "nlos/forward.hpp"
#include "nlos/forward_fft.hpp"
#include "nlos/grid.hpp"
#include "nlos/metrics.hpp"
#include "nlos/projection.hpp"
#include "nlos/vecops.hpp"

namespace nlos {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Proximal-gradient machinery

/// Per-voxel step sizes of a (possibly diagonal-metric) proximal-gradient method.
struct StepMetric {
    std::vector<double> step;
    double scale = 0.0;  // s, or the uniform step t when unpreconditioned
};

/// Builds the step metric for H = (SA)^T (SA) + lambda I.
inline StepMetric make_step_metric(const TransportOperator& op, const ConfocalTransport& table,
                                   const ScanMask* mask, double lambda,
                                   const SolverParams& prm) {
    const SceneGrid& g = op.grid();
    const std::size_t n = g.n_voxel();
    StepMetric m;
    if (prm.step_t > 0.0) {
        m.scale = prm.step_t;
        m.step.assign(n, prm.step_t);
        return m;
    }
    if (!prm.precondition) {
        const double a = estimate_op_norm(op, prm.power_iters, mask);
        m.scale = 1.0 / (a * a + lambda);
        m.step.assign(n, m.scale);
        return m;
    }
    const Array3<double> cn = table.column_norms_sq(mask);
    std::vector<double> pinv(n, 0.0);  // diag(H)^-1/2, 0 for voxels H does not see
    for (std::size_t i = 0; i < n; ++i) {
        const double d = cn[i] + lambda;
        if (cn[i] > 0.0 && d > 0.0) pinv[i] = 1.0 / std::sqrt(d);
    }
    VoxelAlbedo u(g);
    const double snorm = estimate_op_norm(
        [&](std::span<const double> in, std::span<double> out) {
            auto ud = u.data.flat();
            for (std::size_t i = 0; i < n; ++i) ud[i] = pinv[i] * in[i];
            const VoxelAlbedo back = op.adjoint(op.forward(u, mask), mask);
            const auto bd = back.data.flat();
            for (std::size_t i = 0; i < n; ++i) out[i] = pinv[i] * (bd[i] + lambda * ud[i]);
        },
        n, prm.power_iters);
    m.scale = 1.0 / (snorm * snorm);
    m.step.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.step[i] = m.scale * pinv[i] * pinv[i];
    return m;
}

inline double soft_threshold(double v, double thr) {
    if (v > thr) return v - thr;
    if (v < -thr) return v + thr;
    return 0.0;
}

/// State of an accelerated proximal-gradient run: iterate, extrapolation, momentum.
struct FistaState {
    VoxelAlbedo u;
    VoxelAlbedo u_bar;
    double mu = 1.0;

    explicit FistaState(const VoxelAlbedo& start) : u(start), u_bar(start) {}
};

inline double next_momentum(double mu) { return 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * mu * mu)); }

/// One step: u+ = shrink(u_bar - t * grad, gamma t); then momentum and extrapolation.
inline void fista_step(FistaState& st, const VoxelAlbedo& grad, const StepMetric& metric,
                       double gamma, bool nonneg_clamp) {
    const auto ub = st.u_bar.data.flat();
    const auto gr = grad.data.flat();
    VoxelAlbedo next(st.u.grid);
    auto nx = next.data.flat();
    for (std::size_t i = 0; i < nx.size(); ++i) {
        const double t = metric.step[i];
        double v = soft_threshold(ub[i] - t * gr[i], gamma * t);
        if (nonneg_clamp && v < 0.0) v = 0.0;
        nx[i] = v;
    }
    const double mu_next = next_momentum(st.mu);
    const double c = (st.mu - 1.0) / mu_next;
    const auto uo = st.u.data.flat();
    auto ubw = st.u_bar.data.flat();
    for (std::size_t i = 0; i < nx.size(); ++i) ubw[i] = nx[i] + c * (nx[i] - uo[i]);
    st.u = std::move(next);
    st.mu = mu_next;
}

// ---------------------------------------------------------------------------
// Energies

/// E1(u, tau) = 1/2 |Au - tau|^2 + rho/2 |S tau - tau0|^2 + gamma |u|_1, given Au.
inline double energy_e1(const TransientCube& au, const TransientCube& tau, const VoxelAlbedo& u,
                        const TransientCube& tau0, const ScanMask& mask, double rho,
                        double gamma) {
    const SceneGrid& g = tau.grid;
    double fit = 0.0, cons = 0.0;
    for (std::size_t y = 0; y < g.ny; ++y) {
        for (std::size_t x = 0; x < g.nx; ++x) {
            const auto a = au.data.column(y, x);
            const auto t = tau.data.column(y, x);
            const auto t0 = tau0.data.column(y, x);
            const bool m = mask(y, x);
            for (std::size_t it = 0; it < g.nt; ++it) {
                const double r = a[it] - t[it];
                fit += r * r;
                const double c = (m ? t[it] : 0.0) - t0[it];
                cons += c * c;
            }
        }
    }
    return 0.5 * fit + 0.5 * rho * cons + gamma * vec::l1(u.data.flat());
}

// ---------------------------------------------------------------------------
// tau-subproblem

/// Closed-form minimizer of 1/2 |Au - tau|^2 + rho/2 |S tau - tau0|^2 given Au.
inline TransientCube update_tau(const TransientCube& au, const TransientCube& tau0,
                                const ScanMask& mask, double rho) {
    require_same_grid(au.grid, tau0.grid, "update_tau");
    if (rho < 0) throw std::invalid_argument("update_tau: rho must be >= 0");
    TransientCube out = au;
    const SceneGrid& g = au.grid;
    for (std::size_t y = 0; y < g.ny; ++y) {
        for (std::size_t x = 0; x < g.nx; ++x) {
            if (!mask(y, x)) continue;
            auto t = out.data.column(y, x);
            const auto t0 = tau0.data.column(y, x);
            for (std::size_t it = 0; it < g.nt; ++it) t[it] = (t[it] + rho * t0[it]) / (rho + 1.0);
        }
    }
    return out;
}

inline TransientCube update_tau(const TransportOperator& op, const VoxelAlbedo& u,
                                const TransientCube& tau0, const ScanMask& mask, double rho) {
    return update_tau(op.forward(u), tau0, mask, rho);
}

// ---------------------------------------------------------------------------
// D-subproblem

struct DepthState {
    Field2 depth;
    GradField lambda1;
    HessianField lambda2;

    DepthState() = default;
    DepthState(std::size_t ny, std::size_t nx)
        : depth(ny, nx, 0.0), lambda1(ny, nx), lambda2(ny, nx) {}
    void reset_multipliers() {
        lambda1 = GradField(depth.ny(), depth.nx());
        lambda2 = HessianField(depth.ny(), depth.nx());
    }
};

/// Real-valued data target of the depth subproblem: depth index where the
/// projection found a surface, 0 for EMPTY columns.
inline Field2 depth_target(const DepthMap& d) {
    Field2 f(d.idx.ny(), d.idx.nx());
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = d.idx[i] == DepthMap::empty ? 0.0 : static_cast<double>(d.idx[i] - 1);
    }
    return f;
}

/// 1/2 |D - f|^2 + sum |alpha| |grad D| + sum beta |hess D|_F.
inline double depth_objective(const Field2& depth, const Field2& target, const ShapeWeights& wts) {
    const GradField g = grad2d(depth);
    const HessianField h = hessian2d(depth);
    double s = 0.0;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double r = depth[i] - target[i];
        s += 0.5 * r * r + wts.alpha[i] * std::hypot(g.x[i], g.y[i]) +
             wts.beta[i] * Sym2{h.xx[i], h.xy[i], h.yy[i]}.frob();
    }
    return s;
}

/// Augmented Lagrangian of the split depth problem at (D, v, w; Lambda1, Lambda2).
inline double depth_augmented_lagrangian(const Field2& depth, const GradField& v,
                                         const HessianField& w, const DepthState& st,
                                         const Field2& target, const ShapeWeights& wts,
                                         double r1, double r2) {
    const GradField g = grad2d(depth);
    const HessianField h = hessian2d(depth);
    double s = 0.0;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double r = depth[i] - target[i];
        const double ex = v.x[i] - g.x[i], ey = v.y[i] - g.y[i];
        const Sym2 e{w.xx[i] - h.xx[i], w.xy[i] - h.xy[i], w.yy[i] - h.yy[i]};
        s += 0.5 * r * r;
        s += wts.alpha[i] * std::hypot(v.x[i], v.y[i]);
        s -= st.lambda1.x[i] * ex + st.lambda1.y[i] * ey;
        s += 0.5 * r1 * (ex * ex + ey * ey);
        s += wts.beta[i] * Sym2{w.xx[i], w.xy[i], w.yy[i]}.frob();
        s -= st.lambda2.xx[i] * e.xx + 2.0 * st.lambda2.xy[i] * e.xy + st.lambda2.yy[i] * e.yy;
        s += 0.5 * r2 * (e.xx * e.xx + 2.0 * e.xy * e.xy + e.yy * e.yy);
    }
    return s;
}

/// Augmented Lagrangian values around the exact D-solve of one sweep.
struct DepthSweepTrace {
    double before_solve = 0.0;
    double after_solve = 0.0;
    Field2 rhs;
};

/// One ADMM sweep: v-shrink, w-shrink, FFT solve for D, dual ascent.
inline void depth_sweep(DepthState& st, const Field2& target, const ShapeWeights& wts,
                        double r1, double r2, DepthSweepTrace* trace = nullptr) {
    const std::size_t ny = st.depth.ny(), nx = st.depth.nx();
    const Field2 ones_r1 = [&] {
        Field2 f(ny, nx);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = wts.alpha[i] / r1;
        return f;
    }();
    Field2 thr2(ny, nx);
    for (std::size_t i = 0; i < thr2.size(); ++i) thr2[i] = wts.beta[i] / r2;

    const GradField g = grad2d(st.depth);
    const HessianField h = hessian2d(st.depth);
    GradField av(ny, nx);
    HessianField aw(ny, nx);
    for (std::size_t i = 0; i < g.x.size(); ++i) {
        av.x[i] = g.x[i] + st.lambda1.x[i] / r1;
        av.y[i] = g.y[i] + st.lambda1.y[i] / r1;
        aw.xx[i] = h.xx[i] + st.lambda2.xx[i] / r2;
        aw.xy[i] = h.xy[i] + st.lambda2.xy[i] / r2;
        aw.yy[i] = h.yy[i] + st.lambda2.yy[i] / r2;
    }
    const GradField v = shrink_field(av, ones_r1);
    const HessianField w = shrink_field(aw, thr2);

    GradField a1(ny, nx);
    HessianField a2(ny, nx);
    for (std::size_t i = 0; i < g.x.size(); ++i) {
        a1.x[i] = r1 * v.x[i] - st.lambda1.x[i];
        a1.y[i] = r1 * v.y[i] - st.lambda1.y[i];
        a2.xx[i] = r2 * w.xx[i] - st.lambda2.xx[i];
        a2.xy[i] = r2 * w.xy[i] - st.lambda2.xy[i];
        a2.yy[i] = r2 * w.yy[i] - st.lambda2.yy[i];
    }
    const Field2 d1 = div2d(a1);
    const Field2 d2 = div2_2d(a2);
    Field2 rhs(ny, nx);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = target[i] - d1[i] + d2[i];

    if (trace) {
        trace->before_solve =
            depth_augmented_lagrangian(st.depth, v, w, st, target, wts, r1, r2);
    }
    st.depth = solve_screened_biharmonic(rhs, r1, r2);
    if (trace) {
        trace->after_solve = depth_augmented_lagrangian(st.depth, v, w, st, target, wts, r1, r2);
        trace->rhs = rhs;
    }

    const GradField gn = grad2d(st.depth);
    const HessianField hn = hessian2d(st.depth);
    for (std::size_t i = 0; i < gn.x.size(); ++i) {
        st.lambda1.x[i] += r1 * (gn.x[i] - v.x[i]);
        st.lambda1.y[i] += r1 * (gn.y[i] - v.y[i]);
        st.lambda2.xx[i] += r2 * (hn.xx[i] - w.xx[i]);
        st.lambda2.xy[i] += r2 * (hn.xy[i] - w.xy[i]);
        st.lambda2.yy[i] += r2 * (hn.yy[i] - w.yy[i]);
    }
}

/// Runs admm_iters_D sweeps; alpha and beta follow the current D unless fixed.
/// Returns the subproblem objective under the weights of the incoming D.
inline double update_D(DepthState& st, const Field2& target, const SolverParams& prm,
                       const std::optional<ShapeWeights>& fixed_weights = std::nullopt) {
    const ShapeWeights w_prev = fixed_weights ? *fixed_weights : alpha_beta(st.depth);
    for (int s = 0; s < prm.admm_iters_D; ++s) {
        const ShapeWeights w = fixed_weights ? *fixed_weights : alpha_beta(st.depth);
        depth_sweep(st, target, w, prm.r1, prm.r2);
    }
    return depth_objective(st.depth, target, w_prev);
}

inline Field2 update_D(const Field2& d_prev, const VoxelAlbedo& u, const SolverParams& prm) {
    DepthState st(d_prev.ny(), d_prev.nx());
    st.depth = d_prev;
    update_D(st, depth_target(project(u, prm.p).depth), prm);
    return st.depth;
}

// ---------------------------------------------------------------------------
// I-subproblem

struct AlbedoState {
    Field2 albedo;
    GradField lambda3;

    AlbedoState() = default;
    AlbedoState(std::size_t ny, std::size_t nx) : albedo(ny, nx, 0.0), lambda3(ny, nx) {}
    void reset_multipliers() { lambda3 = GradField(albedo.ny(), albedo.nx()); }
};

/// 1/2 |I - g|^2 + eta * TV(I).
inline double albedo_objective(const Field2& albedo, const Field2& target, double eta) {
    const GradField g = grad2d(albedo);
    double s = 0.0;
    for (std::size_t i = 0; i < albedo.size(); ++i) {
        const double r = albedo[i] - target[i];
        s += 0.5 * r * r + eta * std::hypot(g.x[i], g.y[i]);
    }
    return s;
}

inline double update_I(AlbedoState& st, const Field2& target, const SolverParams& prm) {
    const std::size_t ny = st.albedo.ny(), nx = st.albedo.nx();
    const Field2 thr(ny, nx, prm.eta / prm.r3);
    for (int s = 0; s < prm.admm_iters_I; ++s) {
        const GradField g = grad2d(st.albedo);
        GradField a(ny, nx);
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            a.x[i] = g.x[i] + st.lambda3.x[i] / prm.r3;
            a.y[i] = g.y[i] + st.lambda3.y[i] / prm.r3;
        }
        const GradField q = shrink_field(a, thr);
        GradField b(ny, nx);
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            b.x[i] = prm.r3 * q.x[i] - st.lambda3.x[i];
            b.y[i] = prm.r3 * q.y[i] - st.lambda3.y[i];
        }
        const Field2 d = div2d(b);
        Field2 rhs(ny, nx);
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = target[i] - d[i];
        st.albedo = solve_screened_poisson(rhs, prm.r3);
        const GradField gn = grad2d(st.albedo);
        for (std::size_t i = 0; i < gn.x.size(); ++i) {
            st.lambda3.x[i] += prm.r3 * (gn.x[i] - q.x[i]);
            st.lambda3.y[i] += prm.r3 * (gn.y[i] - q.y[i]);
        }
    }
    return albedo_objective(st.albedo, target, prm.eta);
}

inline AlbedoMap update_I(const Field2& i_prev, const VoxelAlbedo& u, const SolverParams& prm) {
    AlbedoState st(i_prev.ny(), i_prev.nx());
    st.albedo = i_prev;
    update_I(st, project(u, prm.p).albedo.val, prm);
    return AlbedoMap(st.albedo);
}

/// Rounds the working maps into a (I, D) pair for back-projection. Columns the
/// current projection left EMPTY stay EMPTY; albedo is clipped at 0 and kept
/// only where a surface exists.
inline Projection export_maps(const Field2& depth, const Field2& albedo, const DepthMap& support,
                              const SceneGrid& g) {
    Projection out{AlbedoMap(g.ny, g.nx), DepthMap(g.ny, g.nx)};
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (support.idx[i] == DepthMap::empty) continue;
        const long k = std::clamp<long>(std::lround(depth[i]), 0, static_cast<long>(g.nz) - 1);
        out.depth.idx[i] = static_cast<std::int32_t>(k) + 1;
        out.albedo.val[i] = std::max(albedo[i], 0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// u-subproblem

/// Gradient of 1/2 |A u_bar - tau|^2 + lambda/2 |u_bar - prior|^2 (prior may be null).
inline VoxelAlbedo u_gradient(const TransportOperator& op, const VoxelAlbedo& u_bar,
                              const TransientCube& tau, const ScanMask* mask, double lambda,
                              const VoxelAlbedo* prior) {
    TransientCube r = op.forward(u_bar, mask);
    vec::axpy(-1.0, tau.data.flat(), r.data.flat());
    if (mask) r = apply_selection(r, *mask);
    VoxelAlbedo grad = op.adjoint(r, mask);
    if (lambda != 0.0 && prior) {
        auto gd = grad.data.flat();
        const auto ub = u_bar.data.flat();
        const auto pr = prior->data.flat();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += lambda * (ub[i] - pr[i]);
    }
    return grad;
}

inline void update_u(FistaState& st, const TransportOperator& op, const TransientCube& tau,
                     const VoxelAlbedo& prior, const StepMetric& metric, double gamma,
                     const SolverParams& prm) {
    for (int s = 0; s < prm.u_iters; ++s) {
        const VoxelAlbedo grad = u_gradient(op, st.u_bar, tau, nullptr, prm.lambda, &prior);
        fista_step(st, grad, metric, gamma, prm.nonneg_clamp);
    }
}

/// Sparse initialization: FISTA on 1/2 |S A u - tau0|^2 + gamma |u|_1 from u = 0.
inline VoxelAlbedo init_u(const TransportOperator& op, const StepMetric& metric,
                          const TransientCube& tau0, const ScanMask& mask, double gamma,
                          int iters, bool nonneg_clamp) {
    FistaState st{VoxelAlbedo(op.grid())};
    for (int k = 0; k < iters; ++k) {
        const VoxelAlbedo grad = u_gradient(op, st.u_bar, tau0, &mask, 0.0, nullptr);
        fista_step(st, grad, metric, gamma, nonneg_clamp);
    }
    return st.u;
}

// ---------------------------------------------------------------------------
// Outer loop

enum class Method { slct, l1, l1_inpaint, lct };

inline Method parse_method(const std::string& s) {
    if (s == "slct") return Method::slct;
    if (s == "l1") return Method::l1;
    if (s == "l1-inpaint") return Method::l1_inpaint;
    if (s == "lct") return Method::lct;
    throw std::invalid_argument("unknown method '" + s + "' (valid: slct, l1, l1-inpaint, lct)");
}

struct StageTimes {
    double tau = 0.0;
    double depth = 0.0;
    double albedo = 0.0;
    double u = 0.0;
};

struct IterationRecord {
    int k = 0;
    double e1 = 0.0;
    double d_objective = 0.0;
    double i_objective = 0.0;
    double rel_change = 0.0;
    StageTimes seconds;
};

struct SolveReport {
    double gamma = 0.0;
    double e1_init = 0.0;
    double step_scale_init = 0.0;
    double step_scale_u = 0.0;
    double init_seconds = 0.0;
    std::vector<IterationRecord> iterations;
};

struct Reconstruction {
    VoxelAlbedo u;
    AlbedoMap albedo;
    DepthMap depth;
    SolveReport report;
};

inline std::unique_ptr<TransportOperator> make_operator(const SceneGrid& g, OperatorKind kind) {
    if (kind == OperatorKind::fft) return std::make_unique<ResampledTransport>(g);
    return std::make_unique<ConfocalTransport>(g);
}

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace detail

/// Alternating reconstruction. Method::slct runs every subproblem;
/// Method::l1_inpaint drops the geometric (D, I) terms; Method::l1 stops
/// after the sparse initialization, run for the same number of gradient steps.
inline Reconstruction reconstruct(const TransientCube& tau0, const ScanMask& mask,
                                  const SolverParams& prm, Method method,
                                  const TransportOperator& op, const ConfocalTransport& table) {
    prm.validate();
    const SceneGrid& g = tau0.grid;
    require_same_grid(g, op.grid(), "reconstruct");
    require_same_grid(g, table.grid(), "reconstruct");
    if (mask.ny() != g.ny || mask.nx() != g.nx) {
        throw std::invalid_argument("reconstruct: mask shape does not match grid");
    }
    if (method == Method::lct) throw std::invalid_argument("reconstruct: use lct_baseline");

    Reconstruction out;
    SolveReport& rep = out.report;
    rep.gamma = gamma_from(prm.sigma, tau0);
    const TransientCube tau0m = apply_selection(tau0, mask);

    auto t0 = std::chrono::steady_clock::now();
    const StepMetric init_metric = make_step_metric(op, table, &mask, 0.0, prm);
    rep.step_scale_init = init_metric.scale;
    const int init_iters =
        method == Method::l1 ? prm.fista_iters + prm.k_max * prm.u_iters : prm.fista_iters;
    VoxelAlbedo u0 = init_u(op, init_metric, tau0m, mask, rep.gamma, init_iters, prm.nonneg_clamp);
    rep.init_seconds = detail::seconds_since(t0);

    TransientCube au = op.forward(u0);
    rep.e1_init = energy_e1(au, update_tau(au, tau0m, mask, prm.rho), u0, tau0m, mask, prm.rho,
                            rep.gamma);

    if (method == Method::l1 || prm.k_max == 0) {
        out.u = std::move(u0);
        Projection pr = project(out.u, prm.p);
        out.albedo = std::move(pr.albedo);
        out.depth = std::move(pr.depth);
        return out;
    }

    const bool geometric = method == Method::slct;
    const double lambda = geometric ? prm.lambda : 0.0;
    const StepMetric metric = make_step_metric(op, table, nullptr, lambda, prm);
    rep.step_scale_u = metric.scale;

    FistaState st(u0);
    DepthState dst(g.ny, g.nx);
    AlbedoState ist(g.ny, g.nx);
    VoxelAlbedo prior(g);
    SolverParams uprm = prm;
    uprm.lambda = lambda;

    for (int k = 0; k < prm.k_max; ++k) {
        IterationRecord rec;
        rec.k = k;

        t0 = std::chrono::steady_clock::now();
        const TransientCube tau = update_tau(au, tau0m, mask, prm.rho);
        rec.seconds.tau = detail::seconds_since(t0);

        if (geometric) {
            const Projection pr = project(st.u, prm.p);
            if (prm.reset_multipliers) {
                dst.reset_multipliers();
                ist.reset_multipliers();
            }
            t0 = std::chrono::steady_clock::now();
            rec.d_objective = update_D(dst, depth_target(pr.depth), prm);
            rec.seconds.depth = detail::seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            rec.i_objective = update_I(ist, pr.albedo.val, prm);
            rec.seconds.albedo = detail::seconds_since(t0);
            const Projection maps = export_maps(dst.depth, ist.albedo, pr.depth, g);
            prior = back_project(maps.albedo, maps.depth, g);
        }

        t0 = std::chrono::steady_clock::now();
        const VoxelAlbedo u_prev = st.u;
        update_u(st, op, tau, prior, metric, rep.gamma, uprm);
        au = op.forward(st.u);
        rec.seconds.u = detail::seconds_since(t0);

        rec.rel_change = rel_error(st.u, u_prev);
        rec.e1 = energy_e1(au, tau, st.u, tau0m, mask, prm.rho, rep.gamma);
        rep.iterations.push_back(rec);

        if (!vec::all_finite(st.u.data.flat()) || !std::isfinite(rec.e1) ||
            (std::isfinite(rec.rel_change) && rec.rel_change > 1e3)) {
            std::ostringstream msg;
            msg << "solver diverged at outer iteration " << k << " (relative change "
                << rec.rel_change << ", E1 " << rec.e1 << ")";
            throw DivergenceError(msg.str());
        }
    }

    out.u = std::move(st.u);
    const Projection pr = project(out.u, prm.p);
    if (geometric) {
        Projection maps = export_maps(dst.depth, ist.albedo, pr.depth, g);
        out.albedo = std::move(maps.albedo);
        out.depth = std::move(maps.depth);
    } else {
        out.albedo = pr.albedo;
        out.depth = pr.depth;
    }
    return out;
}

inline Reconstruction slct_reconstruct(const TransientCube& tau0, const ScanMask& mask,
                                       const SolverParams& prm, Method method = Method::slct) {
    const ConfocalTransport table(tau0.grid);
    if (prm.op == OperatorKind::fft) {
        const ResampledTransport fast(tau0.grid);
        return reconstruct(tau0, mask, prm, method, fast, table);
    }
    return reconstruct(tau0, mask, prm, method, table, table);
}

/// Setup I: sparse initialization only, with the budget of a full joint run.
inline VoxelAlbedo l1_baseline(const TransientCube& tau0, const ScanMask& mask,
                               const SolverParams& prm) {
    return slct_reconstruct(tau0, mask, prm, Method::l1).u;
}

// ---------------------------------------------------------------------------
// Tikhonov baseline

struct CgResult {
    VoxelAlbedo u;
    std::vector<double> residuals;  // |[A; sqrt(mu) I] u - [tau0; 0]| per iteration
    bool converged = false;
    int iterations = 0;
};

/// min |A u - tau0|^2 + mu |u|^2 by CGLS, with optional column scaling.
inline CgResult lct_baseline(const TransientCube& tau0, const SolverParams& prm,
                             const TransportOperator& op, const ConfocalTransport& table) {
    const SceneGrid& g = tau0.grid;
    require_same_grid(g, op.grid(), "lct_baseline");
    const double mu = prm.lct_mu;
    if (mu < 0) throw std::invalid_argument("lct_baseline: mu must be >= 0");
    const std::size_t n = g.n_voxel();
    const double smu = std::sqrt(mu);

    std::vector<double> sc(n, 1.0);
    if (prm.precondition) {
        const Array3<double> cn = table.column_norms_sq();
        for (std::size_t i = 0; i < n; ++i) {
            const double d = cn[i] + mu;
            sc[i] = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
        }
    }

    // B = [A C; sqrt(mu) C] with C = diag(sc); residual r = [r1; r2].
    auto apply_b = [&](const std::vector<double>& p, TransientCube& q1, std::vector<double>& q2) {
        VoxelAlbedo tmp(g);
        auto td = tmp.data.flat();
        for (std::size_t i = 0; i < n; ++i) td[i] = sc[i] * p[i];
        q1 = op.forward(tmp);
        q2.resize(n);
        for (std::size_t i = 0; i < n; ++i) q2[i] = smu * td[i];
    };
    auto apply_bt = [&](const TransientCube& r1, const std::vector<double>& r2) {
        const VoxelAlbedo back = op.adjoint(r1);
        const auto bd = back.data.flat();
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = sc[i] * (bd[i] + smu * r2[i]);
        return s;
    };

    CgResult res;
    std::vector<double> x(n, 0.0);
    TransientCube r1 = tau0;
    std::vector<double> r2(n, 0.0);
    std::vector<double> s = apply_bt(r1, r2);
    std::vector<double> p = s;
    double gam = vec::dot(s, s);
    const double gam0 = gam;
    auto resid = [&] {
        const double a = vec::norm(r1.data.flat());
        const double b = vec::norm(r2);
        return std::sqrt(a * a + b * b);
    };
    res.residuals.push_back(resid());

    TransientCube q1(g);
    std::vector<double> q2;
    for (int it = 0; it < prm.cg_iters; ++it) {
        if (gam0 == 0.0 || gam <= prm.cg_tol * prm.cg_tol * gam0) {
            res.converged = true;
            break;
        }
        apply_b(p, q1, q2);
        const double qq = vec::dot(q1.data.flat(), q1.data.flat()) + vec::dot(q2, q2);
        if (qq == 0.0) {
            res.converged = true;
            break;
        }
        const double alpha = gam / qq;
        vec::axpy(alpha, p, x);
        vec::axpy(-alpha, q1.data.flat(), r1.data.flat());
        vec::axpy(-alpha, q2, r2);
        s = apply_bt(r1, r2);
        const double gam_new = vec::dot(s, s);
        const double beta = gam_new / gam;
        for (std::size_t i = 0; i < n; ++i) p[i] = s[i] + beta * p[i];
        gam = gam_new;
        res.iterations = it + 1;
        res.residuals.push_back(resid());
    }
    if (!res.converged && gam0 != 0.0 && gam <= prm.cg_tol * prm.cg_tol * gam0) res.converged = true;
    if (!res.converged) {
        std::cerr << "warning: lct_baseline: CGLS not converged after " << prm.cg_iters
                  << " iterations (relative gradient " << std::sqrt(gam / gam0)
                  << "); returning last iterate\n";
    }
    res.u = VoxelAlbedo(g);
    auto ud = res.u.data.flat();
    for (std::size_t i = 0; i < n; ++i) ud[i] = sc[i] * x[i];
    return res;
}

inline CgResult lct_baseline(const TransientCube& tau0, const SolverParams& prm) {
    const ConfocalTransport table(tau0.grid);
    if (prm.op == OperatorKind::fft) {
        const ResampledTransport fast(tau0.grid);
        return lct_baseline(tau0, prm, fast, table);
    }
    return lct_baseline(tau0, prm, table, table);
}

}  // namespace nlos
