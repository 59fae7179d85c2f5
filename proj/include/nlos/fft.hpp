#pragma once

// Thin RAII layer over FFTW real-to-complex transforms with a per-thread plan
// cache. Plans are created with FFTW_ESTIMATE so the chosen algorithm, and
// therefore every output bit, does not depend on timing.

#include <fftw3.h>

#include <array>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace nlos::fft {

inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

/// Real <-> half-complex transform of fixed rank-2 or rank-3 shape (row-major,
/// last axis halved in the spectrum). The inverse is scaled by 1/N.
class RealPlan {
public:
    explicit RealPlan(std::vector<int> dims) : dims_(std::move(dims)) {
        n_real_ = 1;
        for (int d : dims_) n_real_ *= static_cast<std::size_t>(d);
        n_complex_ = n_real_ / static_cast<std::size_t>(dims_.back()) *
                     (static_cast<std::size_t>(dims_.back()) / 2 + 1);
        real_ = fftw_alloc_real(n_real_);
        cplx_ = fftw_alloc_complex(n_complex_);
        if (!real_ || !cplx_) throw std::bad_alloc();
        std::lock_guard lock(planner_mutex());
        const int rank = static_cast<int>(dims_.size());
        fwd_ = fftw_plan_dft_r2c(rank, dims_.data(), real_, cplx_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r(rank, dims_.data(), cplx_, real_, FFTW_ESTIMATE);
        if (!fwd_ || !inv_) throw std::runtime_error("fftw plan creation failed");
    }
    RealPlan(const RealPlan&) = delete;
    RealPlan& operator=(const RealPlan&) = delete;
    ~RealPlan() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(cplx_);
    }

    std::size_t real_size() const { return n_real_; }
    std::size_t complex_size() const { return n_complex_; }
    const std::vector<int>& dims() const { return dims_; }

    std::span<double> real() { return {real_, n_real_}; }
    std::span<std::complex<double>> spectrum() {
        return {reinterpret_cast<std::complex<double>*>(cplx_), n_complex_};
    }

    /// real() -> spectrum()
    void forward() { fftw_execute(fwd_); }

    /// spectrum() -> real(), including the 1/N normalization. Clobbers spectrum().
    void inverse() {
        fftw_execute(inv_);
        const double s = 1.0 / static_cast<double>(n_real_);
        for (std::size_t i = 0; i < n_real_; ++i) real_[i] *= s;
    }

private:
    std::vector<int> dims_;
    std::size_t n_real_ = 0;
    std::size_t n_complex_ = 0;
    double* real_ = nullptr;
    fftw_complex* cplx_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

/// Cached plan for the given shape, owned by the calling thread.
inline RealPlan& plan_for(const std::vector<int>& dims) {
    thread_local std::map<std::vector<int>, std::unique_ptr<RealPlan>> cache;
    auto it = cache.find(dims);
    if (it == cache.end()) {
        it = cache.emplace(dims, std::make_unique<RealPlan>(dims)).first;
    }
    return *it->second;
}

inline RealPlan& plan2(std::size_t ny, std::size_t nx) {
    return plan_for({static_cast<int>(ny), static_cast<int>(nx)});
}

inline RealPlan& plan3(std::size_t n0, std::size_t n1, std::size_t n2) {
    return plan_for({static_cast<int>(n0), static_cast<int>(n1), static_cast<int>(n2)});
}

}  // namespace nlos::fft
