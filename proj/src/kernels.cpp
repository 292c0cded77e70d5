#include "mosformer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mosformer/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mosf::kernels {

namespace {

// Inner product panel: c_row[0..n) += a_ik * b_row[0..n). The j-loop
// auto-vectorizes with fma; each C row is owned by exactly one thread, so the
// K reduction order is fixed and results do not depend on the thread count.
template <typename T>
inline void row_axpy(T a_ik, const T* __restrict b_row, T* __restrict c_row, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        c_row[j] = std::fma(a_ik, b_row[j], c_row[j]);
    }
}

constexpr std::size_t kParallelCutoff = 16 * 1024;  // flops below this run single-threaded

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const bool par = m * n * k >= kParallelCutoff && max_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* c_row = c + static_cast<std::size_t>(i) * n;
        if (!accumulate) std::fill(c_row, c_row + n, T(0));
        const T* a_row = a + static_cast<std::size_t>(i) * k;
        std::size_t kk = 0;
        for (; kk + 4 <= k; kk += 4) {
            const T a0 = a_row[kk], a1 = a_row[kk + 1], a2 = a_row[kk + 2], a3 = a_row[kk + 3];
            const T* b0 = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                T acc = std::fma(a0, b0[j], c_row[j]);
                acc = std::fma(a1, b0[n + j], acc);
                acc = std::fma(a2, b0[2 * n + j], acc);
                c_row[j] = std::fma(a3, b0[3 * n + j], acc);
            }
        }
        for (; kk < k; ++kk) {
            row_axpy(a_row[kk], b + kk * n, c_row, n);
        }
    }
}

template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    // A is k x m, we compute C[i,:] += sum_kk A[kk,i] * B[kk,:]
    const bool par = m * n * k >= kParallelCutoff && max_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* c_row = c + static_cast<std::size_t>(i) * n;
        if (!accumulate) std::fill(c_row, c_row + n, T(0));
        for (std::size_t kk = 0; kk < k; ++kk) {
            row_axpy(a[kk * m + static_cast<std::size_t>(i)], b + kk * n, c_row, n);
        }
    }
}

template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    // B is n x k; C[i,j] += dot(A[i,:], B[j,:]). Dot products vectorize on k.
    const bool par = m * n * k >= kParallelCutoff && max_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const T* a_row = a + static_cast<std::size_t>(i) * k;
        T* c_row = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* b_row = b + j * k;
            T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
            std::size_t kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                acc0 = std::fma(a_row[kk], b_row[kk], acc0);
                acc1 = std::fma(a_row[kk + 1], b_row[kk + 1], acc1);
                acc2 = std::fma(a_row[kk + 2], b_row[kk + 2], acc2);
                acc3 = std::fma(a_row[kk + 3], b_row[kk + 3], acc3);
            }
            T acc = (acc0 + acc1) + (acc2 + acc3);
            for (; kk < k; ++kk) acc = std::fma(a_row[kk], b_row[kk], acc);
            c_row[j] = accumulate ? c_row[j] + acc : acc;
        }
    }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n, bool accumulate) {
    if (accumulate) {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
    }
}

template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_at_b<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_at_b<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_a_bt<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_a_bt<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void axpy<float>(float, const float*, float*, std::size_t, bool);
template void axpy<double>(double, const double*, double*, std::size_t, bool);

}  // namespace mosf::kernels
