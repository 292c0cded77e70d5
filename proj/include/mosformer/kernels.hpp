#pragma once

#include <cstddef>

// Low-level numeric kernels. Everything here is deterministic: parallel loops
// split over disjoint output ranges with static scheduling, reductions stay
// sequential within one owner.

namespace mosf::kernels {

// Row-major C[m x n] (+)= A[m x k] * B[k x n].
// When accumulate is false, C is overwritten.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// C[m x n] (+)= A[m x k] * B[n x k]^T
template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// y (+)= alpha * x, n elements.
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n, bool accumulate);

}  // namespace mosf::kernels
