#pragma once

#include <cstddef>
#include <vector>

namespace mvccl::kernels {

// All matrices are row-major and contiguous. Every kernel accumulates into
// its output; the summation order over the contracted index is ascending,
// so C = 0 + A·B reproduces a naive triple loop bit for bit.

/// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c_row = c + i * n;
    const T* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T a_ip = a_row[p];
      const T* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

/// C[m×k] += A[m×n] · B[k×n]ᵀ
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_acc(m, n, k, a, bt.data(), c);
}

/// C[k×n] += A[m×k]ᵀ · B[m×n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a_row = a + i * k;
    const T* b_row = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a_ip = a_row[p];
      T* c_row = c + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

}  // namespace mvccl::kernels
