#pragma once

#include <cstddef>
#include <vector>

namespace fvlfp::num::detail {

// C(m x n) (+)= A(m x k) * B(k x n)
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C(m x n) (+)= A(m x k) * B(n x k)^T. B is transposed into scratch first so
// the inner loop runs over contiguous memory.
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c, bool accumulate) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

// C(m x n) (+)= A(k x m)^T * B(k x n)
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace fvlfp::num::detail
