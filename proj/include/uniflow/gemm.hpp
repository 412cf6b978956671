#pragma once

// Small deterministic row-major GEMM used by the convolution kernels.

#include <algorithm>
#include <cstdint>

namespace uniflow::gemm {

namespace detail {

constexpr std::int64_t kNr = 16;

template <int MR>
inline void micro(std::int64_t k, std::int64_t nr, const double* __restrict a, std::int64_t lda,
                  const double* __restrict b, std::int64_t ldb, double* __restrict c, std::int64_t ldc) {
  double acc[MR][kNr] = {};
  if (nr == kNr) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double* br = b + kk * ldb;
      for (int i = 0; i < MR; ++i) {
        const double av = a[i * lda + kk];
#pragma omp simd
        for (std::int64_t j = 0; j < kNr; ++j) acc[i][j] += av * br[j];
      }
    }
  } else {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double* br = b + kk * ldb;
      for (int i = 0; i < MR; ++i) {
        const double av = a[i * lda + kk];
        for (std::int64_t j = 0; j < nr; ++j) acc[i][j] += av * br[j];
      }
    }
  }
  for (int i = 0; i < MR; ++i)
    for (std::int64_t j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
}

}  // namespace detail

/// C (m x n) += A (m x k) * B (k x n), all row-major with the given strides.
inline void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, std::int64_t lda,
                    const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  for (std::int64_t j0 = 0; j0 < n; j0 += detail::kNr) {
    const std::int64_t nr = std::min(detail::kNr, n - j0);
    std::int64_t i0 = 0;
    for (; i0 + 4 <= m; i0 += 4) detail::micro<4>(k, nr, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc);
    switch (m - i0) {
      case 3: detail::micro<3>(k, nr, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc); break;
      case 2: detail::micro<2>(k, nr, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc); break;
      case 1: detail::micro<1>(k, nr, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc); break;
      default: break;
    }
  }
}

}  // namespace uniflow::gemm
