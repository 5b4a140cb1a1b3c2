#pragma once

#include <algorithm>
#include <cstddef>

// Raw loops shared by the tape ops and by the inference-only code paths.
// Every reduction runs sequentially over its summation axis so results are
// bit-identical across runs.
namespace maskint::kernels {

// c[m x n] += a[m x k] * b[k x n]. Tiles of kRows x kCols outputs stay in
// local accumulators across the whole k loop; each output still sums its
// products in ascending p, so the tiling does not change any result bit.
template <typename T>
void GemmAccumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  constexpr std::size_t kRows = 4, kCols = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
    const std::size_t rows = std::min(kRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
      const std::size_t cols = std::min(kCols, n - j0);
      T acc[kRows][kCols];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) acc[r][j] = c[(i0 + r) * n + j0 + j];
      }
      if (rows == kRows && cols == kCols) {
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = b + p * n + j0;
          for (std::size_t r = 0; r < kRows; ++r) {
            const T av = a[(i0 + r) * k + p];
            for (std::size_t j = 0; j < kCols; ++j) acc[r][j] += av * brow[j];
          }
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = b + p * n + j0;
          for (std::size_t r = 0; r < rows; ++r) {
            const T av = a[(i0 + r) * k + p];
            for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
      }
    }
  }
}

// out[n x m] = in[m x n]^T
template <typename T>
void Transpose(const T* in, T* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
}

}  // namespace maskint::kernels
