#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "maskint/tensor.hpp"

namespace maskint::testing {

// visible[i][j] for tokens in (frame, row, col) raster order. Window 0 x 0
// means spatial attention (same frame); otherwise tube attention over
// window_rows x window_cols blocks spanning every frame.
inline std::vector<std::vector<bool>> WindowVisibility(std::size_t frames, std::size_t rows,
                                                       std::size_t cols, std::size_t window_rows,
                                                       std::size_t window_cols) {
  const std::size_t n = frames * rows * cols;
  std::vector<std::vector<bool>> visible(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t fi = i / (rows * cols), fj = j / (rows * cols);
      const std::size_t ri = i / cols % rows, rj = j / cols % rows;
      const std::size_t ci = i % cols, cj = j % cols;
      visible[i][j] = window_rows == 0
                          ? fi == fj
                          : ri / window_rows == rj / window_rows && ci / window_cols == cj / window_cols;
    }
  }
  return visible;
}

// Plain softmax attention over all tokens with a boolean visibility mask.
// qkv holds query, key and value projections side by side.
inline Tensor<double> MaskedGlobalAttention(const Tensor<double>& qkv, std::size_t heads,
                                            const std::vector<std::vector<bool>>& visible) {
  const std::size_t n = qkv.rows(), width = qkv.cols() / 3, dh = width / heads;
  Tensor<double> out({n, width});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!visible[i][j]) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) {
          dot += qkv.at(i, h * dh + d) * qkv.at(j, width + h * dh + d);
        }
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += visible[i][j] ? std::exp(s[j] - mx) : 0.0;
      for (std::size_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (visible[i][j]) acc += std::exp(s[j] - mx) / z * qkv.at(j, 2 * width + h * dh + d);
        }
        out.at(i, h * dh + d) = acc;
      }
    }
  }
  return out;
}

template <typename A, typename B>
double MaxAbsDiff(const Tensor<A>& a, const Tensor<B>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
  }
  return m;
}

}  // namespace maskint::testing
