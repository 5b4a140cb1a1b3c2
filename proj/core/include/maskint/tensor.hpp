#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "maskint/errors.hpp"

namespace maskint {

using Shape = std::vector<std::size_t>;

inline std::size_t ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Dense row-major array. Precision is a template parameter: float for
// training and inference, double for gradient checks.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    Validate();
    values_.assign(ShapeSize(shape_), T{0});
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    Validate();
    if (values_.size() != ShapeSize(shape_)) {
      throw GeometryError("tensor: " + std::to_string(values_.size()) +
                          " values do not fill shape " + ShapeString(shape_));
    }
  }

  static Tensor Scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Leading extents folded into rows; the last extent is the row width.
  std::size_t rows() const { return shape_.empty() ? 0 : size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }

  void Fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor Reshaped(Shape shape) const {
    if (ShapeSize(shape) != size()) {
      throw GeometryError("reshape " + ShapeString(shape_) + " -> " +
                          ShapeString(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  template <typename U>
  Tensor<U> Cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void Validate() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw GeometryError("tensor extents must be positive: " + ShapeString(shape_));
    }
  }

  Shape shape_;
  std::vector<T> values_;
};

inline void RequireShape(const Shape& got, const Shape& want, const char* what) {
  if (got != want) {
    throw GeometryError(std::string(what) + ": expected " + ShapeString(want) +
                        ", got " + ShapeString(got));
  }
}

}  // namespace maskint
