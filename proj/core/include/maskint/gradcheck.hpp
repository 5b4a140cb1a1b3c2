#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace maskint::ad {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Richardson extrapolation over central differences at epsilon,
  // epsilon/2, ..., epsilon/2^levels; each level cancels one more even-order
  // truncation term. 0 is the plain central difference.
  std::size_t richardson_levels = 0;
  // Components smaller than this fraction of the largest numerical gradient
  // are compared against that floor instead of their own magnitude.
  double relative_floor = 0.0;
};

struct GradCheckReport {
  // |a - n|_2 / max(|a|_2, |n|_2) over the whole gradient vector.
  double norm_relative_error = 0.0;
  // Worst componentwise error, see CompareGradients.
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_component = 0;
  std::size_t components = 0;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central-difference estimate of df/dx at the listed coordinates (all when
// coords is empty). Evaluated in double precision.
std::vector<double> NumericalGradient(const ScalarFunction& f, std::vector<double> point,
                                      std::span<const std::size_t> coords,
                                      const GradCheckOptions& options);

// Componentwise |a - n| / max(|a|, |n|, floor); 0 where both are zero. The
// floor is relative_floor times the largest numerical component.
GradCheckReport CompareGradients(std::span<const double> analytic,
                                 std::span<const double> numerical,
                                 double relative_floor = 0.0);

// Compares an analytic gradient against central differences of f at point.
GradCheckReport GradCheck(const ScalarFunction& f, std::span<const double> analytic,
                          std::vector<double> point, const GradCheckOptions& options = {},
                          std::span<const std::size_t> coords = {});

}  // namespace maskint::ad
