#include "maskint/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "maskint/errors.hpp"

namespace maskint::ad {
namespace {

double Central(const ScalarFunction& f, std::vector<double>& x, std::size_t i, double eps) {
  const double saved = x[i];
  x[i] = saved + eps;
  const double up = f(x);
  x[i] = saved - eps;
  const double down = f(x);
  x[i] = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace

std::vector<double> NumericalGradient(const ScalarFunction& f, std::vector<double> point,
                                      std::span<const std::size_t> coords,
                                      const GradCheckOptions& options) {
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) {
    if (i >= point.size()) throw IndexError("grad_check: coordinate out of range");
    // Romberg tableau: row j holds the differences at epsilon / 2^j.
    std::vector<double> row;
    double h = options.epsilon;
    for (std::size_t j = 0; j <= options.richardson_levels; ++j, h /= 2.0) {
      std::vector<double> next{Central(f, point, i, h)};
      double factor = 4.0;
      for (std::size_t m = 0; m < j; ++m, factor *= 4.0) {
        next.push_back((factor * next[m] - row[m]) / (factor - 1.0));
      }
      row = std::move(next);
    }
    out.push_back(row.back());
  }
  return out;
}

GradCheckReport CompareGradients(std::span<const double> analytic,
                                 std::span<const double> numerical, double relative_floor) {
  if (analytic.size() != numerical.size()) {
    throw GeometryError("grad_check: gradient lengths differ");
  }
  double scale = 0.0;
  for (double v : numerical) scale = std::max(scale, std::abs(v));
  const double floor = relative_floor * scale;
  GradCheckReport report;
  report.components = analytic.size();
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numerical[i]);
    diff_sq += diff * diff;
    a_sq += analytic[i] * analytic[i];
    n_sq += numerical[i] * numerical[i];
    const double denom = std::max({std::abs(analytic[i]), std::abs(numerical[i]), floor});
    const double rel = denom == 0.0 ? 0.0 : diff / denom;
    report.max_absolute_error = std::max(report.max_absolute_error, diff);
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_component = i;
    }
  }
  const double norm = std::sqrt(std::max(a_sq, n_sq));
  report.norm_relative_error = norm == 0.0 ? 0.0 : std::sqrt(diff_sq) / norm;
  return report;
}

GradCheckReport GradCheck(const ScalarFunction& f, std::span<const double> analytic,
                          std::vector<double> point, const GradCheckOptions& options,
                          std::span<const std::size_t> coords) {
  const std::vector<double> numerical = NumericalGradient(f, std::move(point), coords, options);
  if (coords.empty()) return CompareGradients(analytic, numerical, options.relative_floor);
  std::vector<double> picked;
  picked.reserve(coords.size());
  for (std::size_t i : coords) picked.push_back(analytic[i]);
  return CompareGradients(picked, numerical, options.relative_floor);
}

}  // namespace maskint::ad
