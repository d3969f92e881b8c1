#include "zslada/nn/grad_check.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace zslada::nn {

namespace {

double central(const ScalarFn& f, Vector& x, Index i, double h) {
  const Real saved = x[i];
  x[i] = saved + static_cast<Real>(h);
  const double plus = f(x);
  x[i] = saved - static_cast<Real>(h);
  const double minus = f(x);
  x[i] = saved;
  return (plus - minus) / (2.0 * h);
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const GradientFn& gradient, const Vector& at, double tolerance,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  const Vector analytic = gradient(at);
  if (analytic.size() != at.size()) return report;

  std::vector<Index> coords(static_cast<std::size_t>(at.size()));
  std::iota(coords.begin(), coords.end(), Index{0});
  if (options.max_coords > 0 && options.max_coords < at.size()) {
    Rng rng = Rng::stream(options.seed, "grad-check");
    for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_coords); ++i) {
      const auto j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(static_cast<std::size_t>(options.max_coords));
  }

  double scale = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) scale = std::max(scale, std::abs(static_cast<double>(analytic[i])));
  const double floor = std::max(options.absolute_floor, options.scale_floor * scale);

  Vector x = at;
  bool finite = true;
  for (Index i : coords) {
    const double a = analytic[i];
    double h = options.step;
    double numeric = central(f, x, i, h);
    for (int r = 0; r < options.max_refinements; ++r) {
      const double half = central(f, x, i, h / 2);
      const double denom = std::max({std::abs(numeric), std::abs(half), floor});
      if (std::abs(numeric - half) / denom < tolerance / 10) break;
      h /= 10;
      numeric = central(f, x, i, h);
      ++report.refined;
    }
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      finite = false;
      report.max_relative_error = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      continue;
    }
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = finite && report.max_relative_error < tolerance;
  return report;
}

}  // namespace zslada::nn
