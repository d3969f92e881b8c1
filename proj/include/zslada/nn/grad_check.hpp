#pragma once

#include "zslada/common.hpp"

#include <cstdint>
#include <functional>

namespace zslada::nn {

using ScalarFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries smaller than this fraction of the largest gradient entry are
  /// compared against that scale instead of their own magnitude.
  double scale_floor = 1e-3;
  double absolute_floor = 1e-10;
  /// Check at most this many coordinates (chosen with `seed`); 0 checks all.
  Index max_coords = 0;
  std::uint64_t seed = 0;
  /// Step is shrunk up to this many times when the h and h/2 estimates
  /// disagree, which happens when a kink (relu, |.|) lies inside the stencil.
  int max_refinements = 3;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  Index worst_index = -1;
  Index checked = 0;
  Index refined = 0;
  bool passed = false;
};

/// Compares `gradient(at)` with central differences of `f`.
/// Passes iff every checked coordinate has relative error < tolerance and
/// all values are finite.
GradCheckReport grad_check(const ScalarFn& f, const GradientFn& gradient, const Vector& at, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace zslada::nn
