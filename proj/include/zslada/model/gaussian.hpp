#pragma once

#include "zslada/common.hpp"

namespace zslada::model {

/// Diagonal Gaussian for one class, parameterized by its precision.
struct GaussianClassParams {
  int class_id = 0;
  Vector mean;
  Vector precision;

  Index dim() const { return mean.size(); }
};

inline constexpr double kPrecisionFloor = 0.5;

/// Precision head: 0.5 + sigmoid(raw), so every entry lies in (0.5, 1.5).
Vector bounded_precision(const Vector& raw);
/// d precision / d raw for the head above.
Vector bounded_precision_slope(const Vector& raw);

/// sum_j log p_j - sum_j p_j (x_j - mu_j)^2 with the log-determinant,
/// -sum_j p_j (x_j - mu_j)^2 without. The 1/2 factor and the 2*pi constant
/// are dropped everywhere, which leaves the argmax over classes unchanged.
double gaussian_loglik(const Eigen::Ref<const Vector>& x, const GaussianClassParams& params, bool include_logdet);

struct LoglikGradient {
  Vector mean;
  Vector precision;
};

/// Gradient of gaussian_loglik with respect to the mean and precision vectors.
LoglikGradient gaussian_loglik_gradient(const Eigen::Ref<const Vector>& x, const GaussianClassParams& params,
                                        bool include_logdet);

}  // namespace zslada::model
