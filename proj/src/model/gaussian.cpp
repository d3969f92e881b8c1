#include "zslada/model/gaussian.hpp"

#include <cmath>
#include <string>

namespace zslada::model {

namespace {

Real stable_sigmoid(Real v) {
  return v >= 0 ? Real(1) / (Real(1) + std::exp(-v)) : std::exp(v) / (Real(1) + std::exp(v));
}

void check_inputs(const Eigen::Ref<const Vector>& x, const GaussianClassParams& params) {
  if (x.size() != params.mean.size() || params.precision.size() != params.mean.size())
    throw Error(ErrorCode::dimension_mismatch, "feature has " + std::to_string(x.size()) + " entries, class " +
                                                   std::to_string(params.class_id) + " mean has " +
                                                   std::to_string(params.mean.size()));
  if (!x.allFinite() || !params.mean.allFinite() || !params.precision.allFinite())
    throw Error(ErrorCode::non_finite, "non-finite input to Gaussian log-likelihood of class " +
                                           std::to_string(params.class_id));
}

}  // namespace

Vector bounded_precision(const Vector& raw) {
  return raw.unaryExpr([](Real v) { return static_cast<Real>(kPrecisionFloor) + stable_sigmoid(v); });
}

Vector bounded_precision_slope(const Vector& raw) {
  return raw.unaryExpr([](Real v) {
    const Real s = stable_sigmoid(v);
    return s * (1 - s);
  });
}

double gaussian_loglik(const Eigen::Ref<const Vector>& x, const GaussianClassParams& params, bool include_logdet) {
  check_inputs(x, params);
  const auto diff = (x - params.mean).array();
  double ll = -static_cast<double>((params.precision.array() * diff.square()).sum());
  if (include_logdet) ll += static_cast<double>(params.precision.array().log().sum());
  return ll;
}

LoglikGradient gaussian_loglik_gradient(const Eigen::Ref<const Vector>& x, const GaussianClassParams& params,
                                        bool include_logdet) {
  check_inputs(x, params);
  const Vector diff = x - params.mean;
  LoglikGradient g;
  g.mean = 2 * params.precision.cwiseProduct(diff);
  g.precision = -diff.cwiseProduct(diff);
  if (include_logdet) g.precision += params.precision.cwiseInverse();
  return g;
}

}  // namespace zslada::model
