#include "zslada/nn/optimizer.hpp"

#include <cmath>
#include <string>

namespace zslada::nn {

namespace {

Index first_non_finite(const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i]))) return i;
  }
  return -1;
}

}  // namespace

Optimizer::Optimizer(OptimizerKind kind, OptimizerHyper hyper, Index size)
    : kind_(kind), hyper_(hyper), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

Optimizer Optimizer::rmsprop(Index size, double learning_rate, double decay, double weight_decay) {
  OptimizerHyper h;
  h.learning_rate = learning_rate;
  h.beta1 = 0.0;
  h.beta2 = decay;
  h.epsilon = 1e-8;
  h.weight_decay = weight_decay;
  return {OptimizerKind::rmsprop, h, size};
}

void Optimizer::step(Vector& params, const Vector& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw Error(ErrorCode::dimension_mismatch, "optimizer tracks " + std::to_string(m_.size()) +
                                                   " parameters, got params " + std::to_string(params.size()) +
                                                   " and grads " + std::to_string(grads.size()));
  if (const Index bad = first_non_finite(grads); bad >= 0)
    throw Error(ErrorCode::non_finite, "gradient entry " + std::to_string(bad) + " is not finite");

  const Real lr = static_cast<Real>(hyper_.learning_rate);
  const Real eps = static_cast<Real>(hyper_.epsilon);
  const Real b1 = static_cast<Real>(hyper_.beta1);
  const Real b2 = static_cast<Real>(hyper_.beta2);
  Vector g = grads;
  if (hyper_.weight_decay != 0.0) g += static_cast<Real>(hyper_.weight_decay) * params;
  ++steps_;

  if (kind_ == OptimizerKind::adam) {
    m_ = b1 * m_ + (1 - b1) * g;
    v_ = b2 * v_ + (1 - b2) * g.cwiseProduct(g);
    const Real c1 = 1 - static_cast<Real>(std::pow(hyper_.beta1, static_cast<double>(steps_)));
    const Real c2 = 1 - static_cast<Real>(std::pow(hyper_.beta2, static_cast<double>(steps_)));
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  } else {
    v_ = b2 * v_ + (1 - b2) * g.cwiseProduct(g);
    params.array() -= lr * g.array() / (v_.array().sqrt() + eps);
  }
}

void apply_gradient(MlpNetwork& net, Optimizer& opt, const Vector& grads) {
  if (const Index bad = first_non_finite(grads); bad >= 0)
    throw Error(ErrorCode::non_finite, "gradient entry " + std::to_string(bad) + " in layer " +
                                           std::to_string(net.layer_of_param(bad)) + " is not finite");
  opt.step(net.mutable_params(), grads);
}

}  // namespace zslada::nn
