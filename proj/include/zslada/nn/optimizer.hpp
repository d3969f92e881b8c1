#pragma once

#include "zslada/common.hpp"
#include "zslada/nn/mlp.hpp"

#include <cstdint>

namespace zslada::nn {

enum class OptimizerKind { adam, rmsprop };

/// For RMSprop, beta2 is the squared-gradient decay and beta1 is unused.
struct OptimizerHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, OptimizerHyper hyper, Index size);

  static Optimizer adam(OptimizerHyper hyper, Index size) { return {OptimizerKind::adam, hyper, size}; }
  /// Defaults follow the adaptation stage: lr 1e-5, decay 0.99.
  static Optimizer rmsprop(Index size, double learning_rate = 1e-5, double decay = 0.99, double weight_decay = 0.0);

  /// In-place update. The weight-decay term lambda * theta is added to the
  /// gradient before the moment updates. Throws non_finite naming the first
  /// offending index; nothing is modified in that case.
  void step(Vector& params, const Vector& grads);

  OptimizerKind kind() const { return kind_; }
  const OptimizerHyper& hyper() const { return hyper_; }
  std::uint64_t step_count() const { return steps_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  OptimizerHyper hyper_;
  std::uint64_t steps_ = 0;
  Vector m_;
  Vector v_;
};

/// Applies one optimizer step to a network, reporting non-finite gradients by layer.
void apply_gradient(MlpNetwork& net, Optimizer& opt, const Vector& grads);

}  // namespace zslada::nn
