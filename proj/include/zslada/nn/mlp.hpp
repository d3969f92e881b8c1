#pragma once

#include "zslada/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace zslada::nn {

enum class Activation { identity, relu, leaky_relu, sigmoid, log_softmax };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// One dense block: Linear -> [BatchNorm] -> activation -> [Dropout].
struct LayerSpec {
  Index width = 0;
  Activation activation = Activation::identity;
  double leaky_slope = 0.2;
  bool batchnorm = false;
  double dropout = 0.0;
};

struct MlpSpec {
  Index input_width = 0;
  std::vector<LayerSpec> layers;

  Index output_width() const { return layers.empty() ? input_width : layers.back().width; }
  Index param_count() const;

  /// Throws invalid_config when widths are non-positive, there are no layers,
  /// or a dropout probability is outside [0, 1).
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

void to_json(nlohmann::json& j, const MlpSpec& spec);
void from_json(const nlohmann::json& j, MlpSpec& spec);

/// Convenience builder: hidden blocks share one activation, the last layer gets `out_act`.
MlpSpec make_spec(Index input_width, const std::vector<Index>& hidden, Index output_width,
                  Activation hidden_act, Activation out_act, bool batchnorm = false,
                  double dropout = 0.0, double leaky_slope = 0.2);

enum class Mode { train, eval };

struct BatchNormStats {
  Vector mean;
  Vector var;
};

struct LayerCache {
  Matrix input;     // n x in
  Matrix xhat;      // normalized pre-activation (batchnorm layers only)
  Vector inv_std;   // per-unit 1/sqrt(var + eps) used by this pass
  Vector batch_mean;
  Vector batch_var;
  Matrix activated; // activation output before dropout
  Matrix mask;      // dropout mask with inverted scaling, empty when unused
};

/// Everything backward() needs, tagged with the network state that produced it.
struct ForwardPass {
  Matrix output;
  std::vector<LayerCache> layers;
  Mode mode = Mode::eval;
  std::uint64_t network_id = 0;
  std::uint64_t generation = 0;
};

struct Gradients {
  Vector params;
  Matrix input;
};

/// Feed-forward network over a flat parameter vector.
///
/// Parameter layout, per layer in order: W (out x in, row-major), b (out),
/// and for batchnorm layers gamma (out), beta (out). Running statistics are
/// kept outside the parameter vector and only change through
/// absorb_batch_stats().
class MlpNetwork {
 public:
  MlpNetwork() = default;
  MlpNetwork(MlpSpec spec, std::uint64_t init_seed);

  const MlpSpec& spec() const { return spec_; }
  Index input_width() const { return spec_.input_width; }
  Index output_width() const { return spec_.output_width(); }

  const Vector& params() const { return params_; }
  /// Mutable access invalidates every outstanding ForwardPass.
  Vector& mutable_params();
  void set_params(const Vector& params);

  const std::vector<BatchNormStats>& running_stats() const { return running_; }
  void set_running_stats(std::vector<BatchNormStats> stats);

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  double batchnorm_momentum() const { return momentum_; }
  void set_batchnorm_momentum(double m) { momentum_ = m; }

  /// `dropout_seed` is only consulted in train mode for layers with dropout > 0.
  ForwardPass forward(const Matrix& x, std::uint64_t dropout_seed = 0) const;

  /// Forward pass output only.
  Matrix operator()(const Matrix& x, std::uint64_t dropout_seed = 0) const {
    return forward(x, dropout_seed).output;
  }

  Gradients backward(const ForwardPass& pass, const Matrix& upstream) const;

  /// Folds the batch statistics of a train-mode pass into the running averages.
  void absorb_batch_stats(const ForwardPass& pass);

  /// Clamps every parameter into [-bound, bound].
  void clip_params(double bound);
  double max_abs_param() const;

  /// Layer index owning parameter `i`.
  Index layer_of_param(Index i) const;

  std::uint64_t fingerprint() const;

  static constexpr double kBatchNormEps = 1e-5;

 private:
  struct Offsets {
    Index weight, bias, gamma, beta;
  };

  MlpSpec spec_;
  Vector params_;
  std::vector<Offsets> offsets_;
  std::vector<BatchNormStats> running_;
  Mode mode_ = Mode::train;
  double momentum_ = 0.1;
  std::uint64_t id_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace zslada::nn
