#include "zslada/nn/mlp.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace zslada::nn {

namespace {

std::atomic<std::uint64_t> g_network_ids{1};
std::atomic<std::uint64_t> g_generations{1};

using ConstMatrixMap = Eigen::Map<const Matrix>;
using ConstVectorMap = Eigen::Map<const Vector>;

std::string layer_label(Index layer) { return "layer " + std::to_string(layer); }

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::log_softmax: return "log_softmax";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "log_softmax") return Activation::log_softmax;
  throw Error(ErrorCode::invalid_config, "unknown activation '" + name + "'");
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.width == b.width && a.activation == b.activation && a.leaky_slope == b.leaky_slope &&
         a.batchnorm == b.batchnorm && a.dropout == b.dropout;
}

Index MlpSpec::param_count() const {
  Index total = 0;
  Index in = input_width;
  for (const auto& layer : layers) {
    total += layer.width * in + layer.width;
    if (layer.batchnorm) total += 2 * layer.width;
    in = layer.width;
  }
  return total;
}

void MlpSpec::validate() const {
  if (input_width <= 0) throw Error(ErrorCode::invalid_config, "input width must be positive");
  if (layers.empty()) throw Error(ErrorCode::invalid_config, "network needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.width <= 0)
      throw Error(ErrorCode::invalid_config, layer_label(static_cast<Index>(i)) + " width must be positive");
    if (!(layer.dropout >= 0.0 && layer.dropout < 1.0))
      throw Error(ErrorCode::invalid_config,
                  layer_label(static_cast<Index>(i)) + " dropout must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const MlpSpec& spec) {
  j = nlohmann::json::object();
  j["input_width"] = spec.input_width;
  auto layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"width", l.width},
                      {"activation", to_string(l.activation)},
                      {"leaky_slope", l.leaky_slope},
                      {"batchnorm", l.batchnorm},
                      {"dropout", l.dropout}});
  }
  j["layers"] = std::move(layers);
}

void from_json(const nlohmann::json& j, MlpSpec& spec) {
  spec.input_width = j.at("input_width").get<Index>();
  spec.layers.clear();
  for (const auto& l : j.at("layers")) {
    LayerSpec layer;
    layer.width = l.at("width").get<Index>();
    layer.activation = activation_from_string(l.at("activation").get<std::string>());
    layer.leaky_slope = l.value("leaky_slope", 0.2);
    layer.batchnorm = l.value("batchnorm", false);
    layer.dropout = l.value("dropout", 0.0);
    spec.layers.push_back(layer);
  }
}

MlpSpec make_spec(Index input_width, const std::vector<Index>& hidden, Index output_width,
                  Activation hidden_act, Activation out_act, bool batchnorm, double dropout,
                  double leaky_slope) {
  MlpSpec spec;
  spec.input_width = input_width;
  for (Index w : hidden) {
    spec.layers.push_back(LayerSpec{w, hidden_act, leaky_slope, batchnorm, dropout});
  }
  spec.layers.push_back(LayerSpec{output_width, out_act, leaky_slope, false, 0.0});
  return spec;
}

MlpNetwork::MlpNetwork(MlpSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), id_(g_network_ids.fetch_add(1)), generation_(g_generations.fetch_add(1)) {
  spec_.validate();
  params_ = Vector::Zero(spec_.param_count());
  Rng rng = Rng::stream(init_seed, "mlp-init");
  Index offset = 0;
  Index in = spec_.input_width;
  for (const auto& layer : spec_.layers) {
    Offsets o{};
    o.weight = offset;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + layer.width));
    for (Index k = 0; k < layer.width * in; ++k) params_[offset + k] = static_cast<Real>(rng.uniform(-limit, limit));
    offset += layer.width * in;
    o.bias = offset;
    offset += layer.width;
    if (layer.batchnorm) {
      o.gamma = offset;
      params_.segment(offset, layer.width).setOnes();
      offset += layer.width;
      o.beta = offset;
      offset += layer.width;
    } else {
      o.gamma = o.beta = -1;
    }
    offsets_.push_back(o);
    BatchNormStats stats;
    if (layer.batchnorm) {
      stats.mean = Vector::Zero(layer.width);
      stats.var = Vector::Ones(layer.width);
    }
    running_.push_back(std::move(stats));
    in = layer.width;
  }
}

Vector& MlpNetwork::mutable_params() {
  generation_ = g_generations.fetch_add(1);
  return params_;
}

void MlpNetwork::set_params(const Vector& params) {
  if (params.size() != params_.size())
    throw Error(ErrorCode::dimension_mismatch, "parameter vector has " + std::to_string(params.size()) +
                                                   " entries, spec implies " + std::to_string(params_.size()));
  mutable_params() = params;
}

void MlpNetwork::set_running_stats(std::vector<BatchNormStats> stats) {
  if (stats.size() != running_.size())
    throw Error(ErrorCode::dimension_mismatch, "running stats layer count mismatch");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].mean.size() != running_[i].mean.size() || stats[i].var.size() != running_[i].var.size())
      throw Error(ErrorCode::dimension_mismatch, "running stats width mismatch at " + layer_label(static_cast<Index>(i)));
  }
  running_ = std::move(stats);
}

ForwardPass MlpNetwork::forward(const Matrix& x, std::uint64_t dropout_seed) const {
  if (x.cols() != spec_.input_width)
    throw Error(ErrorCode::dimension_mismatch, "layer 0 expects " + std::to_string(spec_.input_width) +
                                                   " input columns, got " + std::to_string(x.cols()));
  ForwardPass pass;
  pass.mode = mode_;
  pass.network_id = id_;
  pass.generation = generation_;
  pass.layers.resize(spec_.layers.size());

  const Index n = x.rows();
  Matrix current = x;
  Index in = spec_.input_width;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const auto& layer = spec_.layers[li];
    const auto& o = offsets_[li];
    auto& cache = pass.layers[li];
    cache.input = std::move(current);

    const ConstMatrixMap weight(params_.data() + o.weight, layer.width, in);
    const ConstVectorMap bias(params_.data() + o.bias, layer.width);
    Matrix z = cache.input * weight.transpose();
    z.rowwise() += bias.transpose();

    if (layer.batchnorm) {
      const ConstVectorMap gamma(params_.data() + o.gamma, layer.width);
      const ConstVectorMap beta(params_.data() + o.beta, layer.width);
      Vector mean, var;
      if (mode_ == Mode::train) {
        if (n == 0) throw Error(ErrorCode::empty_batch, "batchnorm in train mode needs rows at " + layer_label(static_cast<Index>(li)));
        mean = z.colwise().mean().transpose();
        var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
      } else {
        mean = running_[li].mean;
        var = running_[li].var;
      }
      cache.batch_mean = mean;
      cache.batch_var = var;
      cache.inv_std = (var.array() + static_cast<Real>(kBatchNormEps)).rsqrt().matrix();
      cache.xhat = ((z.rowwise() - mean.transpose()).array().rowwise() * cache.inv_std.transpose().array()).matrix();
      z = (cache.xhat.array().rowwise() * gamma.transpose().array()).matrix();
      z.rowwise() += beta.transpose();
    }

    Matrix a;
    switch (layer.activation) {
      case Activation::identity:
        a = std::move(z);
        break;
      case Activation::relu:
        a = z.cwiseMax(Real(0));
        break;
      case Activation::leaky_relu: {
        const Real slope = static_cast<Real>(layer.leaky_slope);
        a = z.unaryExpr([slope](Real v) { return v > 0 ? v : slope * v; });
        break;
      }
      case Activation::sigmoid:
        a = z.unaryExpr([](Real v) {
          return v >= 0 ? Real(1) / (Real(1) + std::exp(-v)) : std::exp(v) / (Real(1) + std::exp(v));
        });
        break;
      case Activation::log_softmax: {
        a.resize(z.rows(), z.cols());
        for (Index r = 0; r < z.rows(); ++r) {
          const Real m = z.row(r).maxCoeff();
          const Real lse = m + std::log((z.row(r).array() - m).exp().sum());
          a.row(r) = z.row(r).array() - lse;
        }
        break;
      }
    }
    cache.activated = a;

    if (mode_ == Mode::train && layer.dropout > 0.0) {
      Rng rng = Rng::stream(dropout_seed, "dropout").split(layer_label(static_cast<Index>(li)));
      const Real keep_scale = static_cast<Real>(1.0 / (1.0 - layer.dropout));
      cache.mask.resize(a.rows(), a.cols());
      for (Index r = 0; r < a.rows(); ++r)
        for (Index c = 0; c < a.cols(); ++c) cache.mask(r, c) = rng.uniform() < layer.dropout ? Real(0) : keep_scale;
      a = a.cwiseProduct(cache.mask);
    }
    current = std::move(a);
    in = layer.width;
  }
  pass.output = std::move(current);
  return pass;
}

Gradients MlpNetwork::backward(const ForwardPass& pass, const Matrix& upstream) const {
  if (pass.network_id != id_ || pass.generation != generation_ || pass.layers.size() != spec_.layers.size())
    throw Error(ErrorCode::stale_cache, "forward pass does not match current network parameters");
  if (pass.mode != mode_)
    throw Error(ErrorCode::stale_cache, "forward pass was recorded in a different mode");
  if (upstream.rows() != pass.output.rows() || upstream.cols() != pass.output.cols())
    throw Error(ErrorCode::dimension_mismatch,
                "upstream gradient at " + layer_label(static_cast<Index>(spec_.layers.size()) - 1) + " is " +
                    std::to_string(upstream.rows()) + "x" + std::to_string(upstream.cols()) + ", expected " +
                    std::to_string(pass.output.rows()) + "x" + std::to_string(pass.output.cols()));

  Gradients grads;
  grads.params = Vector::Zero(params_.size());
  Matrix g = upstream;
  for (Index li = static_cast<Index>(spec_.layers.size()) - 1; li >= 0; --li) {
    const auto& layer = spec_.layers[static_cast<std::size_t>(li)];
    const auto& o = offsets_[static_cast<std::size_t>(li)];
    const auto& cache = pass.layers[static_cast<std::size_t>(li)];
    const Index in = cache.input.cols();
    const Index n = cache.input.rows();

    if (cache.mask.size() > 0) g = g.cwiseProduct(cache.mask);

    switch (layer.activation) {
      case Activation::identity:
        break;
      case Activation::relu:
        g = (cache.activated.array() > 0).select(g, Real(0));
        break;
      case Activation::leaky_relu: {
        const Real slope = static_cast<Real>(layer.leaky_slope);
        g = (cache.activated.array() > 0).select(g, slope * g);
        break;
      }
      case Activation::sigmoid:
        g = g.cwiseProduct((cache.activated.array() * (1 - cache.activated.array())).matrix());
        break;
      case Activation::log_softmax: {
        const Matrix softmax = cache.activated.array().exp().matrix();
        const Vector row_sums = g.rowwise().sum();
        g = g - (softmax.array().colwise() * row_sums.array()).matrix();
        break;
      }
    }

    if (layer.batchnorm) {
      const ConstVectorMap gamma(params_.data() + o.gamma, layer.width);
      grads.params.segment(o.gamma, layer.width) = (g.cwiseProduct(cache.xhat)).colwise().sum().transpose();
      grads.params.segment(o.beta, layer.width) = g.colwise().sum().transpose();
      Matrix dxhat = (g.array().rowwise() * gamma.transpose().array()).matrix();
      if (pass.mode == Mode::train) {
        const RowVector sum_dxhat = dxhat.colwise().sum();
        const RowVector sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
        const Real inv_n = Real(1) / static_cast<Real>(n);
        Matrix centered = (static_cast<Real>(n) * dxhat).rowwise() - sum_dxhat;
        centered -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        g = ((centered.array().rowwise() * cache.inv_std.transpose().array()) * inv_n).matrix();
      } else {
        g = (dxhat.array().rowwise() * cache.inv_std.transpose().array()).matrix();
      }
    }

    Eigen::Map<Matrix> dweight(grads.params.data() + o.weight, layer.width, in);
    dweight.noalias() = g.transpose() * cache.input;
    grads.params.segment(o.bias, layer.width) = g.colwise().sum().transpose();
    const ConstMatrixMap weight(params_.data() + o.weight, layer.width, in);
    g = g * weight;
  }
  grads.input = std::move(g);
  return grads;
}

void MlpNetwork::absorb_batch_stats(const ForwardPass& pass) {
  if (pass.mode != Mode::train) return;
  if (pass.network_id != id_ || pass.layers.size() != spec_.layers.size())
    throw Error(ErrorCode::stale_cache, "forward pass belongs to a different network");
  const Real m = static_cast<Real>(momentum_);
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    if (!spec_.layers[li].batchnorm) continue;
    const auto& cache = pass.layers[li];
    const Index n = cache.input.rows();
    // running variance tracks the unbiased estimate
    const Real unbias = n > 1 ? static_cast<Real>(n) / static_cast<Real>(n - 1) : Real(1);
    running_[li].mean = (1 - m) * running_[li].mean + m * cache.batch_mean;
    running_[li].var = (1 - m) * running_[li].var + m * unbias * cache.batch_var;
  }
}

void MlpNetwork::clip_params(double bound) {
  const Real b = static_cast<Real>(bound);
  auto& p = mutable_params();
  p = p.cwiseMax(-b).cwiseMin(b);
}

double MlpNetwork::max_abs_param() const {
  return params_.size() == 0 ? 0.0 : static_cast<double>(params_.cwiseAbs().maxCoeff());
}

Index MlpNetwork::layer_of_param(Index i) const {
  for (std::size_t li = offsets_.size(); li-- > 0;) {
    if (i >= offsets_[li].weight) return static_cast<Index>(li);
  }
  return 0;
}

std::uint64_t MlpNetwork::fingerprint() const {
  std::uint64_t h = fnv1a(params_.data(), static_cast<std::size_t>(params_.size()) * sizeof(Real));
  for (const auto& s : running_) {
    h = fnv1a(s.mean.data(), static_cast<std::size_t>(s.mean.size()) * sizeof(Real), h);
    h = fnv1a(s.var.data(), static_cast<std::size_t>(s.var.size()) * sizeof(Real), h);
  }
  return h;
}

}  // namespace zslada::nn
