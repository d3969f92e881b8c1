#pragma once

#include "zslada/model/base_model.hpp"
#include "zslada/rng.hpp"

#include <cmath>
#include <vector>

namespace zslada::test {

// Uniform(-1, 1) attributes; ids 0.. with the first `seen` marked seen.
inline model::ClassAttributeTable toy_table(int seen, int unseen, Index attr_dim, std::uint64_t seed) {
  model::ClassAttributeTable t;
  Rng rng(seed);
  t.attributes.resize(seen + unseen, attr_dim);
  for (Index i = 0; i < t.attributes.size(); ++i) t.attributes.data()[i] = static_cast<Real>(rng.uniform(-1, 1));
  for (int c = 0; c < seen + unseen; ++c) {
    t.class_ids.push_back(c);
    t.seen_mask.push_back(c < seen);
  }
  return t;
}

// One-hot attributes and single linear layers, so the networks hand back
// exactly the class parameters we ask for.
inline model::BaseZslModel model_with(const std::vector<model::GaussianClassParams>& classes,
                                      const std::vector<bool>& seen, bool logdet = true) {
  const auto c = static_cast<Index>(classes.size());
  const Index d = classes.front().mean.size();
  model::ClassAttributeTable table;
  table.attributes = Matrix::Identity(c, c);
  for (const auto& p : classes) table.class_ids.push_back(p.class_id);
  table.seen_mask = seen;
  auto linear = [&](auto value_of) {
    nn::MlpNetwork net(nn::make_spec(c, {}, d, nn::Activation::identity, nn::Activation::identity, false, 0.0), 1);
    Vector theta = Vector::Zero(net.params().size());
    for (Index j = 0; j < d; ++j)
      for (Index k = 0; k < c; ++k) theta[j * c + k] = value_of(classes[static_cast<std::size_t>(k)], j);
    net.set_params(theta);
    return net;
  };
  auto mean_net = linear([](const model::GaussianClassParams& p, Index j) { return p.mean[j]; });
  auto prec_net = linear([](const model::GaussianClassParams& p, Index j) {
    const Real s = p.precision[j] - Real(0.5);
    return std::log(s / (1 - s));
  });
  return model::BaseZslModel(table, mean_net, prec_net, logdet);
}

inline model::GaussianClassParams params(int id, std::vector<double> mean, std::vector<double> prec) {
  model::GaussianClassParams p;
  p.class_id = id;
  p.mean.resize(static_cast<Index>(mean.size()));
  p.precision.resize(static_cast<Index>(prec.size()));
  for (std::size_t i = 0; i < mean.size(); ++i) p.mean[static_cast<Index>(i)] = static_cast<Real>(mean[i]);
  for (std::size_t i = 0; i < prec.size(); ++i) p.precision[static_cast<Index>(i)] = static_cast<Real>(prec[i]);
  return p;
}

}  // namespace zslada::test
