#include "zslada/data/synthetic.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace zslada::data {

using nlohmann::json;

namespace {

std::string map_name(AttributeMap m) { return m == AttributeMap::linear ? "linear" : "mlp"; }

std::string shift_name(ShiftKind k) {
  switch (k) {
    case ShiftKind::none: return "none";
    case ShiftKind::affine: return "affine";
    case ShiftKind::nonlinear: return "nonlinear";
  }
  return "none";
}

std::string direction_name(ShiftDirection d) { return d == ShiftDirection::random ? "random" : "nearest_pair"; }

Matrix gaussian_matrix(Index rows, Index cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.normal(0.0, scale));
  return m;
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(to_vec(m.row(r).transpose()));
  return rows;
}

template <typename T>
T field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::invalid_config, "world spec key '" + key + "' has the wrong type");
  }
}

}  // namespace

void SyntheticWorldSpec::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw Error(ErrorCode::invalid_config, "world spec key '" + key + "' " + why);
  };
  if (seen < 1) bad("seen", "must be >= 1");
  if (unseen < 1) bad("unseen", "must be >= 1");
  if (dim < 1) bad("dim", "must be >= 1");
  if (attr_dim < 1) bad("attr_dim", "must be >= 1");
  if (samples_per_class < 1) bad("samples_per_class", "must be >= 1");
  if (!(precision_lo > 0.0 && precision_hi >= precision_lo)) bad("precision_lo", "must satisfy 0 < lo <= hi");
  if (!(separation > 0.0)) bad("separation", "must be positive");
  if (shift.magnitude < 0.0) bad("shift", "magnitude must be non-negative");
  for (Index w : mlp_hidden)
    if (w < 1) bad("mlp_hidden", "widths must be positive");
}

void to_json(json& j, const SyntheticWorldSpec& s) {
  j = json{{"seen", s.seen},
           {"unseen", s.unseen},
           {"dim", s.dim},
           {"attr_dim", s.attr_dim},
           {"samples_per_class", s.samples_per_class},
           {"attribute_map", map_name(s.attribute_map)},
           {"mlp_hidden", s.mlp_hidden},
           {"precision_lo", s.precision_lo},
           {"precision_hi", s.precision_hi},
           {"separation", s.separation},
           {"max_feature_scale", s.max_feature_scale},
           {"shift",
            {{"kind", shift_name(s.shift.kind)},
             {"magnitude", s.shift.magnitude},
             {"linear_scale", s.shift.linear_scale},
             {"direction", direction_name(s.shift.direction)}}},
           {"seed", s.seed}};
}

SyntheticWorldSpec world_spec_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "world spec must be a JSON object");
  SyntheticWorldSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "seen") s.seen = field<int>(j, key);
    else if (key == "unseen") s.unseen = field<int>(j, key);
    else if (key == "dim") s.dim = field<Index>(j, key);
    else if (key == "attr_dim") s.attr_dim = field<Index>(j, key);
    else if (key == "samples_per_class") s.samples_per_class = field<Index>(j, key);
    else if (key == "attribute_map") {
      const auto name = field<std::string>(j, key);
      if (name == "linear") s.attribute_map = AttributeMap::linear;
      else if (name == "mlp") s.attribute_map = AttributeMap::mlp;
      else throw Error(ErrorCode::invalid_config, "world spec key 'attribute_map' must be linear or mlp");
    } else if (key == "mlp_hidden") s.mlp_hidden = field<std::vector<Index>>(j, key);
    else if (key == "precision_lo") s.precision_lo = field<double>(j, key);
    else if (key == "precision_hi") s.precision_hi = field<double>(j, key);
    else if (key == "separation") s.separation = field<double>(j, key);
    else if (key == "max_feature_scale") s.max_feature_scale = field<double>(j, key);
    else if (key == "seed") s.seed = field<std::uint64_t>(j, key);
    else if (key == "shift") {
      if (!value.is_object()) throw Error(ErrorCode::invalid_config, "world spec key 'shift' must be an object");
      for (const auto& [sk, sv] : value.items()) {
        const std::string full = "shift." + sk;
        if (sk == "kind") {
          const auto name = field<std::string>(value, sk);
          if (name == "none") s.shift.kind = ShiftKind::none;
          else if (name == "affine") s.shift.kind = ShiftKind::affine;
          else if (name == "nonlinear") s.shift.kind = ShiftKind::nonlinear;
          else throw Error(ErrorCode::invalid_config, "world spec key '" + full + "' must be none, affine or nonlinear");
        } else if (sk == "direction") {
          const auto name = field<std::string>(value, sk);
          if (name == "random") s.shift.direction = ShiftDirection::random;
          else if (name == "nearest_pair") s.shift.direction = ShiftDirection::nearest_pair;
          else throw Error(ErrorCode::invalid_config, "world spec key '" + full + "' must be random or nearest_pair");
        } else if (sk == "magnitude" || sk == "linear_scale") {
          if (!sv.is_number()) throw Error(ErrorCode::invalid_config, "world spec key '" + full + "' has the wrong type");
          (sk == "magnitude" ? s.shift.magnitude : s.shift.linear_scale) = sv.get<double>();
        } else {
          throw Error(ErrorCode::invalid_config, "unknown world spec key '" + full + "'");
        }
      }
    } else {
      throw Error(ErrorCode::invalid_config, "unknown world spec key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

const model::GaussianClassParams& GroundTruth::params_of(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c;
  throw Error(ErrorCode::unknown_class, "no ground truth for class " + std::to_string(class_id));
}

Vector GroundTruth::apply_shift(const Vector& x) const {
  switch (shift.kind) {
    case ShiftKind::none: return x;
    case ShiftKind::affine: return shift_linear * x + shift_offset;
    case ShiftKind::nonlinear: {
      const Vector v = (nonlinear_weight * x + nonlinear_bias).array().tanh().matrix();
      return x + static_cast<Real>(shift.magnitude / std::sqrt(static_cast<double>(x.size()))) * v;
    }
  }
  return x;
}

void to_json(json& j, const GroundTruth& t) {
  json classes = json::array();
  for (const auto& c : t.classes)
    classes.push_back({{"class_id", c.class_id}, {"mean", to_vec(c.mean)}, {"precision", to_vec(c.precision)}});
  json test_means = json::object();
  for (const auto& [id, m] : t.test_means) test_means[std::to_string(id)] = to_vec(m);
  j = json{{"classes", classes},
           {"mean_scale", t.mean_scale},
           {"shift",
            {{"kind", shift_name(t.shift.kind)},
             {"magnitude", t.shift.magnitude},
             {"linear_scale", t.shift.linear_scale},
             {"direction", direction_name(t.shift.direction)},
             {"A", matrix_json(t.shift_linear)},
             {"b", to_vec(t.shift_offset)}}},
           {"unseen_test_means", test_means}};
  if (t.shift.kind == ShiftKind::nonlinear) {
    j["shift"]["W"] = matrix_json(t.nonlinear_weight);
    j["shift"]["c"] = to_vec(t.nonlinear_bias);
  }
}

SyntheticWorld make_synthetic_world(const SyntheticWorldSpec& spec) {
  spec.validate();
  const int total = spec.seen + spec.unseen;
  const Index d = spec.dim;
  SyntheticWorld world;

  // Which ids are unseen.
  Rng split_rng = Rng::stream(spec.seed, "world-split");
  std::vector<int> ids(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[split_rng.below(i)]);
  std::vector<bool> seen_mask(static_cast<std::size_t>(total), true);
  for (int k = 0; k < spec.unseen; ++k) seen_mask[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])] = false;

  auto& table = world.attributes;
  Rng attr_rng = Rng::stream(spec.seed, "world-attributes");
  table.attributes.resize(total, spec.attr_dim);
  for (Index i = 0; i < table.attributes.size(); ++i)
    table.attributes.data()[i] = static_cast<Real>(attr_rng.uniform(-1.0, 1.0));
  for (int c = 0; c < total; ++c) {
    table.class_ids.push_back(c);
    table.seen_mask.push_back(seen_mask[static_cast<std::size_t>(c)]);
  }

  // Raw attribute -> mean map.
  Rng map_rng = Rng::stream(spec.seed, "world-map");
  Matrix raw_means;
  if (spec.attribute_map == AttributeMap::linear) {
    const Matrix w = gaussian_matrix(d, spec.attr_dim, map_rng, 1.0 / std::sqrt(static_cast<double>(spec.attr_dim)));
    raw_means = table.attributes * w.transpose();
  } else {
    Matrix h = table.attributes;
    for (Index width : spec.mlp_hidden) {
      const Matrix w = gaussian_matrix(width, h.cols(), map_rng, std::sqrt(2.0 / static_cast<double>(h.cols())));
      h = (h * w.transpose()).array().tanh().matrix();
    }
    const Matrix w = gaussian_matrix(d, h.cols(), map_rng, 1.0 / std::sqrt(static_cast<double>(h.cols())));
    raw_means = h * w.transpose();
  }

  Rng prec_rng = Rng::stream(spec.seed, "world-precision");
  const Matrix v = gaussian_matrix(d, spec.attr_dim, prec_rng, 1.0);
  const Matrix prec_logits = table.attributes * v.transpose();
  Matrix precisions = prec_logits.unaryExpr([&](Real z) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(z)));
    return static_cast<Real>(spec.precision_lo + (spec.precision_hi - spec.precision_lo) * s);
  });

  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < total; ++a)
    for (int b = a + 1; b < total; ++b)
      min_dist = std::min(min_dist, static_cast<double>((raw_means.row(a) - raw_means.row(b)).norm()));
  if (total > 1 && !(min_dist > 1e-12))
    throw Error(ErrorCode::infeasible_separation, "two classes share a mean; increase dim or attr_dim");
  const double max_std = 1.0 / std::sqrt(static_cast<double>(precisions.minCoeff()));
  const double scale = total > 1 ? spec.separation * max_std / min_dist : 1.0;
  const Matrix means = static_cast<Real>(scale) * raw_means;
  if (static_cast<double>(means.cwiseAbs().maxCoeff()) > spec.max_feature_scale)
    throw Error(ErrorCode::infeasible_separation,
                "separating " + std::to_string(total) + " classes at " + std::to_string(spec.separation) +
                    " sigma needs mean coordinates beyond " + std::to_string(spec.max_feature_scale) +
                    "; try a larger dim");
  world.truth.mean_scale = scale;
  for (int c = 0; c < total; ++c)
    world.truth.classes.push_back({c, means.row(c).transpose(), precisions.row(c).transpose()});

  // Shift parameters.
  auto& truth = world.truth;
  truth.shift = spec.shift;
  truth.shift_linear = Matrix::Identity(d, d);
  truth.shift_offset = Vector::Zero(d);
  Rng shift_rng = Rng::stream(spec.seed, "world-shift");
  if (spec.shift.kind == ShiftKind::affine) {
    Vector dir(d);
    for (Index j = 0; j < d; ++j) dir[j] = static_cast<Real>(shift_rng.normal());
    if (spec.shift.direction == ShiftDirection::nearest_pair && spec.unseen >= 2) {
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < total; ++a)
        for (int b = a + 1; b < total; ++b) {
          if (seen_mask[static_cast<std::size_t>(a)] || seen_mask[static_cast<std::size_t>(b)]) continue;
          const Vector diff = (means.row(b) - means.row(a)).transpose();
          if (static_cast<double>(diff.norm()) < best) best = static_cast<double>(diff.norm()), dir = diff;
        }
    }
    truth.shift_offset = static_cast<Real>(spec.shift.magnitude) * dir.normalized();
    if (spec.shift.linear_scale != 0.0)
      truth.shift_linear += static_cast<Real>(spec.shift.linear_scale) *
                            gaussian_matrix(d, d, shift_rng, 1.0 / std::sqrt(static_cast<double>(d)));
  } else if (spec.shift.kind == ShiftKind::nonlinear) {
    const double typical = static_cast<double>(means.norm()) / std::sqrt(static_cast<double>(total * d)) + 1.0;
    truth.nonlinear_weight = gaussian_matrix(d, d, shift_rng, 1.0 / (typical * std::sqrt(static_cast<double>(d))));
    truth.nonlinear_bias = gaussian_matrix(d, 1, shift_rng, 1.0);
  }

  // Samples: classes in id order, rows grouped by class.
  auto& data = world.data;
  data.features.resize(static_cast<Index>(total) * spec.samples_per_class, d);
  data.labels.reserve(static_cast<std::size_t>(data.features.rows()));
  Rng sample_rng = Rng::stream(spec.seed, "world-samples");
  Index row = 0;
  for (int c = 0; c < total; ++c) {
    const auto& params = truth.classes[static_cast<std::size_t>(c)];
    const bool unseen = !seen_mask[static_cast<std::size_t>(c)];
    const Vector stddev = params.precision.cwiseInverse().cwiseSqrt();
    Vector sum = Vector::Zero(d);
    for (Index i = 0; i < spec.samples_per_class; ++i, ++row) {
      Vector x(d);
      for (Index j = 0; j < d; ++j) x[j] = params.mean[j] + stddev[j] * static_cast<Real>(sample_rng.normal());
      if (unseen) {
        x = truth.apply_shift(x);
        sum += x;
      }
      data.features.row(row) = x.transpose();
      data.labels.push_back(c);
      (unseen ? data.split.test_rows : data.split.train_rows).push_back(row);
    }
    if (unseen) {
      // Analytic for none/affine; sample mean for the nonlinear map.
      truth.test_means[c] = spec.shift.kind == ShiftKind::nonlinear
                                ? Vector(sum / static_cast<Real>(spec.samples_per_class))
                                : truth.apply_shift(params.mean);
    }
  }
  for (int c = 0; c < total; ++c) (seen_mask[static_cast<std::size_t>(c)] ? data.split.seen : data.split.unseen).push_back(c);
  data.provenance = "synthetic seed=" + std::to_string(spec.seed);
  data.validate();
  table.validate();
  return world;
}

void save_world(const std::filesystem::path& dir, const SyntheticWorld& world) {
  save_dataset(dir, DatasetBundle{world.data, world.attributes});
  std::ofstream out(dir / "truth.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write truth.json");
  out << json(world.truth).dump(2) << '\n';
}

}  // namespace zslada::data
