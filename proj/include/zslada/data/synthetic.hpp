#pragma once

#include "zslada/common.hpp"
#include "zslada/data/dataset.hpp"
#include "zslada/model/attributes.hpp"
#include "zslada/model/gaussian.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace zslada::data {

enum class AttributeMap { linear, mlp };
enum class ShiftKind { none, affine, nonlinear };
/// Direction of the affine translation: uniformly random, or from the first
/// to the second mean of the closest pair of unseen classes.
enum class ShiftDirection { random, nearest_pair };

struct ShiftSpec {
  ShiftKind kind = ShiftKind::none;
  /// Norm of the translation (affine) or the displacement cap (nonlinear).
  double magnitude = 0.0;
  /// Affine only: A = I + linear_scale * R with R a random Gaussian matrix / sqrt(d).
  double linear_scale = 0.0;
  ShiftDirection direction = ShiftDirection::random;
};

struct SyntheticWorldSpec {
  int seen = 8;
  int unseen = 4;
  Index dim = 16;
  Index attr_dim = 3;
  Index samples_per_class = 500;
  AttributeMap attribute_map = AttributeMap::linear;
  std::vector<Index> mlp_hidden = {16};
  double precision_lo = 0.7;
  double precision_hi = 1.3;
  /// Minimum distance between class means, in units of the largest standard deviation.
  double separation = 6.0;
  /// Largest admissible |mean coordinate| after scaling.
  double max_feature_scale = 100.0;
  ShiftSpec shift;
  std::uint64_t seed = 100;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticWorldSpec& s);
/// Unknown keys and wrong types throw invalid_config naming the key.
SyntheticWorldSpec world_spec_from_json(const nlohmann::json& j);

struct GroundTruth {
  std::vector<model::GaussianClassParams> classes;  // true class-conditionals, table order
  ShiftSpec shift;
  Matrix shift_linear;                 // A (identity when unused)
  Vector shift_offset;                 // b
  Matrix nonlinear_weight;             // W for x + m * tanh(W x + c) / sqrt(d)
  Vector nonlinear_bias;               // c
  std::map<int, Vector> test_means;    // expected mean of each unseen class's test rows
  double mean_scale = 1.0;

  const model::GaussianClassParams& params_of(int class_id) const;
  Vector apply_shift(const Vector& x) const;
};

void to_json(nlohmann::json& j, const GroundTruth& t);

struct SyntheticWorld {
  FeatureDataset data;
  model::ClassAttributeTable attributes;
  GroundTruth truth;
};

/// Seen classes supply the train rows, unseen classes the test rows; the
/// shift touches unseen test rows only. Entirely determined by spec.seed.
SyntheticWorld make_synthetic_world(const SyntheticWorldSpec& spec);

/// Writes features.csv, attributes.csv, split.json and truth.json.
void save_world(const std::filesystem::path& dir, const SyntheticWorld& world);

}  // namespace zslada::data
