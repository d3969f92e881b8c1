#pragma once

#include "zslada/common.hpp"
#include "zslada/model/attributes.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zslada::data {

struct SplitSpec {
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<Index> train_rows;
  std::vector<Index> test_rows;

  /// split_overlap when a class is both seen and unseen.
  void validate() const;
  bool is_seen(int class_id) const;
  bool is_unseen(int class_id) const;
};

inline constexpr int kUnlabeled = -1;

struct FeatureDataset {
  Matrix features;          // N x d
  std::vector<int> labels;  // N entries, kUnlabeled when unknown; may be empty
  SplitSpec split;
  std::string provenance;

  Index rows() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool has_labels() const;

  /// Rows in the given order; the split is carried over with row lists cleared.
  FeatureDataset subset(const std::vector<Index>& rows) const;
  FeatureDataset train() const { return subset(split.train_rows); }
  FeatureDataset test() const { return subset(split.test_rows); }
  FeatureDataset without_labels() const;

  /// Throws on label/feature count mismatch, labels outside the split's
  /// class universe, and row indices out of range.
  void validate() const;
};

/// A dataset directory: features + attributes + split.
struct DatasetBundle {
  FeatureDataset data;
  model::ClassAttributeTable attributes;
};

/// Reads features.csv (or features.bin), attributes.csv and split.json.
DatasetBundle load_dataset(const std::filesystem::path& dir);

/// Writes the canonical files. `binary_features` switches features.csv for features.bin.
void save_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle, bool binary_features = false);

/// Format chosen by extension: ".bin" is the little-endian binary twin, anything else CSV.
void save_features(const std::filesystem::path& path, const Matrix& features, const std::vector<int>& labels);
void load_features(const std::filesystem::path& path, Matrix& features, std::vector<int>& labels);

void save_attributes(const std::filesystem::path& path, const model::ClassAttributeTable& table);
/// Seen flags are filled from `split` when given.
model::ClassAttributeTable load_attributes(const std::filesystem::path& path, const SplitSpec* split = nullptr);

void save_split(const std::filesystem::path& path, const SplitSpec& split);
SplitSpec load_split(const std::filesystem::path& path);

}  // namespace zslada::data
