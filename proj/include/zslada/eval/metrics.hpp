#pragma once

#include "zslada/ada/ada.hpp"
#include "zslada/common.hpp"
#include "zslada/data/dataset.hpp"
#include "zslada/model/base_model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace zslada::eval {

enum class MetricKind { inductive, m1, m2 };

std::string to_string(MetricKind k);
MetricKind metric_from_string(const std::string& name);

struct EvalReport {
  MetricKind kind = MetricKind::inductive;
  std::map<int, double> per_class_acc;  // classes with n > 0
  std::map<int, Index> n_per_class;
  std::map<int, Index> correct_per_class;
  /// Classes of the evaluated label space without test rows; kept out of the mean.
  std::vector<int> excluded;
  double mean_per_class_acc = 0.0;
  double overall_acc = 0.0;
};

/// Per-class accuracy, then the unweighted mean across classes.
/// When `label_space` is given every truth label must belong to it, and its
/// classes without rows are listed in `excluded`.
EvalReport per_class_top1(const std::vector<int>& predictions, const std::vector<int>& truth,
                          MetricKind kind = MetricKind::inductive, const std::vector<int>* label_space = nullptr);

/// Base model predictions restricted to `space` (unseen by default).
EvalReport inductive_accuracy(const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                              model::LabelSpace space = model::LabelSpace::unseen);

/// argmax C_T over unseen classes.
EvalReport m1_accuracy(const ada::AdaState& state, const data::FeatureDataset& test_data);

/// Gaussian nearest prototype with the mapped means and the base precisions.
EvalReport m2_accuracy(const ada::AdaState& state, const model::BaseZslModel& base,
                       const data::FeatureDataset& test_data, Index n_samples, std::uint64_t seed);

/// Prediction for every row under the given class-conditionals, ties to the smallest id.
std::vector<int> gaussian_predict(const model::BaseZslModel& base, const Matrix& x,
                                  const std::vector<model::GaussianClassParams>& params);

/// class_id,n,correct,acc rows in class order, excluded classes with acc NA, then a MEAN row.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_csv(const std::filesystem::path& path, MetricKind kind = MetricKind::inductive);

struct AblationRow {
  ada::Variant variant = ada::Variant::full;
  std::optional<double> m1;  // empty = NA
  std::optional<double> m2;
  std::uint64_t base_fingerprint = 0;
};

/// Row labels as printed in the ablation table.
std::string display_name(ada::Variant v);

/// Adapts one variant against the shared base model and scores the metrics it supports.
AblationRow ablation_run(ada::Variant variant, const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                         ada::AdaConfig config, Index n_samples, std::uint64_t seed);

std::vector<AblationRow> ablation_table(const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                                        const ada::AdaConfig& config, Index n_samples, std::uint64_t seed,
                                        const std::vector<ada::Variant>& variants = {
                                            ada::Variant::std_da, ada::Variant::vanilla_ada,
                                            ada::Variant::cyclegan_wo, ada::Variant::full});

/// method,variant,M1,M2 with NA for metrics a variant does not have.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path);

}  // namespace zslada::eval
