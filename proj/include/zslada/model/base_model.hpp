#pragma once

#include "zslada/common.hpp"
#include "zslada/data/dataset.hpp"
#include "zslada/model/attributes.hpp"
#include "zslada/model/gaussian.hpp"
#include "zslada/nn/mlp.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace zslada::model {

struct PretrainConfig {
  int max_epochs = 300;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double mean_weight_decay = 1e-4;
  double prec_weight_decay = 1e-3;
  double holdout_fraction = 0.1;
  int patience = 20;
  std::uint64_t seed = 100;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
/// Missing keys keep their current value; unknown keys throw invalid_config.
void update_from_json(const nlohmann::json& j, PretrainConfig& c);

/// Architecture + optimizer defaults for the two attribute networks.
struct ModelProfile {
  std::string name;
  std::vector<Index> mean_hidden;
  std::vector<Index> prec_hidden;
  nn::Activation hidden_activation = nn::Activation::relu;
  bool batchnorm = false;
  double dropout = 0.0;
  bool include_logdet = true;
  PretrainConfig pretrain;
};

/// "sun", "awa", "cub" (published widths) or "synth-small" (one 128-wide linear hidden layer).
ModelProfile profile_by_name(const std::string& name);
std::vector<std::string> profile_names();

enum class LabelSpace { all, seen, unseen };

/// Attribute-conditioned diagonal Gaussian classifier.
///
/// mean_net maps a_c to mu_c; prec_net maps a_c to raw scores that the
/// bounded head turns into the diagonal precision. Both networks are kept
/// in eval mode outside pretrain().
class BaseZslModel {
 public:
  BaseZslModel() = default;
  BaseZslModel(ClassAttributeTable table, Index feature_dim, const ModelProfile& profile, std::uint64_t seed);
  BaseZslModel(ClassAttributeTable table, nn::MlpNetwork mean_net, nn::MlpNetwork prec_net, bool include_logdet);

  const ClassAttributeTable& attributes() const { return table_; }
  const nn::MlpNetwork& mean_net() const { return mean_net_; }
  const nn::MlpNetwork& prec_net() const { return prec_net_; }
  nn::MlpNetwork& mutable_mean_net() { return mean_net_; }
  nn::MlpNetwork& mutable_prec_net() { return prec_net_; }

  Index feature_dim() const { return mean_net_.output_width(); }
  bool include_logdet() const { return include_logdet_; }
  void set_include_logdet(bool on) { include_logdet_ = on; }

  GaussianClassParams class_params(int class_id) const;
  std::vector<GaussianClassParams> class_params(const std::vector<int>& class_ids) const;

  std::vector<int> label_space(LabelSpace space) const;

  /// n x C matrix of gaussian_loglik for each row against each class in `params`.
  Matrix log_likelihoods(const Matrix& x, const std::vector<GaussianClassParams>& params) const;

  /// Argmax of the log-likelihood; ties go to the smallest class id.
  int predict(const Eigen::Ref<const Vector>& x, LabelSpace space = LabelSpace::all) const;
  std::vector<int> predict_rows(const Matrix& x, LabelSpace space = LabelSpace::all) const;

  /// n i.i.d. draws from N(mu_c, diag(1/p_c)).
  Matrix sample_class(int class_id, Index n, std::uint64_t seed) const;

  /// Hash of both networks' parameters and running statistics.
  std::uint64_t fingerprint() const;

 private:
  ClassAttributeTable table_;
  nn::MlpNetwork mean_net_;
  nn::MlpNetwork prec_net_;
  bool include_logdet_ = true;
};

/// Ties go to the smallest class id.
std::vector<int> argmax_classes(const Matrix& scores, const std::vector<int>& class_ids);

/// Draws from a diagonal Gaussian; shared by sampling and the adaptation stage.
Matrix sample_gaussian(const GaussianClassParams& params, Index n, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double train_ll = 0.0;
  double heldout_ll = 0.0;
};

struct PretrainResult {
  std::vector<EpochRecord> trace;
  int best_epoch = 0;
  double best_heldout_ll = 0.0;
  bool stopped_early = false;
};

struct LoglikObjective {
  double loglik = 0.0;  // mean over the batch rows
  Vector mean_grad;     // d loglik / d mean_net params
  Vector prec_grad;     // d loglik / d prec_net params
  nn::ForwardPass mean_pass;
  nn::ForwardPass prec_pass;
};

/// Mean log-likelihood of each row under its own class, with gradients for
/// both networks. The nets run in their current mode on the attribute rows
/// of `classes`; every label must be one of them.
LoglikObjective loglik_objective(const BaseZslModel& model, const std::vector<int>& classes, const Matrix& x,
                                 const std::vector<int>& labels, std::uint64_t dropout_seed = 0);

/// Maximizes the minibatch-averaged log-likelihood of each seen sample under
/// its own class with Adam, holding out a fraction of every class for early
/// stopping; the best held-out checkpoint is restored at the end.
PretrainResult pretrain(BaseZslModel& model, const data::FeatureDataset& seen_data, const PretrainConfig& config);

/// Mean log-likelihood of labeled rows under their own class (eval mode).
double mean_loglik(const BaseZslModel& model, const data::FeatureDataset& labeled);

struct PseudoLabels {
  std::vector<int> labels;
  bool has_truth = false;
  std::map<int, double> per_class_agreement;
  double mean_agreement = 0.0;
};

/// Unseen-restricted predictions for every row; agreement with ground truth
/// (mean over classes) when the dataset carries labels.
PseudoLabels pseudo_labels(const BaseZslModel& model, const data::FeatureDataset& test_data);

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& trace);

/// Directory with mean_net.bin, prec_net.bin and model.json.
void save_model(const std::filesystem::path& dir, const BaseZslModel& model, std::uint64_t seed);
/// Throws invalid_config when `expected_attributes` is given and its hash differs.
BaseZslModel load_model(const std::filesystem::path& dir, const ClassAttributeTable* expected_attributes = nullptr);

}  // namespace zslada::model
