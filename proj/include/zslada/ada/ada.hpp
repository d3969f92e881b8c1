#pragma once

#include "zslada/common.hpp"
#include "zslada/data/dataset.hpp"
#include "zslada/model/base_model.hpp"
#include "zslada/nn/mlp.hpp"
#include "zslada/nn/optimizer.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zslada::ada {

enum class Variant { full, vanilla_ada, cyclegan_wo, std_da };
enum class Phase { warmup, recovery };
/// cross_domain: |G_S(G_T(y)) - x| + |G_T(G_S(x)) - y| as printed;
/// within_domain: |G_S(G_T(y)) - y| + |G_T(G_S(x)) - x|.
enum class CycleForm { cross_domain, within_domain };
enum class TriggerKind { accuracy_crossover, fixed_fraction };

std::string to_string(Variant v);
std::string to_string(Phase p);
/// Accepts "std-da" and "std_da" spellings.
Variant variant_from_string(const std::string& name);

struct RecoveryTrigger {
  TriggerKind kind = TriggerKind::accuracy_crossover;
  /// Switch point for fixed_fraction, and the fallback for accuracy_crossover.
  double fraction = 0.5;
  int check_every = 200;
  /// Generated rows per class for the crossover check.
  Index samples_per_class = 256;
};

struct NetworkPreset {
  std::vector<Index> generator_hidden = {1200, 1200};
  std::vector<Index> critic_hidden = {1600};
  std::vector<Index> classifier_hidden;
  double leaky_slope = 0.2;
  bool generator_batchnorm = true;
  bool critic_batchnorm = true;
  double generator_dropout = 0.1;
  /// G(v) = x + net(v) instead of net(v).
  bool generator_residual = false;
};

struct AdaConfig {
  double chi = 10.0;
  double beta = 5.0;
  double xi = 1e-4;
  int n_d = 5;
  double clip_c = 0.01;
  int n_steps = 10000;
  Index batch_size = 64;
  RecoveryTrigger recovery_trigger;
  std::uint64_t seed = 100;
  double learning_rate = 1e-5;
  double rmsprop_decay = 0.99;
  NetworkPreset nets;
  CycleForm cycle_form = CycleForm::cross_domain;
  /// Negative cross-entropy on permuted labels, weight 0.1 inside the classifier term.
  bool mismatch_term = false;
  /// Re-derive target labels from C_T every this many recovery iterations; 0 keeps them frozen.
  int relabel_every = 0;
  Variant variant = Variant::full;
  std::size_t history_size = 1000;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdaConfig& c);
/// Missing keys keep their value; unknown or mistyped keys throw invalid_config naming the key.
void update_from_json(const nlohmann::json& j, AdaConfig& c);

/// "benchmark" (1200-1200 generators, 1600 critic, lr 1e-5) or "synth-small".
AdaConfig ada_preset(const std::string& name);

/// x followed by the one-hot code of c among U classes.
Vector augment_label(const Eigen::Ref<const Vector>& x, int c, int num_classes);
Matrix augment_labels(const Matrix& x, const std::vector<int>& labels, int num_classes);

enum class BatchOrigin { source, target };

/// Labels are unseen-class indices 0..U-1. Target labels are pseudo-labels.
struct LabeledBatch {
  Matrix features;
  std::vector<int> labels;
  BatchOrigin origin = BatchOrigin::source;
};

/// Row i of source and row i of target share a class.
struct BatchPair {
  LabeledBatch source;  // y: drawn from the base model's class-conditionals
  LabeledBatch target;  // x: real test rows
};

/// Networks taking part in a loss evaluation; absent ones switch their terms off.
struct NetSet {
  const nn::MlpNetwork* g_t = nullptr;
  const nn::MlpNetwork* g_s = nullptr;
  const nn::MlpNetwork* d_t = nullptr;
  const nn::MlpNetwork* d_s = nullptr;
  const nn::MlpNetwork* c_t = nullptr;
  const nn::MlpNetwork* c_s = nullptr;
};

/// Unweighted loss terms.
struct LossTerms {
  double gen_t = 0.0;     // beta |G_T(x) - x| - D_T(G_T(y))
  double gen_s = 0.0;     // beta |G_S(y) - y| - D_S(G_S(x))
  double critic_t = 0.0;  // D_T(G_T(y)) - D_T(x)
  double critic_s = 0.0;  // D_S(G_S(x)) - D_S(y)
  double cycle = 0.0;
  double clf_t = 0.0;
  double clf_s = 0.0;

  double adv_t() const { return gen_t + critic_t; }
  double adv_s() const { return gen_s + critic_s; }
  bool finite() const;
};

struct LossWeights {
  double gen_t = 0.0, gen_s = 0.0, critic_t = 0.0, critic_s = 0.0, cycle = 0.0, clf_t = 0.0, clf_s = 0.0;

  /// The overall objective: adv_T + adv_S + chi cycle + xi clf_T + xi clf_S.
  static LossWeights total(const AdaConfig& c);
  /// What the generators minimize.
  static LossWeights generator_step(const AdaConfig& c);
  /// What the critics and classifiers minimize.
  static LossWeights critic_step(const AdaConfig& c);

  double combine(const LossTerms& t) const;
};

struct LossOptions {
  double beta = 5.0;
  CycleForm cycle_form = CycleForm::cross_domain;
  Phase phase = Phase::warmup;
  bool residual = false;
  bool mismatch_term = false;
  int num_classes = 1;
  std::uint64_t dropout_seed = 0;
  /// Which parameter gradients evaluate_losses fills in.
  bool grad_generators = true;
  bool grad_critics = true;
  bool grad_classifiers = true;
};

struct NetGradients {
  Vector g_t, g_s, d_t, d_s, c_t, c_s;  // empty for absent networks
};

struct LossEvaluation {
  LossTerms terms;
  NetGradients grads;  // filled when weights are given
  std::optional<nn::ForwardPass> g_t_pass;  // G_T on source rows
  std::optional<nn::ForwardPass> g_s_pass;  // G_S on target rows
  std::optional<nn::ForwardPass> d_t_pass;  // D_T on target rows
  std::optional<nn::ForwardPass> d_s_pass;  // D_S on source rows
  std::optional<nn::ForwardPass> c_t_pass;  // C_T on target rows
  std::optional<nn::ForwardPass> c_s_pass;  // C_S on source rows
};

/// Every term the networks in `nets` support, with gradients of
/// `weights->combine(terms)` for every present network when weights is set.
/// Networks run in their current mode.
LossEvaluation evaluate_losses(const NetSet& nets, const BatchPair& batches, const LossOptions& options,
                               const LossWeights* weights = nullptr);

double generator_loss_t(const nn::MlpNetwork& g_t, const nn::MlpNetwork& d_t, const BatchPair& b, double beta,
                        bool residual = false);
double generator_loss_s(const nn::MlpNetwork& g_s, const nn::MlpNetwork& d_s, const BatchPair& b, double beta,
                        bool residual = false);
double critic_loss_t(const nn::MlpNetwork& d_t, const nn::MlpNetwork& g_t, const BatchPair& b, bool residual = false);
double critic_loss_s(const nn::MlpNetwork& d_s, const nn::MlpNetwork& g_s, const BatchPair& b, bool residual = false);
double cycle_loss(const nn::MlpNetwork& g_t, const nn::MlpNetwork& g_s, const BatchPair& b,
                  CycleForm form = CycleForm::cross_domain, bool residual = false);
/// `g_t` may be null, in which case the source rows reach C_T untransformed.
double classifier_loss_t(const nn::MlpNetwork& c_t, const nn::MlpNetwork* g_t, const BatchPair& b, Phase phase,
                         bool residual = false);
double classifier_loss_s(const nn::MlpNetwork& c_s, const nn::MlpNetwork* g_s, const BatchPair& b, Phase phase,
                         bool residual = false);

struct TotalLoss {
  double total = 0.0;
  LossTerms terms;
};
TotalLoss total_loss(const NetSet& nets, const BatchPair& b, const AdaConfig& config, Phase phase);

/// Single linear layer [I 0]: maps (x, one-hot) to x.
nn::MlpNetwork identity_generator(Index dim, int num_classes);

struct IterationLog {
  int iter = 0;
  LossTerms terms;
  Phase phase = Phase::warmup;
};

class AdaState {
 public:
  AdaConfig config;
  std::vector<int> unseen_ids;  // index k <-> class id
  Index feature_dim = 0;
  std::uint64_t base_fingerprint = 0;

  std::optional<nn::MlpNetwork> g_t, g_s, d_t, d_s, c_t, c_s;
  std::optional<nn::Optimizer> opt_g_t, opt_g_s, opt_d_t, opt_d_s, opt_c_t, opt_c_s;

  Phase phase = Phase::warmup;
  int iteration = 0;
  int switch_iteration = -1;
  bool classifier_trained = false;
  std::deque<IterationLog> history;

  /// Fresh networks for `config.variant`, seeded from config.seed.
  static AdaState initialize(const AdaConfig& config, Index feature_dim, std::vector<int> unseen_ids,
                             std::uint64_t base_fingerprint);

  int num_classes() const { return static_cast<int>(unseen_ids.size()); }
  int index_of(int class_id) const;
  NetSet nets() const;
  void set_mode(nn::Mode mode);
  /// G_T in eval mode on label-augmented rows (identity when there is no G_T).
  Matrix transform_source(const Matrix& y, const std::vector<int>& labels) const;
  /// argmax C_T over unseen indices, eval mode; throws untrained_classifier.
  std::vector<int> classify(const Matrix& x) const;
};

struct AdaptResult {
  AdaState state;
  std::vector<IterationLog> log;
  model::PseudoLabels pseudo;  // frozen labels used for adaptation, as class ids
  double agreement_estimate = 0.0;
};

/// Alternating optimization over unseen-class data. The base model is only read.
AdaptResult adapt(const model::BaseZslModel& base, const data::FeatureDataset& test_data, const AdaConfig& config);

/// Mean of G_T over n label-augmented draws from each unseen class-conditional.
/// Precisions are the base model's, unchanged.
std::vector<model::GaussianClassParams> map_prototypes(const AdaState& state, const model::BaseZslModel& base,
                                                       Index n_samples, std::uint64_t seed);

void write_iteration_log_csv(const std::filesystem::path& path, const std::vector<IterationLog>& log);

/// Directory with one nn checkpoint per present network plus ada.json.
void save_state(const std::filesystem::path& dir, const AdaState& state);
AdaState load_state(const std::filesystem::path& dir);

}  // namespace zslada::ada
