#include "zslada/model/base_model.hpp"
#include "zslada/data/csv.hpp"
#include "zslada/nn/checkpoint.hpp"
#include "zslada/nn/optimizer.hpp"
#include "zslada/parallel.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace zslada::model {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const PretrainConfig& c) {
  j = json{{"max_epochs", c.max_epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"epsilon", c.epsilon},
           {"mean_weight_decay", c.mean_weight_decay},
           {"prec_weight_decay", c.prec_weight_decay},
           {"holdout_fraction", c.holdout_fraction},
           {"patience", c.patience},
           {"seed", c.seed}};
}

void update_from_json(const json& j, PretrainConfig& c) {
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "max_epochs") c.max_epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<Index>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "mean_weight_decay") c.mean_weight_decay = value.get<double>();
      else if (key == "prec_weight_decay") c.prec_weight_decay = value.get<double>();
      else if (key == "holdout_fraction") c.holdout_fraction = value.get<double>();
      else if (key == "patience") c.patience = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw Error(ErrorCode::invalid_config, "unknown pretrain key '" + key + "'");
    } catch (const json::exception&) {
      throw Error(ErrorCode::invalid_config, "pretrain key '" + key + "' has the wrong type");
    }
  }
  if (c.batch_size < 1) throw Error(ErrorCode::invalid_config, "pretrain key 'batch_size' must be >= 1");
  if (c.max_epochs < 1) throw Error(ErrorCode::invalid_config, "pretrain key 'max_epochs' must be >= 1");
  if (!(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0))
    throw Error(ErrorCode::invalid_config, "pretrain key 'holdout_fraction' must lie in [0, 1)");
}

ModelProfile profile_by_name(const std::string& name) {
  ModelProfile p;
  p.name = name;
  if (name == "synth-small") {
    p.mean_hidden = {128};
    p.prec_hidden = {128};
    // Linear hidden layer: unseen means are extrapolations from 8 or so points.
    p.hidden_activation = nn::Activation::identity;
    p.pretrain.learning_rate = 1e-3;
    p.pretrain.mean_weight_decay = 1e-4;
    p.pretrain.prec_weight_decay = 1e-3;
    p.pretrain.batch_size = 256;
    p.pretrain.max_epochs = 600;
  } else if (name == "sun" || name == "awa") {
    // Hidden 1800 then the 2048-wide feature layer.
    p.mean_hidden = {1800};
    p.prec_hidden = {1800};
    p.batchnorm = true;
    p.dropout = name == "awa" ? 0.1 : 0.0;
    p.pretrain.learning_rate = 1e-5;
    p.pretrain.mean_weight_decay = name == "awa" ? 1e3 : 1e-3;
    p.pretrain.prec_weight_decay = name == "awa" ? 1e4 : 1e-1;
  } else if (name == "cub") {
    p.mean_hidden = {1200, 1800};
    p.prec_hidden = {1200, 1800};
    p.batchnorm = true;
    p.dropout = 0.1;
    p.pretrain.learning_rate = 1e-5;
    p.pretrain.mean_weight_decay = 1e-2;
    p.pretrain.prec_weight_decay = 1e-1;
  } else {
    throw Error(ErrorCode::invalid_config, "unknown profile '" + name + "'");
  }
  return p;
}

std::vector<std::string> profile_names() { return {"sun", "awa", "cub", "synth-small"}; }

BaseZslModel::BaseZslModel(ClassAttributeTable table, Index feature_dim, const ModelProfile& profile,
                           std::uint64_t seed)
    : table_(std::move(table)), include_logdet_(profile.include_logdet) {
  table_.validate(false);
  if (feature_dim < 1) throw Error(ErrorCode::invalid_config, "feature dimension must be positive");
  const Index attr_dim = table_.attr_dim();
  mean_net_ = nn::MlpNetwork(nn::make_spec(attr_dim, profile.mean_hidden, feature_dim, profile.hidden_activation,
                                           nn::Activation::identity, profile.batchnorm, profile.dropout),
                             Rng::stream(seed, "mean-net").next_u64());
  prec_net_ = nn::MlpNetwork(nn::make_spec(attr_dim, profile.prec_hidden, feature_dim, profile.hidden_activation,
                                           nn::Activation::identity, profile.batchnorm, profile.dropout),
                             Rng::stream(seed, "prec-net").next_u64());
  mean_net_.set_mode(nn::Mode::eval);
  prec_net_.set_mode(nn::Mode::eval);
}

BaseZslModel::BaseZslModel(ClassAttributeTable table, nn::MlpNetwork mean_net, nn::MlpNetwork prec_net,
                           bool include_logdet)
    : table_(std::move(table)),
      mean_net_(std::move(mean_net)),
      prec_net_(std::move(prec_net)),
      include_logdet_(include_logdet) {
  table_.validate(false);
  if (mean_net_.input_width() != table_.attr_dim() || prec_net_.input_width() != table_.attr_dim())
    throw Error(ErrorCode::dimension_mismatch, "attribute networks must take " + std::to_string(table_.attr_dim()) +
                                                   " inputs");
  if (mean_net_.output_width() != prec_net_.output_width())
    throw Error(ErrorCode::dimension_mismatch, "mean and precision networks disagree on feature dimension");
  mean_net_.set_mode(nn::Mode::eval);
  prec_net_.set_mode(nn::Mode::eval);
}

GaussianClassParams BaseZslModel::class_params(int class_id) const { return class_params(std::vector<int>{class_id})[0]; }

std::vector<GaussianClassParams> BaseZslModel::class_params(const std::vector<int>& class_ids) const {
  const Matrix a = table_.rows_for(class_ids);
  const Matrix mu = mean_net_(a);
  const Matrix raw = prec_net_(a);
  std::vector<GaussianClassParams> out;
  out.reserve(class_ids.size());
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const auto r = static_cast<Index>(i);
    out.push_back({class_ids[i], mu.row(r).transpose(), bounded_precision(raw.row(r).transpose())});
  }
  return out;
}

std::vector<int> BaseZslModel::label_space(LabelSpace space) const {
  switch (space) {
    case LabelSpace::seen: return table_.seen_ids();
    case LabelSpace::unseen: return table_.unseen_ids();
    case LabelSpace::all: break;
  }
  return table_.class_ids;
}

Matrix BaseZslModel::log_likelihoods(const Matrix& x, const std::vector<GaussianClassParams>& params) const {
  if (x.cols() != feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "features have " + std::to_string(x.cols()) + " columns, model expects " +
                                                   std::to_string(feature_dim()));
  Matrix ll(x.rows(), static_cast<Index>(params.size()));
  parallel_rows(x.rows(), [&](Index begin, Index end) {
    for (Index r = begin; r < end; ++r) {
      const Vector row = x.row(r).transpose();
      for (std::size_t c = 0; c < params.size(); ++c)
        ll(r, static_cast<Index>(c)) = static_cast<Real>(gaussian_loglik(row, params[c], include_logdet_));
    }
  });
  return ll;
}

std::vector<int> argmax_classes(const Matrix& scores, const std::vector<int>& class_ids) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index r = 0; r < scores.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      const Real s = scores(r, c);
      const Real b = scores(r, best);
      const auto cid = class_ids[static_cast<std::size_t>(c)];
      const auto bid = class_ids[static_cast<std::size_t>(best)];
      if (s > b || (s == b && cid < bid)) best = c;
    }
    out[static_cast<std::size_t>(r)] = class_ids[static_cast<std::size_t>(best)];
  }
  return out;
}

int BaseZslModel::predict(const Eigen::Ref<const Vector>& x, LabelSpace space) const {
  return predict_rows(Matrix(x.transpose()), space)[0];
}

std::vector<int> BaseZslModel::predict_rows(const Matrix& x, LabelSpace space) const {
  const auto ids = label_space(space);
  if (ids.empty()) throw Error(ErrorCode::unknown_class, "label space is empty");
  return argmax_classes(log_likelihoods(x, class_params(ids)), ids);
}

Matrix sample_gaussian(const GaussianClassParams& params, Index n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::invalid_config, "sample count must be >= 1");
  Rng rng = Rng::stream(seed, "class-sample").split(std::to_string(params.class_id));
  const Vector stddev = params.precision.cwiseInverse().cwiseSqrt();
  Matrix out(n, params.dim());
  for (Index r = 0; r < n; ++r)
    for (Index j = 0; j < params.dim(); ++j)
      out(r, j) = params.mean[j] + stddev[j] * static_cast<Real>(rng.normal());
  return out;
}

Matrix BaseZslModel::sample_class(int class_id, Index n, std::uint64_t seed) const {
  return sample_gaussian(class_params(class_id), n, seed);
}

std::uint64_t BaseZslModel::fingerprint() const {
  const std::uint64_t a = mean_net_.fingerprint();
  const std::uint64_t b = prec_net_.fingerprint();
  std::uint64_t h = fnv1a(&a, sizeof(a));
  h = fnv1a(&b, sizeof(b), h);
  const int logdet = include_logdet_ ? 1 : 0;
  return fnv1a(&logdet, sizeof(logdet), h);
}

namespace {

struct SeenLayout {
  std::vector<int> classes;            // distinct seen classes, table order
  std::vector<Index> position_of_row;  // per dataset row, index into classes
};

SeenLayout seen_layout(const BaseZslModel& model, const data::FeatureDataset& seen_data) {
  if (!seen_data.has_labels()) throw Error(ErrorCode::invalid_config, "pretraining data must be fully labeled");
  if (seen_data.dim() != model.feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "seen data has " + std::to_string(seen_data.dim()) +
                                                   " features, model expects " + std::to_string(model.feature_dim()));
  const auto& table = model.attributes();
  std::vector<int> expected = seen_data.split.seen.empty() ? table.seen_ids() : seen_data.split.seen;
  std::map<int, Index> counts;
  for (int id : expected) {
    table.index_of(id);
    counts[id] = 0;
  }
  for (int l : seen_data.labels) {
    if (!counts.count(l))
      throw Error(ErrorCode::invalid_config, "pretraining row has label " + std::to_string(l) +
                                                 ", which is not a seen class");
    ++counts[l];
  }
  std::string empty;
  for (const auto& [id, n] : counts) {
    if (n == 0) empty += (empty.empty() ? "" : ", ") + std::to_string(id);
  }
  if (!empty.empty()) throw Error(ErrorCode::empty_class, "seen classes without samples: " + empty);

  SeenLayout layout;
  for (int id : table.class_ids)
    if (counts.count(id)) layout.classes.push_back(id);
  std::map<int, Index> pos;
  for (std::size_t i = 0; i < layout.classes.size(); ++i) pos[layout.classes[i]] = static_cast<Index>(i);
  for (int l : seen_data.labels) layout.position_of_row.push_back(pos[l]);
  return layout;
}

void shuffle(std::vector<Index>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

double mean_loglik(const BaseZslModel& model, const data::FeatureDataset& labeled) {
  if (labeled.rows() == 0) return 0.0;
  std::vector<int> ids;
  for (int l : labeled.labels)
    if (std::find(ids.begin(), ids.end(), l) == ids.end()) ids.push_back(l);
  const auto params = model.class_params(ids);
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < ids.size(); ++i) slot[ids[i]] = i;
  double total = 0.0;
  for (Index r = 0; r < labeled.rows(); ++r) {
    const Vector x = labeled.features.row(r).transpose();
    total += gaussian_loglik(x, params[slot[labeled.labels[static_cast<std::size_t>(r)]]], model.include_logdet());
  }
  return total / static_cast<double>(labeled.rows());
}

LoglikObjective loglik_objective(const BaseZslModel& model, const std::vector<int>& classes, const Matrix& x,
                                 const std::vector<int>& labels, std::uint64_t dropout_seed) {
  if (x.rows() == 0) throw Error(ErrorCode::empty_batch, "log-likelihood objective on an empty batch");
  if (static_cast<Index>(labels.size()) != x.rows())
    throw Error(ErrorCode::dimension_mismatch, std::to_string(labels.size()) + " labels for " +
                                                   std::to_string(x.rows()) + " rows");
  if (x.cols() != model.feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "batch has " + std::to_string(x.cols()) + " features, model expects " +
                                                   std::to_string(model.feature_dim()));
  std::map<int, Index> pos;
  for (std::size_t i = 0; i < classes.size(); ++i) pos[classes[i]] = static_cast<Index>(i);
  const Index num_classes = static_cast<Index>(classes.size());
  const Index d = model.feature_dim();
  const bool logdet = model.include_logdet();

  LoglikObjective out;
  const Matrix attrs = model.attributes().rows_for(classes);
  Rng seeds(dropout_seed);
  out.mean_pass = model.mean_net().forward(attrs, seeds.next_u64());
  out.prec_pass = model.prec_net().forward(attrs, seeds.next_u64());
  const Matrix& mu = out.mean_pass.output;
  const Matrix& raw = out.prec_pass.output;
  Matrix precision(num_classes, d);
  Matrix slope(num_classes, d);
  for (Index c = 0; c < num_classes; ++c) {
    precision.row(c) = bounded_precision(raw.row(c).transpose()).transpose();
    slope.row(c) = bounded_precision_slope(raw.row(c).transpose()).transpose();
  }
  const Matrix log_prec = precision.array().log().matrix();

  Matrix d_mu = Matrix::Zero(num_classes, d);
  Matrix d_prec = Matrix::Zero(num_classes, d);
  double total = 0.0;
  for (Index r = 0; r < x.rows(); ++r) {
    const auto it = pos.find(labels[static_cast<std::size_t>(r)]);
    if (it == pos.end())
      throw Error(ErrorCode::unknown_class, "label " + std::to_string(labels[static_cast<std::size_t>(r)]) +
                                                " is not among the objective's classes");
    const Index c = it->second;
    const RowVector diff = x.row(r) - mu.row(c);
    const RowVector sq = diff.cwiseProduct(diff);
    total -= static_cast<double>(precision.row(c).cwiseProduct(sq).sum());
    d_mu.row(c) += 2 * precision.row(c).cwiseProduct(diff);
    d_prec.row(c) -= sq;
    if (logdet) {
      total += static_cast<double>(log_prec.row(c).sum());
      d_prec.row(c) += precision.row(c).cwiseInverse();
    }
  }
  const auto n = static_cast<Real>(x.rows());
  out.loglik = total / static_cast<double>(x.rows());
  out.mean_grad = model.mean_net().backward(out.mean_pass, d_mu / n).params;
  out.prec_grad = model.prec_net().backward(out.prec_pass, (d_prec / n).cwiseProduct(slope)).params;
  return out;
}

PretrainResult pretrain(BaseZslModel& model, const data::FeatureDataset& seen_data, const PretrainConfig& config) {
  const SeenLayout layout = seen_layout(model, seen_data);
  const Index num_classes = static_cast<Index>(layout.classes.size());
  const Index d = model.feature_dim();

  // Per-class holdout for early stopping.
  Rng split_rng = Rng::stream(config.seed, "pretrain-holdout");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index r = 0; r < seen_data.rows(); ++r)
    by_class[static_cast<std::size_t>(layout.position_of_row[static_cast<std::size_t>(r)])].push_back(r);
  std::vector<Index> train_rows, holdout_rows;
  for (auto& rows : by_class) {
    shuffle(rows, split_rng);
    auto n_hold = static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(rows.size())));
    n_hold = std::min(n_hold, rows.size() - 1);
    holdout_rows.insert(holdout_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_hold), rows.end());
  }
  std::sort(holdout_rows.begin(), holdout_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
  const data::FeatureDataset holdout = seen_data.subset(holdout_rows);

  auto& mean_net = model.mutable_mean_net();
  auto& prec_net = model.mutable_prec_net();

  nn::OptimizerHyper mean_hyper{config.learning_rate, config.beta1, config.beta2, config.epsilon,
                                config.mean_weight_decay};
  nn::OptimizerHyper prec_hyper = mean_hyper;
  prec_hyper.weight_decay = config.prec_weight_decay;
  auto mean_opt = nn::Optimizer::adam(mean_hyper, mean_net.params().size());
  auto prec_opt = nn::Optimizer::adam(prec_hyper, prec_net.params().size());

  Rng shuffle_rng = Rng::stream(config.seed, "pretrain-shuffle");
  Rng dropout_rng = Rng::stream(config.seed, "pretrain-dropout");

  PretrainResult result;
  result.best_heldout_ll = -std::numeric_limits<double>::infinity();
  nn::MlpNetwork best_mean = mean_net;
  nn::MlpNetwork best_prec = prec_net;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    mean_net.set_mode(nn::Mode::train);
    prec_net.set_mode(nn::Mode::train);
    shuffle(train_rows, shuffle_rng);
    double epoch_ll = 0.0;

    for (std::size_t start = 0; start < train_rows.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train_rows.size(), start + static_cast<std::size_t>(config.batch_size));

      Matrix xb(static_cast<Index>(end - start), d);
      std::vector<int> yb;
      yb.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Index>(i - start)) = seen_data.features.row(train_rows[i]);
        yb.push_back(seen_data.labels[static_cast<std::size_t>(train_rows[i])]);
      }
      const auto obj = loglik_objective(model, layout.classes, xb, yb, dropout_rng.next_u64());
      if (!std::isfinite(obj.loglik))
        throw Error(ErrorCode::non_finite, "pretraining log-likelihood diverged in epoch " + std::to_string(epoch));
      epoch_ll += obj.loglik * static_cast<double>(end - start);

      // Minimize the negative mean log-likelihood.
      const Vector g_mean = -obj.mean_grad;
      const Vector g_prec = -obj.prec_grad;
      const auto& mean_pass = obj.mean_pass;
      const auto& prec_pass = obj.prec_pass;
      mean_net.absorb_batch_stats(mean_pass);
      prec_net.absorb_batch_stats(prec_pass);
      nn::apply_gradient(mean_net, mean_opt, g_mean);
      nn::apply_gradient(prec_net, prec_opt, g_prec);
    }

    mean_net.set_mode(nn::Mode::eval);
    prec_net.set_mode(nn::Mode::eval);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_ll = epoch_ll / static_cast<double>(train_rows.size());
    rec.heldout_ll = holdout.rows() > 0 ? mean_loglik(model, holdout) : rec.train_ll;
    if (!std::isfinite(rec.heldout_ll))
      throw Error(ErrorCode::non_finite, "held-out log-likelihood is not finite in epoch " + std::to_string(epoch));
    result.trace.push_back(rec);

    if (rec.heldout_ll > result.best_heldout_ll) {
      result.best_heldout_ll = rec.heldout_ll;
      result.best_epoch = epoch;
      best_mean = mean_net;
      best_prec = prec_net;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }

  mean_net = std::move(best_mean);
  prec_net = std::move(best_prec);
  mean_net.set_mode(nn::Mode::eval);
  prec_net.set_mode(nn::Mode::eval);
  return result;
}

PseudoLabels pseudo_labels(const BaseZslModel& model, const data::FeatureDataset& test_data) {
  PseudoLabels out;
  out.labels = model.predict_rows(test_data.features, LabelSpace::unseen);
  out.has_truth = test_data.has_labels();
  if (!out.has_truth) return out;
  std::map<int, std::pair<Index, Index>> tally;  // class -> (correct, total)
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    auto& t = tally[test_data.labels[i]];
    t.second += 1;
    if (out.labels[i] == test_data.labels[i]) t.first += 1;
  }
  double sum = 0.0;
  for (const auto& [id, t] : tally) {
    const double acc = static_cast<double>(t.first) / static_cast<double>(t.second);
    out.per_class_agreement[id] = acc;
    sum += acc;
  }
  out.mean_agreement = tally.empty() ? 0.0 : sum / static_cast<double>(tally.size());
  return out;
}

void write_loss_trace_csv(const fs::path& path, const std::vector<EpochRecord>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  out << "epoch,train_ll,heldout_ll\n";
  for (const auto& r : trace)
    out << r.epoch << ',' << data::format_real(r.train_ll) << ',' << data::format_real(r.heldout_ll) << '\n';
}

namespace {

json table_to_json(const ClassAttributeTable& table) {
  json rows = json::array();
  for (Index r = 0; r < table.num_classes(); ++r) {
    std::vector<double> v(static_cast<std::size_t>(table.attr_dim()));
    for (Index c = 0; c < table.attr_dim(); ++c) v[static_cast<std::size_t>(c)] = table.attributes(r, c);
    rows.push_back(v);
  }
  std::vector<int> seen;
  for (bool b : table.seen_mask) seen.push_back(b ? 1 : 0);
  return json{{"class_ids", table.class_ids}, {"seen", seen}, {"rows", rows}};
}

ClassAttributeTable table_from_json(const json& j) {
  ClassAttributeTable t;
  t.class_ids = j.at("class_ids").get<std::vector<int>>();
  for (int s : j.at("seen").get<std::vector<int>>()) t.seen_mask.push_back(s != 0);
  const auto& rows = j.at("rows");
  const Index cols = rows.empty() ? 0 : static_cast<Index>(rows[0].size());
  t.attributes.resize(static_cast<Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto v = rows[r].get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != cols) throw Error(ErrorCode::ragged_rows, "model.json attribute rows are ragged");
    for (Index c = 0; c < cols; ++c) t.attributes(static_cast<Index>(r), c) = static_cast<Real>(v[static_cast<std::size_t>(c)]);
  }
  return t;
}

}  // namespace

void save_model(const fs::path& dir, const BaseZslModel& model, std::uint64_t seed) {
  fs::create_directories(dir);
  nn::save_checkpoint(dir / "mean_net.bin", model.mean_net(), seed);
  nn::save_checkpoint(dir / "prec_net.bin", model.prec_net(), seed);
  json meta{{"format_version", 1},
            {"attribute_hash", hex64(model.attributes().hash())},
            {"include_logdet", model.include_logdet()},
            {"fingerprint", hex64(model.fingerprint())},
            {"seed", seed},
            {"attributes", table_to_json(model.attributes())}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + (dir / "model.json").string());
  out << meta.dump(2) << '\n';
}

BaseZslModel load_model(const fs::path& dir, const ClassAttributeTable* expected_attributes) {
  const fs::path meta_path = dir / "model.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::missing_file, meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, meta_path.string() + ": " + e.what());
  }
  ClassAttributeTable table = table_from_json(meta.at("attributes"));
  const std::string hash = meta.at("attribute_hash").get<std::string>();
  if (hash != hex64(table.hash()))
    throw Error(ErrorCode::parse_error, meta_path.string() + ": attribute hash does not match stored attributes");
  if (expected_attributes && hex64(expected_attributes->hash()) != hash)
    throw Error(ErrorCode::invalid_config, "checkpoint was trained on a different attribute table");
  auto mean = nn::load_checkpoint(dir / "mean_net.bin");
  auto prec = nn::load_checkpoint(dir / "prec_net.bin");
  return BaseZslModel(std::move(table), std::move(mean.network), std::move(prec.network),
                      meta.at("include_logdet").get<bool>());
}

}  // namespace zslada::model
