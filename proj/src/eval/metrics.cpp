#include "zslada/eval/metrics.hpp"

#include "zslada/data/csv.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace zslada::eval {

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::inductive: return "inductive";
    case MetricKind::m1: return "m1";
    case MetricKind::m2: return "m2";
  }
  return "inductive";
}

MetricKind metric_from_string(const std::string& name) {
  if (name == "inductive") return MetricKind::inductive;
  if (name == "m1") return MetricKind::m1;
  if (name == "m2") return MetricKind::m2;
  throw Error(ErrorCode::invalid_config, "unknown metric '" + name + "'");
}

EvalReport per_class_top1(const std::vector<int>& predictions, const std::vector<int>& truth, MetricKind kind,
                          const std::vector<int>* label_space) {
  if (predictions.size() != truth.size())
    throw Error(ErrorCode::dimension_mismatch, std::to_string(predictions.size()) + " predictions for " +
                                                   std::to_string(truth.size()) + " labels");
  if (truth.empty()) throw Error(ErrorCode::empty_batch, "nothing to score");
  std::set<int> space;
  if (label_space) space.insert(label_space->begin(), label_space->end());
  EvalReport r;
  r.kind = kind;
  Index correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    if (t == data::kUnlabeled) throw Error(ErrorCode::unknown_class, "row " + std::to_string(i) + " has no label");
    if (label_space && !space.count(t))
      throw Error(ErrorCode::label_out_of_range,
                  "row " + std::to_string(i) + " has class " + std::to_string(t) + " outside the label space");
    r.n_per_class[t] += 1;
    auto& c = r.correct_per_class[t];
    if (predictions[i] == t) {
      c += 1;
      correct += 1;
    }
  }
  double sum = 0.0;
  for (const auto& [id, n] : r.n_per_class) {
    const double acc = static_cast<double>(r.correct_per_class[id]) / static_cast<double>(n);
    r.per_class_acc[id] = acc;
    sum += acc;
  }
  for (int id : space)
    if (!r.n_per_class.count(id)) r.excluded.push_back(id);
  r.mean_per_class_acc = sum / static_cast<double>(r.per_class_acc.size());
  r.overall_acc = static_cast<double>(correct) / static_cast<double>(truth.size());
  return r;
}

EvalReport inductive_accuracy(const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                              model::LabelSpace space) {
  const auto ids = base.label_space(space);
  return per_class_top1(base.predict_rows(test_data.features, space), test_data.labels, MetricKind::inductive, &ids);
}

EvalReport m1_accuracy(const ada::AdaState& state, const data::FeatureDataset& test_data) {
  const std::vector<int> idx = state.classify(test_data.features);
  std::vector<int> pred(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) pred[i] = state.unseen_ids[static_cast<std::size_t>(idx[i])];
  return per_class_top1(pred, test_data.labels, MetricKind::m1, &state.unseen_ids);
}

std::vector<int> gaussian_predict(const model::BaseZslModel& base, const Matrix& x,
                                  const std::vector<model::GaussianClassParams>& params) {
  std::vector<int> ids;
  for (const auto& p : params) ids.push_back(p.class_id);
  return model::argmax_classes(base.log_likelihoods(x, params), ids);
}

EvalReport m2_accuracy(const ada::AdaState& state, const model::BaseZslModel& base,
                       const data::FeatureDataset& test_data, Index n_samples, std::uint64_t seed) {
  const auto protos = ada::map_prototypes(state, base, n_samples, seed);
  return per_class_top1(gaussian_predict(base, test_data.features, protos), test_data.labels, MetricKind::m2,
                        &state.unseen_ids);
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  std::map<int, bool> rows;
  for (const auto& [id, n] : report.n_per_class) rows[id] = true;
  for (int id : report.excluded) rows[id] = false;
  out << "class_id,n,correct,acc\n";
  Index n_total = 0, c_total = 0;
  for (const auto& [id, present] : rows) {
    if (!present) {
      out << id << ",0,0,NA\n";
      continue;
    }
    const Index n = report.n_per_class.at(id);
    const Index c = report.correct_per_class.at(id);
    n_total += n;
    c_total += c;
    out << id << ',' << n << ',' << c << ',' << data::format_real(report.per_class_acc.at(id)) << '\n';
  }
  out << "MEAN," << n_total << ',' << c_total << ',' << data::format_real(report.mean_per_class_acc) << '\n';
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

EvalReport read_report_csv(const std::filesystem::path& path, MetricKind kind) {
  const auto lines = data::read_lines(path.string());
  const std::string ctx = path.string();
  if (lines.empty() || lines[0] != "class_id,n,correct,acc")
    throw Error(ErrorCode::parse_error, ctx + ": expected header class_id,n,correct,acc");
  EvalReport r;
  r.kind = kind;
  bool mean_seen = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = data::split_fields(lines[i]);
    if (f.size() != 4) throw Error(ErrorCode::ragged_rows, ctx + ": line " + std::to_string(i + 1) + " has " +
                                                              std::to_string(f.size()) + " fields");
    if (f[0] == "MEAN") {
      const auto n = data::parse_int(f[1], ctx);
      const auto c = data::parse_int(f[2], ctx);
      r.mean_per_class_acc = data::parse_real(f[3], ctx);
      r.overall_acc = n > 0 ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
      mean_seen = true;
      continue;
    }
    const int id = static_cast<int>(data::parse_int(f[0], ctx));
    if (f[3] == "NA") {
      r.excluded.push_back(id);
      continue;
    }
    r.n_per_class[id] = static_cast<Index>(data::parse_int(f[1], ctx));
    r.correct_per_class[id] = static_cast<Index>(data::parse_int(f[2], ctx));
    r.per_class_acc[id] = data::parse_real(f[3], ctx);
  }
  if (!mean_seen) throw Error(ErrorCode::parse_error, ctx + ": missing MEAN row");
  return r;
}

std::string display_name(ada::Variant v) {
  switch (v) {
    case ada::Variant::std_da: return "Std DA";
    case ada::Variant::vanilla_ada: return "Vanilla ADA";
    case ada::Variant::cyclegan_wo: return "CycleGAN w/o";
    case ada::Variant::full: return "Ours";
  }
  return "Ours";
}

AblationRow ablation_run(ada::Variant variant, const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                         ada::AdaConfig config, Index n_samples, std::uint64_t seed) {
  config.variant = variant;
  const ada::AdaptResult r = ada::adapt(base, test_data, config);
  AblationRow row;
  row.variant = variant;
  row.base_fingerprint = r.state.base_fingerprint;
  if (variant != ada::Variant::cyclegan_wo) row.m1 = m1_accuracy(r.state, test_data).mean_per_class_acc;
  if (variant != ada::Variant::std_da) row.m2 = m2_accuracy(r.state, base, test_data, n_samples, seed).mean_per_class_acc;
  return row;
}

std::vector<AblationRow> ablation_table(const model::BaseZslModel& base, const data::FeatureDataset& test_data,
                                        const ada::AdaConfig& config, Index n_samples, std::uint64_t seed,
                                        const std::vector<ada::Variant>& variants) {
  std::vector<AblationRow> rows;
  for (auto v : variants) rows.push_back(ablation_run(v, base, test_data, config, n_samples, seed));
  return rows;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? data::format_real(*v) : "NA"; }

}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << "method,variant,M1,M2\n";
  for (const auto& r : rows)
    out << display_name(r.variant) << ',' << ada::to_string(r.variant) << ',' << cell(r.m1) << ',' << cell(r.m2)
        << '\n';
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path) {
  const auto lines = data::read_lines(path.string());
  const std::string ctx = path.string();
  if (lines.empty() || lines[0] != "method,variant,M1,M2")
    throw Error(ErrorCode::parse_error, ctx + ": expected header method,variant,M1,M2");
  std::vector<AblationRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = data::split_fields(lines[i]);
    if (f.size() != 4) throw Error(ErrorCode::ragged_rows, ctx + ": line " + std::to_string(i + 1));
    AblationRow r;
    r.variant = ada::variant_from_string(std::string(f[1]));
    if (f[2] != "NA") r.m1 = data::parse_real(f[2], ctx);
    if (f[3] != "NA") r.m2 = data::parse_real(f[3], ctx);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace zslada::eval
