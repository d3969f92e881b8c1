#include "zslada/cli/cli.hpp"

#include "zslada/data/csv.hpp"
#include "zslada/data/dataset.hpp"
#include "zslada/data/export.hpp"
#include "zslada/eval/metrics.hpp"
#include "zslada/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace zslada::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
T field(const json& j, const std::string& key, const std::string& full) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::invalid_config, "config key '" + full + "' has the wrong type");
  }
}

// Re-throws nested key errors with the section prefix.
template <class F>
void in_section(const std::string& section, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::invalid_config) throw;
    std::string msg = e.what();
    msg = msg.substr(msg.find(": ") + 2);
    throw Error(ErrorCode::invalid_config, "in section '" + section + "': " + msg);
  }
}

EvalOptions eval_from_json(const json& j, EvalOptions e) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "config key 'eval' must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string full = "eval." + key;
    if (key == "prototype_samples") e.prototype_samples = field<Index>(j, key, full);
    else if (key == "prototype_seed") e.prototype_seed = field<std::uint64_t>(j, key, full);
    else if (key == "export_samples") e.export_samples = field<Index>(j, key, full);
    else throw Error(ErrorCode::invalid_config, "unknown config key '" + full + "'");
  }
  if (e.prototype_samples < 1) throw Error(ErrorCode::invalid_config, "eval.prototype_samples must be >= 1");
  if (e.export_samples < 1) throw Error(ErrorCode::invalid_config, "eval.export_samples must be >= 1");
  return e;
}

bool has_key(const json& file, const char* section, const char* key) {
  return file.contains(section) && file[section].is_object() && file[section].contains(key);
}

}  // namespace

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::missing_file, path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
}

RunConfig resolve_config(const json& file, const Overrides& flags) {
  if (!file.is_object()) throw Error(ErrorCode::invalid_config, "run config must be a JSON object");
  static const char* kKeys[] = {"world",   "data",       "base", "adapted", "profile", "pretrain", "ada_preset",
                                "ada",     "eval",       "seed", "variant", "metric",  "out"};
  for (const auto& [key, value] : file.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      throw Error(ErrorCode::invalid_config, "unknown config key '" + key + "'");
  }

  RunConfig c;
  auto str = [&](const char* key, std::string& dst, const std::optional<std::string>& flag) {
    if (file.contains(key)) dst = field<std::string>(file, key, key);
    if (flag) dst = *flag;
  };
  str("data", c.data, flags.data);
  str("base", c.base, flags.base);
  str("adapted", c.adapted, flags.adapted);
  str("out", c.out, flags.out);
  str("profile", c.profile, flags.profile);
  str("metric", c.metric, flags.metric);

  const model::ModelProfile profile = model::profile_by_name(c.profile);
  c.pretrain = profile.pretrain;
  in_section("pretrain", [&] {
    if (file.contains("pretrain")) update_from_json(file["pretrain"], c.pretrain);
  });

  c.ada_preset = c.profile == "synth-small" ? "synth-small" : "benchmark";
  if (file.contains("ada_preset")) c.ada_preset = field<std::string>(file, "ada_preset", "ada_preset");
  c.ada = ada::ada_preset(c.ada_preset);
  in_section("ada", [&] {
    if (file.contains("ada")) update_from_json(file["ada"], c.ada);
  });

  in_section("world", [&] {
    if (file.contains("world")) c.world = data::world_spec_from_json(file["world"]);
  });
  if (file.contains("eval")) c.eval = eval_from_json(file["eval"], c.eval);

  std::optional<std::string> variant;
  if (file.contains("variant")) variant = field<std::string>(file, "variant", "variant");
  if (flags.variant) variant = flags.variant;
  if (variant) {
    if (*variant == "all") c.variant = "all";
    else c.ada.variant = ada::variant_from_string(*variant);
  }
  if (c.variant != "all") c.variant = to_string(c.ada.variant);

  if (file.contains("seed")) c.seed = field<std::uint64_t>(file, "seed", "seed");
  if (!has_key(file, "world", "seed")) c.world.seed = c.seed;
  if (!has_key(file, "pretrain", "seed")) c.pretrain.seed = c.seed;
  if (!has_key(file, "ada", "seed")) c.ada.seed = c.seed;
  if (!has_key(file, "eval", "prototype_seed")) c.eval.prototype_seed = c.seed;
  if (flags.seed) {
    c.seed = *flags.seed;
    c.world.seed = c.pretrain.seed = c.ada.seed = c.eval.prototype_seed = c.seed;
  }

  if (c.metric != "all") eval::metric_from_string(c.metric);
  c.world.validate();
  c.ada.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["world"] = c.world;
  j["data"] = c.data;
  j["base"] = c.base;
  j["adapted"] = c.adapted;
  j["out"] = c.out;
  j["profile"] = c.profile;
  j["pretrain"] = c.pretrain;
  j["ada_preset"] = c.ada_preset;
  j["ada"] = c.ada;
  j["eval"] = {{"prototype_samples", c.eval.prototype_samples},
               {"prototype_seed", c.eval.prototype_seed},
               {"export_samples", c.eval.export_samples}};
  j["seed"] = c.seed;
  j["variant"] = c.variant;
  j["metric"] = c.metric;
  return j;
}

namespace {

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::invalid_config, std::string("missing required ") + flag);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

fs::path prepare_out(const RunConfig& c) {
  require(c.out, "--out");
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + c.out + ": " + ec.message());
  write_text(fs::path(c.out) / "resolved_config.json", to_json(c).dump(2) + "\n");
  return c.out;
}

std::string fixed4(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

std::string cell(const std::optional<double>& v) { return v ? fixed4(*v) : "NA"; }

struct Loaded {
  data::DatasetBundle bundle;
  model::BaseZslModel base;
  data::FeatureDataset test;
};

Loaded load_base_and_data(const RunConfig& c) {
  require(c.data, "--data");
  require(c.base, "--base");
  Loaded l{data::load_dataset(c.data), {}, {}};
  l.base = model::load_model(c.base, &l.bundle.attributes);
  if (l.bundle.data.dim() != l.base.feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "dataset has " + std::to_string(l.bundle.data.dim()) +
                                                   " features, checkpoint expects " +
                                                   std::to_string(l.base.feature_dim()));
  l.test = l.bundle.data.test();
  return l;
}

ada::AdaState load_adapted(const RunConfig& c, const Loaded& l) {
  ada::AdaState s = ada::load_state(c.adapted);
  if (s.feature_dim != l.base.feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "adapted state has " + std::to_string(s.feature_dim) +
                                                   " features, base model has " +
                                                   std::to_string(l.base.feature_dim()));
  if (s.base_fingerprint != l.base.fingerprint())
    throw Error(ErrorCode::invalid_config, "adapted state was trained against a different base model");
  return s;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  const fs::path dir = prepare_out(c);
  const auto world = data::make_synthetic_world(c.world);
  data::save_world(dir, world);
  out << "wrote " << world.data.rows() << " rows (" << world.data.split.seen.size() << " seen, "
      << world.data.split.unseen.size() << " unseen classes, d=" << world.data.dim() << ") to " << dir.string()
      << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  require(c.data, "--data");
  const fs::path dir = prepare_out(c);
  auto bundle = data::load_dataset(c.data);
  model::BaseZslModel model(bundle.attributes, bundle.data.dim(), model::profile_by_name(c.profile), c.pretrain.seed);
  const auto result = model::pretrain(model, bundle.data.train(), c.pretrain);
  model::save_model(dir, model, c.pretrain.seed);
  model::write_loss_trace_csv(dir / "loss_trace.csv", result.trace);
  out << "best_epoch " << result.best_epoch << "\n";
  const auto test = bundle.data.test();
  if (test.rows() > 0 && test.has_labels()) {
    const auto report = eval::inductive_accuracy(model, test);
    eval::write_report_csv(dir / "inductive.csv", report);
    for (const auto& [id, acc] : report.per_class_acc) out << "class " << id << " " << fixed4(acc) << "\n";
    out << "inductive_unseen_acc " << fixed4(report.mean_per_class_acc) << "\n";
  } else {
    out << "inductive_unseen_acc NA\n";
  }
  return 0;
}

struct VariantOutcome {
  std::optional<double> m1, m2;
};

VariantOutcome adapt_one(const RunConfig& c, const Loaded& l, ada::Variant variant, const fs::path& dir,
                         std::ostream& out, bool verbose) {
  ada::AdaConfig cfg = c.ada;
  cfg.variant = variant;
  const auto result = ada::adapt(l.base, l.test, cfg);
  ada::save_state(dir / "ada", result.state);
  ada::write_iteration_log_csv(dir / "iteration_log.csv", result.log);

  VariantOutcome o;
  const bool labeled = l.test.has_labels() && result.pseudo.has_truth;
  if (labeled && result.state.c_t) {
    const auto r = eval::m1_accuracy(result.state, l.test);
    eval::write_report_csv(dir / "m1.csv", r);
    o.m1 = r.mean_per_class_acc;
  }
  if (labeled && variant != ada::Variant::std_da) {
    const auto r = eval::m2_accuracy(result.state, l.base, l.test, c.eval.prototype_samples, c.eval.prototype_seed);
    eval::write_report_csv(dir / "m2.csv", r);
    o.m2 = r.mean_per_class_acc;
  }
  if (verbose) {
    out << "variant " << to_string(variant) << "\n";
    out << "phase_switch_iteration " << result.state.switch_iteration << "\n";
    out << "pseudo_label_agreement " << (labeled ? fixed4(result.pseudo.mean_agreement) : "NA") << "\n";
    out << "M1 " << cell(o.m1) << "\n";
    out << "M2 " << cell(o.m2) << "\n";
  }
  return o;
}

int cmd_adapt(const RunConfig& c, std::ostream& out) {
  const Loaded l = load_base_and_data(c);
  const fs::path dir = prepare_out(c);
  if (c.variant != "all") {
    adapt_one(c, l, c.ada.variant, dir, out, true);
    return 0;
  }
  const auto pseudo = model::pseudo_labels(l.base, l.test);
  std::vector<eval::AblationRow> rows;
  for (auto v : {ada::Variant::std_da, ada::Variant::vanilla_ada, ada::Variant::cyclegan_wo, ada::Variant::full}) {
    const fs::path sub = dir / to_string(v);
    fs::create_directories(sub);
    const auto o = adapt_one(c, l, v, sub, out, false);
    rows.push_back({v, o.m1, o.m2, l.base.fingerprint()});
  }
  eval::write_ablation_csv(dir / "ablation.csv", rows);
  out << "pseudo_label_agreement " << (pseudo.has_truth ? fixed4(pseudo.mean_agreement) : "NA") << "\n";
  out << std::left << std::setw(14) << "method" << std::setw(8) << "M1" << "M2\n";
  for (const auto& r : rows)
    out << std::setw(14) << eval::display_name(r.variant) << std::setw(8) << cell(r.m1) << cell(r.m2) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const Loaded l = load_base_and_data(c);
  if (!l.test.has_labels()) throw Error(ErrorCode::invalid_config, "evaluation needs labeled test rows");
  const bool all = c.metric == "all";
  std::optional<ada::AdaState> state;
  if (!c.adapted.empty()) state = load_adapted(c, l);
  else if (!all && c.metric != "inductive")
    throw Error(ErrorCode::invalid_config, "--metric " + c.metric + " needs --adapted");
  const fs::path dir = prepare_out(c);

  auto emit = [&](const eval::EvalReport& r) {
    const std::string name = to_string(r.kind);
    eval::write_report_csv(dir / (name + ".csv"), r);
    out << name << " " << fixed4(r.mean_per_class_acc) << "\n";
  };
  if (all || c.metric == "inductive") emit(eval::inductive_accuracy(l.base, l.test));
  if (state) {
    if (c.metric == "m1" || (all && state->classifier_trained)) emit(eval::m1_accuracy(*state, l.test));
    else if (all) out << "m1 NA\n";
    if (c.metric == "m2" || (all && state->config.variant != ada::Variant::std_da))
      emit(eval::m2_accuracy(*state, l.base, l.test, c.eval.prototype_samples, c.eval.prototype_seed));
    else if (all) out << "m2 NA\n";
  }
  return 0;
}

int cmd_export(const RunConfig& c, std::ostream& out) {
  const Loaded l = load_base_and_data(c);
  std::optional<ada::AdaState> state;
  if (!c.adapted.empty()) state = load_adapted(c, l);
  const fs::path dir = prepare_out(c);

  const auto unseen = l.base.label_space(model::LabelSpace::unseen);
  const Index n = c.eval.export_samples;
  data::EmbeddingBlock generated{Matrix(n * static_cast<Index>(unseen.size()), l.base.feature_dim()), {},
                                 data::Origin::generated};
  const auto params = l.base.class_params(unseen);
  for (std::size_t k = 0; k < unseen.size(); ++k) {
    const std::uint64_t seed = Rng::stream(c.eval.prototype_seed, "export").split(std::to_string(unseen[k])).next_u64();
    generated.features.middleRows(static_cast<Index>(k) * n, n) = model::sample_gaussian(params[k], n, seed);
    generated.labels.insert(generated.labels.end(), static_cast<std::size_t>(n), unseen[k]);
  }
  std::vector<data::EmbeddingBlock> blocks{generated};
  blocks.push_back({l.test.features, l.test.has_labels() ? l.test.labels
                                                         : std::vector<int>(static_cast<std::size_t>(l.test.rows()),
                                                                            data::kUnlabeled),
                    data::Origin::real});
  if (state && state->g_t) {
    std::vector<int> index(generated.labels.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = state->index_of(generated.labels[i]);
    blocks.push_back({state->transform_source(generated.features, index), generated.labels,
                      data::Origin::transformed});
  }
  data::export_embeddings(dir / "embeddings.csv", blocks);
  Index rows = 0;
  for (const auto& b : blocks) rows += b.features.rows();
  out << "wrote " << rows << " rows in " << blocks.size() << " blocks to " << (dir / "embeddings.csv").string()
      << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot classification with adversarial domain adaptation", "zslada"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string config_path;
  Overrides flags;
  std::string data, base, adapted, outdir, profile, variant, metric;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run-config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed for every stochastic component");
    sub->add_option("--out", outdir, "Output directory");
  };
  auto with_data = [&](CLI::App* sub) {
    sub->add_option("--data", data, "Dataset directory");
    sub->add_option("--profile", profile, "Base-model profile")->check(CLI::IsMember(model::profile_names()));
  };
  auto with_base = [&](CLI::App* sub) { sub->add_option("--base", base, "Pretrained model directory"); };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  common(synth);
  auto* pre = app.add_subcommand("pretrain", "Fit the attribute-conditioned Gaussian model on seen classes");
  common(pre);
  with_data(pre);
  auto* adp = app.add_subcommand("adapt", "Run adversarial domain adaptation on the test rows");
  common(adp);
  with_data(adp);
  with_base(adp);
  adp->add_option("--variant", variant, "Method variant, or all for the ablation table")
      ->check(CLI::IsMember({"std-da", "vanilla-ada", "cyclegan-wo", "full", "std_da", "vanilla_ada", "cyclegan_wo",
                             "all"}));
  auto* ev = app.add_subcommand("eval", "Write per-class accuracy reports");
  common(ev);
  with_data(ev);
  with_base(ev);
  ev->add_option("--adapted", adapted, "Adapted state directory (the ada/ folder written by adapt)");
  ev->add_option("--metric", metric, "inductive, m1, m2 or all")->check(CLI::IsMember({"inductive", "m1", "m2", "all"}));
  auto* ex = app.add_subcommand("export", "Write generated, real and transformed embeddings");
  common(ex);
  with_data(ex);
  with_base(ex);
  ex->add_option("--adapted", adapted, "Adapted state directory");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* active = &app;
    for (auto* sub : app.get_subcommands()) active = sub;
    err << active->help();
    return 2;
  }

  auto set_if = [](std::optional<std::string>& dst, const std::string& v) {
    if (!v.empty()) dst = v;
  };
  set_if(flags.data, data);
  set_if(flags.base, base);
  set_if(flags.adapted, adapted);
  set_if(flags.out, outdir);
  set_if(flags.profile, profile);
  set_if(flags.variant, variant);
  set_if(flags.metric, metric);
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) flags.seed = seed;

  try {
    const json file = config_path.empty() ? json::object() : read_json_file(config_path);
    const RunConfig c = resolve_config(file, flags);
    const std::string name = sub->get_name();
    if (name == "synth") return cmd_synth(c, out);
    if (name == "pretrain") return cmd_pretrain(c, out);
    if (name == "adapt") return cmd_adapt(c, out);
    if (name == "eval") return cmd_eval(c, out);
    return cmd_export(c, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_numerical(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace zslada::cli
