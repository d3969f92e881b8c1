#pragma once

#include "zslada/ada/ada.hpp"
#include "zslada/data/synthetic.hpp"
#include "zslada/model/base_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace zslada::cli {

struct EvalOptions {
  Index prototype_samples = 10000;
  std::uint64_t prototype_seed = 100;
  /// Base-model draws per unseen class written by `export`.
  Index export_samples = 500;
};

/// Everything a run needs, after profile defaults, the config file and flags are merged.
struct RunConfig {
  data::SyntheticWorldSpec world;
  std::string data;     // dataset directory
  std::string base;     // pretrained model directory
  std::string adapted;  // adapted state directory
  std::string out;
  std::string profile = "synth-small";
  model::PretrainConfig pretrain;
  std::string ada_preset;
  ada::AdaConfig ada;
  EvalOptions eval;
  std::uint64_t seed = 100;
  std::string variant = "full";  // or "all" for the ablation table
  std::string metric = "all";
};

/// Command-line values; unset ones leave the config file in charge.
struct Overrides {
  std::optional<std::string> data, base, adapted, out, profile, variant, metric;
  std::optional<std::uint64_t> seed;
};

/// Profile defaults, then `file`, then `flags`. A top-level seed fills every
/// nested seed the file leaves unset; --seed replaces all of them.
/// Unknown or mistyped keys throw invalid_config naming the key.
RunConfig resolve_config(const nlohmann::json& file, const Overrides& flags);

nlohmann::json to_json(const RunConfig& c);

/// Reads a JSON file, throwing missing_file / parse_error.
nlohmann::json read_json_file(const std::string& path);

/// Full command line including argv[0]. Returns the process exit code:
/// 0 success, 2 usage or configuration error, 3 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace zslada::cli
