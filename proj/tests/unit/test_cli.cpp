#include "zslada/cli/cli.hpp"
#include "zslada/data/csv.hpp"
#include "zslada/data/export.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <regex>
#include <sstream>

using namespace zslada;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome zsl(std::vector<std::string> args) {
  args.insert(args.begin(), "zslada");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

json tiny_world(double shift = 0.0) {
  json w = {{"seen", 4}, {"unseen", 3}, {"dim", 4}, {"samples_per_class", 120}};
  if (shift > 0) w["shift"] = {{"kind", "affine"}, {"magnitude", shift}, {"direction", "nearest_pair"}};
  return w;
}

json tiny_run(double shift = 0.0) {
  return {{"world", tiny_world(shift)},
          {"pretrain", {{"max_epochs", 40}}},
          {"ada",
           {{"n_steps", 30},
            {"batch_size", 16},
            {"n_d", 2},
            {"nets", {{"generator_hidden", {8}}, {"critic_hidden", {8}}}},
            {"recovery_trigger", {{"check_every", 10}}}}},
          {"eval", {{"prototype_samples", 500}}}};
}

// "name value" line of a command's output.
std::string printed(const std::string& out, const std::string& name) {
  std::smatch m;
  const std::regex re("(^|\n)" + name + " ([^\n]*)");
  return std::regex_search(out, m, re) ? m[2].str() : "";
}

struct Pipeline {
  test::TempDir tmp;
  fs::path config, world, base;

  explicit Pipeline(const json& run = tiny_run(6.0)) {
    config = write_json(tmp.path() / "run.json", run);
    world = tmp.path() / "world";
    base = tmp.path() / "base";
    REQUIRE(zsl({"synth", "--config", config.string(), "--out", world.string()}).code == 0);
    REQUIRE(zsl({"pretrain", "--config", config.string(), "--data", world.string(), "--out", base.string()}).code == 0);
  }
  Outcome adapt(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"adapt", "--config", config.string(), "--data", world.string(), "--base", base.string(),
                               "--out", (tmp.path() / out).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return zsl(a);
  }
};

}  // namespace

TEST_CASE("run config layers profile defaults, file and flags") {
  const auto defaults = cli::resolve_config(json::object(), {});
  CHECK(defaults.seed == 100);
  CHECK(defaults.ada.seed == 100);
  CHECK(defaults.pretrain.seed == 100);
  CHECK(defaults.world.seed == 100);
  CHECK(defaults.profile == "synth-small");
  CHECK(defaults.ada_preset == "synth-small");
  CHECK(defaults.pretrain.max_epochs == model::profile_by_name("synth-small").pretrain.max_epochs);

  const json file = {{"seed", 7}, {"pretrain", {{"max_epochs", 12}}}, {"ada", {{"seed", 3}, {"chi", 2.5}}}};
  auto c = cli::resolve_config(file, {});
  CHECK(c.pretrain.max_epochs == 12);
  CHECK(c.pretrain.seed == 7);
  CHECK(c.world.seed == 7);
  CHECK(c.ada.seed == 3);
  CHECK(c.ada.chi == 2.5);

  cli::Overrides flags;
  flags.seed = 11;
  flags.variant = "vanilla-ada";
  c = cli::resolve_config(file, flags);
  CHECK(c.ada.seed == 11);
  CHECK(c.pretrain.seed == 11);
  CHECK(c.ada.variant == ada::Variant::vanilla_ada);
  CHECK(c.variant == "vanilla_ada");

  flags = {};
  flags.profile = "cub";
  c = cli::resolve_config(file, flags);
  CHECK(c.ada_preset == "benchmark");
  CHECK(c.ada.nets.generator_hidden == std::vector<Index>{1200, 1200});
}

TEST_CASE("resolved config replays to itself") {
  const json file = {{"seed", 5}, {"world", {{"dim", 6}}}, {"ada", {{"seed", 9}}}, {"variant", "std-da"}};
  const auto c = cli::resolve_config(file, {});
  const json snap = cli::to_json(c);
  CHECK(cli::to_json(cli::resolve_config(snap, {})) == snap);
}

TEST_CASE("run config errors name the key") {
  auto message = [](const json& j) {
    try {
      cli::resolve_config(j, {});
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_config);
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({{"sead", 1}}).find("'sead'") != std::string::npos);
  CHECK(message({{"world", {{"dimm", 3}}}}).find("dimm") != std::string::npos);
  CHECK(message({{"ada", {{"nets", {{"width", 3}}}}}}).find("nets.width") != std::string::npos);
  CHECK(message({{"eval", {{"prototype_samples", "many"}}}}).find("eval.prototype_samples") != std::string::npos);
  CHECK(message({{"variant", "best"}}).find("best") != std::string::npos);
}

TEST_CASE("synth writes the canonical files reproducibly") {
  test::TempDir tmp;
  const auto cfg = write_json(tmp.path() / "w.json", {{"world", tiny_world()}});
  const auto a = tmp.path() / "a", b = tmp.path() / "b";
  REQUIRE(zsl({"synth", "--config", cfg.string(), "--out", a.string()}).code == 0);
  REQUIRE(zsl({"synth", "--config", cfg.string(), "--out", b.string()}).code == 0);
  for (const char* f : {"features.csv", "attributes.csv", "split.json", "truth.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::exists(a / "resolved_config.json"));

  const auto c = tmp.path() / "c";
  REQUIRE(zsl({"synth", "--config", cfg.string(), "--seed", "101", "--out", c.string()}).code == 0);
  CHECK(slurp(a / "features.csv") != slurp(c / "features.csv"));
}

TEST_CASE("synth rejects bad specs with exit 2") {
  test::TempDir tmp;
  const auto bad = write_json(tmp.path() / "bad.json", {{"world", {{"samples_per_klass", 10}}}});
  auto r = zsl({"synth", "--config", bad.string(), "--out", (tmp.path() / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("samples_per_klass") != std::string::npos);

  std::ofstream(tmp.path() / "broken.json") << "{\"world\": {\"dim\": 4,";
  r = zsl({"synth", "--config", (tmp.path() / "broken.json").string(), "--out", (tmp.path() / "o").string()});
  CHECK(r.code == 2);

  const auto infeasible = write_json(tmp.path() / "inf.json", {{"world", {{"dim", 4}, {"seen", -1}}}});
  CHECK(zsl({"synth", "--config", infeasible.string(), "--out", (tmp.path() / "o").string()}).code == 2);
  CHECK(zsl({"synth"}).code == 2);
  CHECK(zsl({}).code == 2);
  CHECK(zsl({"frobnicate"}).code == 2);
}

TEST_CASE("pretrain reports unseen accuracy and reruns identically") {
  Pipeline p(json::object());
  const auto r1 = zsl({"pretrain", "--config", p.config.string(), "--data", p.world.string(), "--out",
                       (p.tmp.path() / "b2").string()});
  const auto r2 = zsl({"pretrain", "--config", p.config.string(), "--data", p.world.string(), "--out",
                       (p.tmp.path() / "b3").string()});
  REQUIRE(r1.code == 0);
  CHECK(r1.out == r2.out);
  CHECK(std::stod(printed(r1.out, "inductive_unseen_acc")) >= 0.90);
  CHECK(slurp(p.tmp.path() / "b2" / "inductive.csv") == slurp(p.tmp.path() / "b3" / "inductive.csv"));
  CHECK(slurp(p.tmp.path() / "b2" / "mean_net.bin") == slurp(p.tmp.path() / "b3" / "mean_net.bin"));
  const auto trace = data::read_lines((p.tmp.path() / "b2" / "loss_trace.csv").string());
  CHECK(trace.size() > 1);
}

TEST_CASE("pretrain input errors exit 2, divergence exits 3") {
  Pipeline p(tiny_run());
  const auto broken = p.tmp.path() / "noattr";
  fs::copy(p.world, broken);
  fs::remove(broken / "attributes.csv");
  CHECK(zsl({"pretrain", "--data", broken.string(), "--out", (p.tmp.path() / "x").string()}).code == 2);
  CHECK(zsl({"pretrain", "--data", p.world.string()}).code == 2);

  // One enormous training feature overflows the log-likelihood.
  const auto wild = p.tmp.path() / "wild";
  fs::copy(p.world, wild);
  const auto split = cli::read_json_file((wild / "split.json").string());
  const auto row = split["train_rows"][0].get<std::size_t>();
  auto lines = data::read_lines((wild / "features.csv").string());
  std::string& line = lines[row + 1];
  const auto comma = line.find(',');
  line = line.substr(0, comma) + ",1e300" + line.substr(line.find(',', comma + 1));
  std::ofstream f(wild / "features.csv");
  for (const auto& l : lines) f << l << "\n";
  f.close();
  const auto r = zsl({"pretrain", "--data", wild.string(), "--out", (p.tmp.path() / "y").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("NON_FINITE") != std::string::npos);
}

TEST_CASE("adapt writes logs and metrics, honoring seed 100 by default") {
  Pipeline p;
  const auto r = p.adapt("full");
  REQUIRE(r.code == 0);
  const auto dir = p.tmp.path() / "full";
  for (const char* f : {"iteration_log.csv", "m1.csv", "m2.csv", "resolved_config.json", "ada/ada.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
  const auto snap = cli::read_json_file((dir / "resolved_config.json").string());
  CHECK(snap["seed"] == 100);
  CHECK(snap["ada"]["seed"] == 100);
  CHECK(printed(r.out, "M1") != "NA");
  CHECK(printed(r.out, "M2") != "NA");
  CHECK(!printed(r.out, "pseudo_label_agreement").empty());
  CHECK(data::read_lines((dir / "iteration_log.csv").string()).size() == 31);

  const auto again = p.adapt("full2", {"--seed", "100"});
  CHECK(again.out == r.out);
  CHECK(slurp(dir / "m1.csv") == slurp(p.tmp.path() / "full2" / "m1.csv"));
}

TEST_CASE("adapt variants print NA for metrics they lack") {
  Pipeline p;
  auto r = p.adapt("std", {"--variant", "std-da"});
  REQUIRE(r.code == 0);
  CHECK(printed(r.out, "M2") == "NA");
  CHECK(printed(r.out, "M1") != "NA");
  CHECK(!fs::exists(p.tmp.path() / "std" / "m2.csv"));

  r = p.adapt("cyc", {"--variant", "cyclegan-wo"});
  REQUIRE(r.code == 0);
  CHECK(printed(r.out, "M1") == "NA");
  CHECK(printed(r.out, "M2") != "NA");

  r = p.adapt("all", {"--variant", "all"});
  REQUIRE(r.code == 0);
  const auto lines = data::read_lines((p.tmp.path() / "all" / "ablation.csv").string());
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "method,variant,M1,M2");
  CHECK(lines[1].substr(0, 7) == "Std DA,");
  CHECK(lines[1].substr(lines[1].size() - 3) == ",NA");
  CHECK(lines[3].find(",NA,") != std::string::npos);
  CHECK(r.out.find("NA") != std::string::npos);

  CHECK(p.adapt("nope", {"--variant", "best"}).code == 2);
}

TEST_CASE("eval writes one report per metric with the documented schema") {
  Pipeline p;
  REQUIRE(p.adapt("run").code == 0);
  const auto out = p.tmp.path() / "ev";
  const auto r = zsl({"eval", "--data", p.world.string(), "--base", p.base.string(), "--adapted",
                      (p.tmp.path() / "run" / "ada").string(), "--metric", "all", "--out", out.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"inductive.csv", "m1.csv", "m2.csv"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(out / f));
    const auto lines = data::read_lines((out / f).string());
    CHECK(lines.front() == "class_id,n,correct,acc");
    CHECK(lines.back().substr(0, 5) == "MEAN,");
  }
  // eval reproduces the numbers adapt reported.
  CHECK(slurp(out / "m1.csv") == slurp(p.tmp.path() / "run" / "m1.csv"));
  CHECK(slurp(out / "m2.csv") == slurp(p.tmp.path() / "run" / "m2.csv"));

  const auto only = zsl({"eval", "--data", p.world.string(), "--base", p.base.string(), "--metric", "inductive",
                         "--out", (p.tmp.path() / "ev2").string()});
  CHECK(only.code == 0);
  CHECK(fs::exists(p.tmp.path() / "ev2" / "inductive.csv"));
  CHECK(!fs::exists(p.tmp.path() / "ev2" / "m1.csv"));
}

TEST_CASE("eval rejects unknown metrics and mismatched inputs") {
  Pipeline p;
  auto r = zsl({"eval", "--data", p.world.string(), "--base", p.base.string(), "--metric", "top5", "--out",
                (p.tmp.path() / "e").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);

  // Same attributes, wider features.
  const auto wide = p.tmp.path() / "wide";
  fs::copy(p.world, wide);
  auto lines = data::read_lines((wide / "features.csv").string());
  std::ofstream f(wide / "features.csv");
  f << lines[0] << ",f4\n";
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) f << lines[i] << ",0.5\n";
  f.close();
  r = zsl({"eval", "--data", wide.string(), "--base", p.base.string(), "--out", (p.tmp.path() / "e").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("DIMENSION_MISMATCH") != std::string::npos);

  // A base model trained on another world.
  json other = tiny_run();
  other["world"]["seed"] = 55;
  Pipeline q(other);
  r = zsl({"eval", "--data", p.world.string(), "--base", q.base.string(), "--out", (p.tmp.path() / "e").string()});
  CHECK(r.code == 2);

  CHECK(zsl({"eval", "--data", p.world.string(), "--base", p.base.string(), "--metric", "m1", "--out",
             (p.tmp.path() / "e").string()})
            .code == 2);
}

TEST_CASE("export writes generated, real and transformed blocks") {
  Pipeline p;
  REQUIRE(p.adapt("run").code == 0);
  const auto r = zsl({"export", "--data", p.world.string(), "--base", p.base.string(), "--adapted",
                      (p.tmp.path() / "run" / "ada").string(), "--out", (p.tmp.path() / "ex").string()});
  REQUIRE(r.code == 0);
  const auto blocks = data::read_embeddings(p.tmp.path() / "ex" / "embeddings.csv");
  REQUIRE(blocks.size() == 3);
  CHECK(blocks[0].origin == data::Origin::generated);
  CHECK(blocks[1].origin == data::Origin::real);
  CHECK(blocks[2].origin == data::Origin::transformed);
  CHECK(blocks[0].features.rows() == 3 * 500);
  CHECK(blocks[1].features.rows() == 3 * 120);
  CHECK(blocks[2].labels == blocks[0].labels);
}

TEST_CASE("a pipeline replayed from its snapshots gives identical metric files") {
  Pipeline p;
  REQUIRE(p.adapt("run").code == 0);
  const auto snap = p.tmp.path() / "run" / "resolved_config.json";
  json replay = cli::read_json_file(snap.string());
  replay["out"] = (p.tmp.path() / "replay").string();
  const auto cfg = write_json(p.tmp.path() / "replay.json", replay);
  REQUIRE(zsl({"adapt", "--config", cfg.string()}).code == 0);
  for (const char* f : {"m1.csv", "m2.csv", "iteration_log.csv"}) {
    CAPTURE(f);
    CHECK(slurp(p.tmp.path() / "run" / f) == slurp(p.tmp.path() / "replay" / f));
  }
}

TEST_CASE("help exits 0") {
  const auto r = zsl({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("adapt") != std::string::npos);
}

TEST_CASE("adapt on a shifted world beats the agreement it prints") {
  json run;
  run["world"]["shift"] = {{"kind", "affine"}, {"magnitude", 10.0}, {"direction", "nearest_pair"}};
  Pipeline p(run);
  const auto r = p.adapt("full");
  REQUIRE(r.code == 0);
  const double agreement = std::stod(printed(r.out, "pseudo_label_agreement"));
  CHECK(agreement < 0.95);
  CHECK(std::stod(printed(r.out, "M1")) >= agreement);
}
