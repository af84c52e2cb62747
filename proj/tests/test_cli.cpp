#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctssg/commands.hpp"
#include "ctssg/config.hpp"
#include "ctssg/errors.hpp"

using namespace ctssg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctssg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code = 0;
  std::string output;
};

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string(CTSSG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

const char* kSmallConfig = R"({
  "name": "small",
  "seeds": [0],
  "synth": {"S": 12, "H": 8, "W": 8,
            "labels": [{"band": [0, 1], "pattern": "blob", "amplitude": 0.5},
                       {"band": [2, 3], "pattern": "alternating_intensity", "amplitude": 0.3}]},
  "graph": {"receptive_field": 1},
  "encoder": {"latent": 8},
  "train": {"max_steps": 10, "eval_every": 5, "warmup_steps": 2, "batch_size": 2},
  "data": {"train": 12, "val": 6, "test": 6}
})";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = experiment_config_from_json(nlohmann::json::parse(kSmallConfig));
  CHECK(cfg.encoder.slices == 12);
  CHECK(cfg.encoder.labels == 2);
  CHECK(cfg.graph.nodes == 4);
  CHECK(cfg.train.max_steps == 10);
  CHECK(experiment_config_from_json(to_json(cfg)).encoder.latent == 8);

  auto bad = nlohmann::json::parse(kSmallConfig);
  bad["encoder"]["latnet"] = 8;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ValidationError);
  bad = nlohmann::json::parse(kSmallConfig);
  bad["graph"]["receptive_field"] = 0;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ValidationError);
  bad = nlohmann::json::parse(kSmallConfig);
  bad["graph"]["s_z_mm"] = 0.75;
  bad["graph"]["s_z_dm"] = 0.0075;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ValidationError);
  bad = nlohmann::json::parse(kSmallConfig);
  bad["train"]["lr"] = "fast";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ValidationError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), LoadError);
}

TEST_CASE("ablation settings") {
  const ExperimentConfig base = experiment_config_from_json(nlohmann::json::parse(kSmallConfig));
  CHECK(apply_ablation(base, "K", "5").encoder.filter_size == 5);
  CHECK(apply_ablation(base, "L", "3").encoder.blocks == 3);
  CHECK(apply_ablation(base, "topology", "fully_connected").graph.topology == Topology::kFullyConnected);
  CHECK(apply_ablation(base, "components", "no_positional").encoder.positional == false);
  CHECK_THROWS_AS(apply_ablation(base, "depth", "3"), ValidationError);
  CHECK_THROWS_AS(apply_ablation(base, "components", "no_head"), ValidationError);
  CHECK(default_ablation_values(base, "q") == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("perturbation grids") {
  const auto shifts = default_grid(PerturbationMode::kZShift, 24);
  CHECK(shifts == std::vector<double>{-23, -11, 0, 11, 23});
  CHECK(default_grid(PerturbationMode::kNoise, 24).size() == 8);
  CHECK_THROWS_AS(validate_grid(PerturbationMode::kZShift, {31}, 64), ValidationError);
  CHECK_THROWS_AS(validate_grid(PerturbationMode::kZShift, {1.5}, 24), ValidationError);
  CHECK_THROWS_AS(validate_grid(PerturbationMode::kNoise, {0.08}, 24), ValidationError);
  CHECK_THROWS_AS(perturbation_mode_from_string("rotate"), ValidationError);
}

TEST_CASE("cli: gen-data") {
  const fs::path dir = scratch("gen");
  const fs::path cfg = write_config(dir, kSmallConfig);
  const std::string base = "gen-data --config " + cfg.string() + " --out ";
  CHECK(cli(base + (dir / "empty").string() + " --count 0", dir).code == 0);

  REQUIRE(cli(base + (dir / "a").string() + " --count 5", dir).code == 0);
  REQUIRE(cli(base + (dir / "b").string() + " --count 5", dir).code == 0);
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }
  const Run refused = cli(base + (dir / "a").string() + " --count 5", dir);
  CHECK(refused.code != 0);
  CHECK(refused.output.find("--force") != std::string::npos);
  CHECK(cli(base + (dir / "a").string() + " --count 5 --force", dir).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli: errors and exit codes") {
  const fs::path dir = scratch("errors");
  auto j = nlohmann::json::parse(kSmallConfig);
  j["graph"]["receptive_field"] = 0;
  const fs::path bad = write_config(dir, j.dump());
  const Run r = cli("train --config " + bad.string() + " --out " + (dir / "run").string(), dir);
  CHECK(r.code == kExitFailure);
  CHECK(r.output.find("receptive field") != std::string::npos);

  const fs::path good = write_config(dir, kSmallConfig);
  CHECK(cli("ablate --config " + good.string() + " --axis depth --out " + dir.string(), dir).code == kExitUsage);
  CHECK(cli("robustness --config " + good.string() + " --mode rotate --out " + dir.string(), dir).code ==
        kExitUsage);
  CHECK(cli("oracle-check --suite nonsense", dir).code == kExitUsage);
  CHECK(cli("no-such-command", dir).code != 0);
  fs::remove_all(dir);
}

TEST_CASE("cli: train, eval and robustness on a small config") {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir, kSmallConfig);
  const fs::path run = dir / "run";
  REQUIRE(cli("train --config " + cfg.string() + " --out " + run.string(), dir).code == 0);
  for (const char* f : {"config.json", "graph.json", "history.csv", "report.json", "checkpoint"}) {
    CHECK(fs::exists(run / f));
  }
  const Run ev = cli("eval --config " + cfg.string() + " --out " + run.string(), dir);
  CHECK(ev.code == 0);
  CHECK(ev.output.find("macro_f1") != std::string::npos);
  CHECK(cli("robustness --config " + cfg.string() + " --mode noise --grid 0,0.05 --out " + run.string(), dir)
            .code == 0);
  CHECK(fs::exists(run / "robustness_noise.csv"));

  auto other = nlohmann::json::parse(kSmallConfig);
  other["encoder"]["latent"] = 16;
  const fs::path cfg2 = dir / "other.json";
  std::ofstream(cfg2) << other.dump();
  const Run mismatch = cli("eval --config " + cfg2.string() + " --out " + run.string(), dir);
  CHECK(mismatch.code == kExitFailure);
  CHECK(mismatch.output.find("hash") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: oracle-check") {
  const fs::path dir = scratch("oracle");
  const Run r = cli("oracle-check --suite cheb --suite metrics", dir);
  CHECK(r.code == 0);
  CHECK(r.output.find("cheb: PASS") != std::string::npos);
  fs::remove_all(dir);
}
