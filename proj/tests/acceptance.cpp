// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "ctssg/commands.hpp"
#include "ctssg/config.hpp"
#include "ctssg/encoder.hpp"
#include "ctssg/errors.hpp"
#include "ctssg/kernels/parallel.hpp"
#include "ctssg/oracles.hpp"
#include "ctssg/trainer.hpp"

using namespace ctssg;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctssg_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

/// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

/// Column `name` of a CSV written by the harness.
std::vector<std::string> csv_column(const fs::path& p, const std::string& name) {
  std::istringstream in(slurp(p));
  std::string line, cell;
  std::getline(in, line);
  std::istringstream header(line);
  std::size_t col = 0, idx = std::string::npos;
  while (std::getline(header, cell, ',')) {
    if (cell == name) idx = col;
    ++col;
  }
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    for (std::size_t c = 0; std::getline(row, cell, ','); ++c) {
      if (c == idx) out.push_back(cell);
    }
  }
  return out;
}

Outcome suite_criterion(const std::function<oracle::SuiteResult()>& run, double budget_s = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  const oracle::SuiteResult r = run();
  const double t = seconds_since(t0);
  if (budget_s <= 0.0) return {r.passed, r.detail};
  return {r.passed && t < budget_s, r.detail + ", " + num(t) + " s (limit " + num(budget_s) + " s)"};
}

Outcome edge_weight_contract() {
  if (edge_weight(4, 4, 0.0075) != 2.0) return {false, "w(0) != 2"};
  const double w1 = edge_weight(0, 1, 0.0075);
  const double direct = 1.0 + 1.0 / (1.0 + 3.0 * 1.0 * 0.0075);
  if (std::abs(w1 - direct) >= 1e-9) return {false, "w(1, 0.0075) = " + std::to_string(w1)};
  for (std::size_t g = 1; g < 100; ++g) {
    if (!(edge_weight(0, g, 0.0075) < edge_weight(0, g - 1, 0.0075))) {
      return {false, "not decreasing in |i-j| at " + std::to_string(g)};
    }
  }
  for (int k = 1; k < 100; ++k) {
    const double s0 = 0.001 + 0.001 * (k - 1), s1 = 0.001 + 0.001 * k;
    if (!(edge_weight(0, 1, s1) < edge_weight(0, 1, s0))) return {false, "not decreasing in s_z"};
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "w(1, 0.0075) = %.9f", w1);
  return {true, buf};
}

Outcome locality() {
  std::mt19937_64 rng(21);
  std::size_t probes = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 3 + rng() % 10;  // 3..12
    GraphConfig g;
    g.nodes = n;
    g.receptive_field = 1 + rng() % std::min<std::size_t>(3, n - 1);
    const bool full = rep % 5 == 4;
    if (full) g.topology = Topology::kFullyConnected;
    EncoderConfig c;
    c.slices = 3 * n;
    c.height = 4;
    c.width = 4;
    c.latent = 5;
    c.labels = 2;
    c.filter_size = full ? 2 + rng() % 3 : 1 + rng() % 4;
    const EncoderParams p = init_params(c, rng());
    const SliceGraph graph = build_graph(g);
    const BlockGraph bg = block_graph_tensors(graph);
    const auto hops = hop_distances(graph);
    const auto changed = oracle::influence(
        [&](const Tensor& h) { return spectral_block(c, h, bg, p.blocks[0]); },
        Tensor({n, c.latent}, std::vector<double>(n * c.latent, 0.1)), rng());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const bool expected = hops[i][j] >= 0 && std::size_t(hops[i][j]) <= c.filter_size - 1;
        if (changed[i][j] != expected) {
          return {false, "N=" + std::to_string(n) + " K=" + std::to_string(c.filter_size) + " pair (" +
                             std::to_string(i) + ", " + std::to_string(j) + ")"};
        }
        ++probes;
      }
    }
  }
  return {true, std::to_string(probes) + " (i, j) probes"};
}

json desk_config(std::size_t steps) {
  json j = to_json(default_experiment_config());
  j["train"]["max_steps"] = steps;
  return j;
}

Outcome learning_sanity(const fs::path& root) {
  const ExperimentConfig base = default_experiment_config();
  const auto vols = generate(base.synth, 500, 100000);
  std::vector<double> pred, truth;
  for (const auto& v : vols) {
    const auto d = oracle::matched_filter(base.synth, v.voxels);
    pred.insert(pred.end(), d.begin(), d.end());
    truth.insert(truth.end(), v.labels.begin(), v.labels.end());
  }
  const MetricsReport mf = evaluate_metrics(pred, truth, 500, base.synth.labels.size());
  double worst = 1.0;
  for (const auto& l : mf.per_label) worst = std::min(worst, l.f1.value_or(0.0));
  if (worst < 0.99) return {false, "matched-filter F1 " + num(worst)};

  kernels::parallel::set_threads(1);
  CliOptions opt;
  opt.out = root / "train";
  std::ostringstream out, err;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cmd_train(opt, out, err);
  const double t = seconds_since(t0);
  kernels::parallel::set_threads(0);
  if (code != kExitOk) return {false, "train failed: " + err.str()};
  const json report = read_json(opt.out / "report.json");
  const double f1 = report["val"]["macro_f1"];
  const std::size_t steps = report["steps"];

  // lr = 0 through the same trainer.
  ExperimentConfig zero = default_experiment_config();
  zero.train.lr = 0.0;
  zero.train.max_steps = 50;
  zero.train.eval_every = 25;
  zero.train.warmup_steps = 10;
  zero.data = {40, 10, 0, {}};
  const Splits data = load_splits(zero);
  const SpectralEncoder enc = make_encoder(zero);
  const EncoderParams init = init_params(zero.encoder, 0);
  const Trainer trainer(enc, zero.train);
  TrainState st = trainer.initial_state(init.clone());
  trainer.run(st, data.train, data.val);
  bool identical = true;
  const auto a = st.params.tensors(), b = init.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) {
    identical = identical && std::equal(a[k].values().begin(), a[k].values().end(), b[k].values().begin());
  }

  const bool pass = f1 >= 0.85 && steps <= 2000 && t <= 300.0 && identical;
  return {pass, "matched-filter F1 " + num(worst) + ", val macro-F1 " + num(f1) + " in " +
                    std::to_string(steps) + " steps, " + num(t) + " s on 1 thread, lr=0 params " +
                    (identical ? "unchanged" : "CHANGED")};
}

Outcome determinism(const fs::path& root) {
  const fs::path cfg = write_config(root, desk_config(300));
  // Same config, seed and output path, run twice from scratch.
  std::map<std::string, std::string> runs[2];
  for (int r = 0; r < 2; ++r) {
    CliOptions opt;
    opt.config = cfg;
    opt.out = root / "run";
    fs::remove_all(opt.out);
    opt.seeds = {7};
    std::ostringstream out, err;
    if (cmd_train(opt, out, err) != kExitOk) return {false, "train failed: " + err.str()};
    opt.mode = "noise";
    if (cmd_robustness(opt, out, err) != kExitOk) return {false, "robustness failed: " + err.str()};
    runs[r] = tree(opt.out);
  }
  if (runs[0].size() != runs[1].size()) return {false, "different file sets"};
  for (const auto& [name, bytes] : runs[0]) {
    if (runs[1][name] != bytes) return {false, name + " differs"};
  }
  return {true, std::to_string(runs[0].size()) + " files byte-identical"};
}

Outcome robustness_contract(const fs::path& root) {
  const fs::path run = root / "run";  // written by the determinism check
  ExperimentConfig cfg = load_experiment_config(root / "config.json");
  const Splits data = load_splits(cfg);
  const SpectralEncoder enc = make_encoder(cfg);
  const LoadedCheckpoint ckpt = load_checkpoint(run / "checkpoint", cfg.encoder, model_json(cfg));
  const auto base = predict_probabilities(enc, ckpt.params, data.test);
  const std::string base_json = evaluate(enc, ckpt.params, data.test).to_json().dump();
  for (PerturbationMode mode : {PerturbationMode::kZShift, PerturbationMode::kNoise}) {
    const auto grid = default_grid(mode, cfg.synth.slices);
    validate_grid(mode, grid, cfg.synth.slices);
    for (double g : grid) {
      const bool in_range = mode == PerturbationMode::kZShift ? (g >= -30 && g <= 30)
                                                              : (g == 0.0 || (g >= 0.01 && g <= 0.07));
      if (!in_range) return {false, "grid point " + num(g) + " out of range"};
    }
    const auto zero = perturb(data.test, mode, 0.0, 7);
    if (predict_probabilities(enc, ckpt.params, zero) != base) return {false, "zero point differs"};
    if (evaluate(enc, ckpt.params, zero).to_json().dump() != base_json) return {false, "zero report differs"};
  }
  for (auto [mode, g] : {std::pair{PerturbationMode::kZShift, 31.0}, {PerturbationMode::kNoise, 0.08},
                         {PerturbationMode::kNoise, -0.01}}) {
    try {
      validate_grid(mode, {g}, 64);
      return {false, "grid point " + num(g) + " accepted"};
    } catch (const ValidationError&) {
    }
  }

  // The CSV row at 0 carries the unperturbed numbers.
  CliOptions opt;
  opt.config = root / "config.json";
  opt.out = run;
  opt.mode = "zshift";
  std::ostringstream out, err;
  if (cmd_robustness(opt, out, err) != kExitOk) return {false, err.str()};
  const auto pert = csv_column(run / "robustness_zshift.csv", "perturbation");
  const auto f1 = csv_column(run / "robustness_zshift.csv", "macro_f1");
  const std::string unperturbed = out.str();
  for (std::size_t i = 0; i < pert.size(); ++i) {
    if (pert[i] == "0" && unperturbed.find("unperturbed macro_f1 " + f1[i]) == std::string::npos) {
      return {false, "CSV zero row " + f1[i] + " vs " + unperturbed};
    }
  }
  return {true, "zero-shift and zero-noise outputs identical; grids within range"};
}

Outcome ablation_contract(const fs::path& root) {
  json j = desk_config(20);
  j["train"]["eval_every"] = 10;
  j["train"]["warmup_steps"] = 5;
  j["data"] = {{"train", 24}, {"val", 8}, {"test", 8}};
  j["seeds"] = {0, 1};
  const fs::path cfg = write_config(root, j);
  const std::map<std::string, std::vector<std::string>> axes = {
      {"K", {"1", "3", "5"}},
      {"L", {"1", "3", "5"}},
      {"topology", {"sparse", "fully_connected"}},
      {"operator", {"chebyshev", "graph_conv"}}};
  std::string detail;
  for (const auto& [axis, values] : axes) {
    CliOptions opt;
    opt.config = cfg;
    opt.out = root / "ablate";
    opt.axis = axis;
    opt.values = values;
    std::ostringstream out, err;
    if (cmd_ablate(opt, out, err) != kExitOk) return {false, axis + ": " + err.str()};
    const fs::path csv = opt.out / ("ablate_" + axis + ".csv");
    const auto seeds = csv_column(csv, "seed");
    const auto params = csv_column(csv, "parameters");
    if (seeds.size() != values.size() * 2) return {false, axis + ": expected one row per value and seed"};
    for (const auto& v : values) {
      for (const char* s : {"seed_0", "seed_1"}) {
        if (!fs::exists(opt.out / ("ablate_" + axis) / v / s / "history.csv")) {
          return {false, axis + "=" + v + " " + s + " has no history.csv"};
        }
      }
    }
    if (axis == "K" || axis == "L") {
      for (std::size_t i = 2; i < params.size(); i += 2) {
        if (!(std::stoull(params[i]) > std::stoull(params[i - 2]))) {
          return {false, axis + ": parameter count not increasing"};
        }
      }
      detail += axis + " params " + params[0] + "<" + params[2] + "<" + params[4] + "; ";
    }
  }
  return {true, detail + "all sweeps emitted per-seed runs and CSVs"};
}

}  // namespace

int main() {
  const fs::path root = scratch("runs");
  int failures = 0;
  const auto report = [&](int n, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")"
              << std::endl;
  };
  report(1, [] { return suite_criterion([] { return oracle::cheb_suite(); }, 10.0); });
  report(2, [] { return suite_criterion([] { return oracle::laplacian_suite(); }, 10.0); });
  report(3, edge_weight_contract);
  report(4, [] { return suite_criterion([] { return oracle::grad_suite(); }, 60.0); });
  report(5, locality);
  report(6, [] { return suite_criterion([] { return oracle::metrics_suite(); }); });
  report(7, [&] { return learning_sanity(root / "c7"); });
  fs::create_directories(root / "c8");
  report(8, [&] { return determinism(root / "c8"); });
  report(9, [&] { return robustness_contract(root / "c8"); });
  fs::create_directories(root / "c10");
  report(10, [&] { return ablation_contract(root / "c10"); });
  fs::remove_all(root);
  return failures == 0 ? 0 : 1;
}
