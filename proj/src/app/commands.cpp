#include "ctssg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "ctssg/errors.hpp"
#include "ctssg/oracles.hpp"

namespace ctssg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot write " + path.string());
  f << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

ExperimentConfig config_for(const CliOptions& opt) {
  return opt.config.empty() ? default_experiment_config() : load_experiment_config(opt.config);
}

std::vector<std::uint64_t> seeds_for(const CliOptions& opt, const ExperimentConfig& cfg) {
  return opt.seeds.empty() ? cfg.seeds : opt.seeds;
}

fs::path out_for(const CliOptions& opt, const ExperimentConfig& cfg) {
  return opt.out.empty() ? cfg.out_dir : opt.out;
}

const std::vector<SyntheticVolume>& eval_split(const Splits& s) {
  if (s.test.empty()) throw ValidationError("the test split is empty (set data.test)");
  return s.test;
}

// Runs a command body, turning library errors into a message and exit code.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace

Splits load_splits(const ExperimentConfig& cfg) {
  const std::size_t total = cfg.data.total();
  std::vector<SyntheticVolume> all;
  if (cfg.data.dir.empty()) {
    all = generate(cfg.synth, total);
  } else {
    all = read_dataset(cfg.data.dir);
    if (all.size() < total) {
      throw ValidationError("dataset " + cfg.data.dir.string() + " holds " + std::to_string(all.size()) +
                            " volumes, the splits need " + std::to_string(total));
    }
    const Shape expected{cfg.encoder.slices, cfg.encoder.height, cfg.encoder.width};
    for (const SyntheticVolume& v : all) {
      if (v.voxels.shape() != expected || v.labels.size() != cfg.encoder.labels) {
        throw DimensionError("dataset volume " + std::to_string(v.index) + " has shape " +
                             shape_string(v.voxels.shape()) + " and " + std::to_string(v.labels.size()) +
                             " labels; the config expects " + shape_string(expected) + " and " +
                             std::to_string(cfg.encoder.labels));
      }
    }
  }
  Splits s;
  auto begin = all.begin();
  s.train.assign(begin, begin + long(cfg.data.train));
  begin += long(cfg.data.train);
  s.val.assign(begin, begin + long(cfg.data.val));
  begin += long(cfg.data.val);
  s.test.assign(begin, begin + long(cfg.data.test));
  return s;
}

SpectralEncoder make_encoder(const ExperimentConfig& cfg) {
  return SpectralEncoder(cfg.encoder, cfg.graph, cfg.per_layer_q);
}

TrainOutcome train_run(const ExperimentConfig& cfg, std::uint64_t seed, const Splits& data,
                       const fs::path& out, bool resume, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const SpectralEncoder encoder = make_encoder(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const Trainer trainer(encoder, tc);
  const json model = model_json(cfg);

  TrainOutcome r;
  if (resume) {
    if (out.empty()) throw ValidationError("resuming needs an output directory");
    r.state = load_train_state(out / "state", cfg.encoder, model);
    log << "resuming at step " << r.state.step << '\n';
  } else {
    r.state = trainer.initial_state(init_params(cfg.encoder, seed));
  }
  r.parameters = r.state.params.parameter_count();
  json graphs = json::array();
  for (std::size_t b = 0; b < cfg.encoder.blocks; ++b) {
    r.edges.push_back(encoder.graph(b).edges.size());
    graphs.push_back(graph_to_json(encoder.graph(b)));
  }

  if (!out.empty()) {
    fs::create_directories(out);
    ExperimentConfig resolved = cfg;
    resolved.seeds = {seed};
    resolved.train.seed = seed;
    resolved.out_dir = out;
    write_text(out / "config.json", to_json(resolved).dump(2) + "\n");
    write_text(out / "graph.json", (graphs.size() == 1 ? graphs[0] : graphs).dump(2) + "\n");
  }

  trainer.run(r.state, data.train, data.val, [&](const TrainState& st) {
    const HistoryRow& h = st.history.back();
    log << "step " << h.step << " loss " << fmt(h.train_loss) << " val_macro_f1 "
        << fmt(h.val_macro_f1) << " val_auroc " << fmt(h.val_auroc) << " ("
        << fmt(seconds_since(t0)) << " s)\n";
    if (!out.empty()) save_train_state(out / "state", st, model);
  });

  r.best_val = evaluate(encoder, r.state.best_params, data.val, tc.threshold);
  if (!data.test.empty()) r.test = evaluate(encoder, r.state.best_params, data.test, tc.threshold);
  r.seconds = seconds_since(t0);

  if (!out.empty()) {
    write_text(out / "history.csv", history_csv(r.state.history));
    save_checkpoint(out / "checkpoint", r.state.best_params, model,
                    {{"seed", seed}, {"step", r.state.best_step}, {"val_macro_f1", r.state.best_f1}});
    json report = {{"seed", seed},
                   {"steps", r.state.step},
                   {"best_step", r.state.best_step},
                   {"parameter_count", r.parameters},
                   {"edges", r.edges},
                   {"val", r.best_val.to_json()}};
    if (r.test) report["test"] = r.test->to_json();
    write_text(out / "report.json", report.dump(2) + "\n");
  }
  return r;
}

ExperimentConfig apply_ablation(const ExperimentConfig& base, const std::string& axis,
                                const std::string& value) {
  ExperimentConfig cfg = base;
  auto as_count = [&](const std::string& v) {
    std::size_t used = 0;
    unsigned long n = 0;
    try {
      n = std::stoul(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) {
      throw ValidationError("axis " + axis + " expects a positive integer, got '" + v + "'");
    }
    return std::size_t(n);
  };
  if (axis == "K") {
    cfg.encoder.filter_size = as_count(value);
  } else if (axis == "q") {
    cfg.graph.receptive_field = as_count(value);
    cfg.graph.topology = Topology::kSparse;
    cfg.per_layer_q.clear();
  } else if (axis == "L") {
    cfg.encoder.blocks = as_count(value);
    cfg.per_layer_q.clear();
  } else if (axis == "operator") {
    cfg.encoder.op = graph_operator_from_string(value);
  } else if (axis == "topology") {
    cfg.graph.topology = topology_from_string(value);
    cfg.per_layer_q.clear();
  } else if (axis == "components") {
    if (value == "full") {
    } else if (value == "no_positional") {
      cfg.encoder.positional = false;
    } else if (value == "unit_weights") {
      cfg.graph.weighting = EdgeWeighting::kUnit;
    } else if (value == "no_residual") {
      cfg.encoder.residual = false;
    } else if (value == "no_layer_norm") {
      cfg.encoder.layer_norm = false;
    } else if (value == "fully_connected") {
      cfg.graph.topology = Topology::kFullyConnected;
      cfg.per_layer_q.clear();
    } else {
      throw ValidationError("unknown components value '" + value +
                            "' (full, no_positional, unit_weights, no_residual, no_layer_norm, "
                            "fully_connected)");
    }
  } else {
    throw ValidationError("unknown ablation axis '" + axis + "' (K, q, L, operator, topology, components)");
  }
  cfg.resolve();
  return cfg;
}

std::vector<std::string> default_ablation_values(const ExperimentConfig& cfg, const std::string& axis) {
  if (axis == "K" || axis == "L") return {"1", "3", "5"};
  if (axis == "q") {
    std::set<std::size_t> qs{1, cfg.graph.receptive_field, cfg.graph.nodes / 2, cfg.graph.nodes - 1};
    std::vector<std::string> v;
    for (std::size_t q : qs) {
      if (q >= 1 && q <= cfg.graph.nodes - 1) v.push_back(std::to_string(q));
    }
    return v;
  }
  if (axis == "operator") return {"chebyshev", "graph_conv"};
  if (axis == "topology") return {"sparse", "fully_connected"};
  if (axis == "components") {
    return {"full", "no_positional", "unit_weights", "no_residual", "no_layer_norm", "fully_connected"};
  }
  throw ValidationError("unknown ablation axis '" + axis + "' (K, q, L, operator, topology, components)");
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string s = "axis_value,seed,macro_f1,auroc,map,accuracy,parameters,edges\n";
  for (const AblationRow& r : rows) {
    s += r.axis_value + "," + std::to_string(r.seed) + "," + fmt(r.report.macro_f1) + "," +
         fmt(r.report.macro_auroc) + "," + fmt(r.report.mean_average_precision) + "," +
         fmt(r.report.macro_accuracy) + "," + std::to_string(r.parameters) + "," +
         std::to_string(r.edges) + "\n";
  }
  return s;
}

PerturbationMode perturbation_mode_from_string(const std::string& s) {
  if (s == "zshift") return PerturbationMode::kZShift;
  if (s == "noise") return PerturbationMode::kNoise;
  throw ValidationError("unknown robustness mode '" + s + "' (zshift or noise)");
}

std::vector<double> default_grid(PerturbationMode mode, std::size_t slices) {
  if (mode == PerturbationMode::kNoise) return {0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07};
  const double m = double(std::min<std::size_t>(30, slices - 1));
  const double h = std::floor(m / 2);
  return {-m, -h, 0.0, h, m};
}

void validate_grid(PerturbationMode mode, const std::vector<double>& grid, std::size_t slices) {
  if (grid.empty()) throw ValidationError("robustness grid is empty");
  for (double g : grid) {
    if (mode == PerturbationMode::kZShift) {
      if (g != std::floor(g) || std::abs(g) > 30.0) {
        throw ValidationError("z-shift " + fmt(g) + " is not a whole number of slices in [-30, 30]");
      }
      if (std::abs(g) >= double(slices)) {
        throw ValidationError("z-shift " + fmt(g) + " must be smaller than S=" + std::to_string(slices));
      }
    } else if (!(g >= 0.0 && g <= 0.07)) {
      throw ValidationError("noise sigma " + fmt(g) + " is outside [0, 0.07]");
    }
  }
}

std::vector<SyntheticVolume> perturb(const std::vector<SyntheticVolume>& data, PerturbationMode mode,
                                     double amount, std::uint64_t seed) {
  std::vector<SyntheticVolume> out = data;
  for (SyntheticVolume& v : out) {
    if (mode == PerturbationMode::kZShift) {
      v.voxels = z_translate(v.voxels, int(amount));
    } else {
      // The same noise field per volume at every sigma, scaled.
      v.voxels = add_noise(v.voxels, amount, splitmix64(seed ^ splitmix64(v.index)));
    }
  }
  return out;
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::string s = "perturbation,macro_f1,auroc\n";
  for (const RobustnessRow& r : rows) {
    s += fmt(r.perturbation) + "," + fmt(r.report.macro_f1) + "," + fmt(r.report.macro_auroc) + "\n";
  }
  return s;
}

int cmd_gen_data(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = config_for(opt);
    const fs::path dir = !opt.out.empty() ? opt.out : cfg.data.dir;
    if (dir.empty()) throw ValidationError("gen-data needs --out or data.dir in the config");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      if (!opt.force) {
        err << "error: " << dir.string() << " is not empty; pass --force to overwrite\n";
        return kExitFailure;
      }
      fs::remove_all(dir);
    }
    const std::size_t count = opt.count.value_or(cfg.data.total());
    write_dataset(dir, cfg.synth, generate(cfg.synth, count));
    out << "wrote " << count << " volumes to " << dir.string() << '\n';
    return kExitOk;
  });
}

int cmd_train(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = config_for(opt);
    const auto seeds = seeds_for(opt, cfg);
    const fs::path root = out_for(opt, cfg);
    const Splits data = load_splits(cfg);
    for (std::uint64_t seed : seeds) {
      const fs::path dir = seeds.size() == 1 ? root : root / ("seed_" + std::to_string(seed));
      const TrainOutcome r = train_run(cfg, seed, data, dir, opt.resume, err);
      out << "seed " << seed << ": best val macro_f1 " << fmt(r.best_val.macro_f1) << " at step "
          << r.state.best_step;
      if (r.test) out << ", test macro_f1 " << fmt(r.test->macro_f1);
      out << " (" << fmt(r.seconds) << " s) -> " << dir.string() << '\n';
    }
    return kExitOk;
  });
}

int cmd_eval(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = config_for(opt);
    const fs::path ckpt = !opt.checkpoint.empty() ? opt.checkpoint : out_for(opt, cfg) / "checkpoint";
    const LoadedCheckpoint loaded = load_checkpoint(ckpt, cfg.encoder, model_json(cfg));
    const Splits data = load_splits(cfg);
    const MetricsReport report =
        evaluate(make_encoder(cfg), loaded.params, eval_split(data), cfg.train.threshold);
    const json j = report.to_json();
    if (!opt.out.empty()) {
      fs::create_directories(opt.out);
      write_text(opt.out / "eval.json", j.dump(2) + "\n");
    }
    out << j.dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_ablate(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  static const std::set<std::string> axes{"K", "q", "L", "operator", "topology", "components"};
  if (!axes.count(opt.axis)) {
    err << "error: unknown ablation axis '" << opt.axis << "' (K, q, L, operator, topology, components)\n";
    return kExitUsage;
  }
  return guarded(err, [&] {
    const ExperimentConfig base = config_for(opt);
    const auto seeds = seeds_for(opt, base);
    const auto values = opt.values.empty() ? default_ablation_values(base, opt.axis) : opt.values;
    const fs::path root = out_for(opt, base);
    // Resolve every setting before the first run so a bad value fails fast.
    std::vector<ExperimentConfig> configs;
    for (const std::string& v : values) configs.push_back(apply_ablation(base, opt.axis, v));

    const Splits data = load_splits(base);
    std::vector<AblationRow> rows;
    std::string run_log;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const ExperimentConfig& cfg = configs[i];
      for (std::uint64_t seed : seeds) {
        const fs::path dir = root / ("ablate_" + opt.axis) / values[i] / ("seed_" + std::to_string(seed));
        err << opt.axis << '=' << values[i] << " seed " << seed << '\n';
        const TrainOutcome r = train_run(cfg, seed, data, dir, false, err);
        AblationRow row{values[i], seed, r.test ? *r.test : r.best_val, r.parameters, r.edges.front()};
        const std::size_t q = cfg.graph.effective_receptive_field();
        std::string line = opt.axis + "=" + values[i] + " seed=" + std::to_string(seed) +
                           " q=" + std::to_string(q) + " edges=" + std::to_string(row.edges) +
                           " expected_edges=" + std::to_string(expected_edge_count(cfg.graph.nodes, q)) +
                           " parameters=" + std::to_string(row.parameters) +
                           " macro_f1=" + fmt(row.report.macro_f1) + "\n";
        out << line;
        run_log += line;
        rows.push_back(std::move(row));
      }
    }
    fs::create_directories(root);
    write_text(root / ("ablate_" + opt.axis + ".csv"), ablation_csv(rows));
    write_text(root / ("ablate_" + opt.axis + ".log"), run_log);
    return kExitOk;
  });
}

int cmd_robustness(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  PerturbationMode mode;
  try {
    mode = perturbation_mode_from_string(opt.mode);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return guarded(err, [&] {
    const ExperimentConfig cfg = config_for(opt);
    const std::vector<double> grid = opt.grid.empty() ? default_grid(mode, cfg.synth.slices) : opt.grid;
    validate_grid(mode, grid, cfg.synth.slices);
    const fs::path root = out_for(opt, cfg);
    const fs::path ckpt = !opt.checkpoint.empty() ? opt.checkpoint : root / "checkpoint";
    const LoadedCheckpoint loaded = load_checkpoint(ckpt, cfg.encoder, model_json(cfg));
    const SpectralEncoder encoder = make_encoder(cfg);
    const Splits data = load_splits(cfg);
    const auto& test = eval_split(data);

    const MetricsReport clean = evaluate(encoder, loaded.params, test, cfg.train.threshold);
    out << "unperturbed macro_f1 " << fmt(clean.macro_f1) << " auroc " << fmt(clean.macro_auroc) << '\n';
    std::vector<RobustnessRow> rows;
    for (double g : grid) {
      const auto perturbed = perturb(test, mode, g, cfg.synth.seed);
      rows.push_back({g, evaluate(encoder, loaded.params, perturbed, cfg.train.threshold)});
      out << opt.mode << ' ' << fmt(g) << " macro_f1 " << fmt(rows.back().report.macro_f1) << " auroc "
          << fmt(rows.back().report.macro_auroc) << '\n';
    }
    fs::create_directories(root);
    write_text(root / ("robustness_" + opt.mode + ".csv"), robustness_csv(rows));
    return kExitOk;
  });
}

int cmd_oracle_check(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> all{"cheb", "laplacian", "grad", "metrics"};
  const std::vector<std::string> suites = opt.suites.empty() ? all : opt.suites;
  for (const std::string& s : suites) {
    if (std::find(all.begin(), all.end(), s) == all.end()) {
      err << "error: unknown suite '" << s << "' (cheb, laplacian, grad, metrics)\n";
      return kExitUsage;
    }
  }
  return guarded(err, [&] {
    bool ok = true;
    for (const std::string& s : suites) {
      oracle::SuiteResult r;
      if (s == "cheb") r = oracle::cheb_suite();
      else if (s == "laplacian") r = oracle::laplacian_suite();
      else if (s == "grad") r = oracle::grad_suite();
      else r = oracle::metrics_suite();
      ok = ok && r.passed;
      out << r.name << ": " << (r.passed ? "PASS" : "FAIL") << " (" << r.cases << " cases, worst "
          << fmt(r.worst) << ", " << fmt(r.seconds) << " s) " << r.detail << '\n';
    }
    return ok ? kExitOk : kExitFailure;
  });
}

}  // namespace ctssg
