#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctssg/config.hpp"
#include "ctssg/metrics.hpp"
#include "ctssg/trainer.hpp"

namespace ctssg {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Splits {
  std::vector<SyntheticVolume> train, val, test;
};

/// Train, val and test volumes as consecutive index ranges, generated from
/// cfg.synth or read from cfg.data.dir.
Splits load_splits(const ExperimentConfig& cfg);

SpectralEncoder make_encoder(const ExperimentConfig& cfg);

struct TrainOutcome {
  TrainState state;
  MetricsReport best_val;
  std::optional<MetricsReport> test;
  std::size_t parameters = 0;
  /// Edge count of each distinct block graph, in block order.
  std::vector<std::size_t> edges;
  double seconds = 0.0;
};

/// One training run with parameters initialised and batches shuffled from
/// `seed`. When `out` is non-empty it receives config.json, graph.json,
/// history.csv, report.json, checkpoint/ (best parameters) and state/ (for
/// resuming). With `resume`, training continues from out/state.
TrainOutcome train_run(const ExperimentConfig& cfg, std::uint64_t seed, const Splits& data,
                       const std::filesystem::path& out, bool resume, std::ostream& log);

/// Config with one ablation setting applied. Axes: K, q, L, operator,
/// topology, components. Throws ValidationError for an unknown axis or value.
ExperimentConfig apply_ablation(const ExperimentConfig& base, const std::string& axis,
                                const std::string& value);
std::vector<std::string> default_ablation_values(const ExperimentConfig& cfg, const std::string& axis);

struct AblationRow {
  std::string axis_value;
  std::uint64_t seed = 0;
  MetricsReport report;
  std::size_t parameters = 0;
  std::size_t edges = 0;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);

enum class PerturbationMode { kZShift, kNoise };

PerturbationMode perturbation_mode_from_string(const std::string& s);

/// {-m, -m/2, 0, m/2, m} with m = min(30, S - 1) for z-shifts; {0, 0.01, ..., 0.07} for noise.
std::vector<double> default_grid(PerturbationMode mode, std::size_t slices);

/// Throws ValidationError for grid points outside [-30, 30] slices (and
/// |shift| < S) or outside [0, 0.07] noise sigma.
void validate_grid(PerturbationMode mode, const std::vector<double>& grid, std::size_t slices);

std::vector<SyntheticVolume> perturb(const std::vector<SyntheticVolume>& data, PerturbationMode mode,
                                     double amount, std::uint64_t seed);

struct RobustnessRow {
  double perturbation = 0.0;
  MetricsReport report;
};

std::string robustness_csv(const std::vector<RobustnessRow>& rows);

struct CliOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::vector<std::uint64_t> seeds;
  bool force = false;
  int threads = 0;
  bool resume = false;
  std::optional<std::size_t> count;
  std::string axis;
  std::vector<std::string> values;
  std::string mode;
  std::vector<double> grid;
  std::filesystem::path checkpoint;
  std::vector<std::string> suites;
};

// Subcommands. Each returns an exit code; errors in the config or the data
// are reported on `err` and yield kExitFailure.
int cmd_gen_data(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_ablate(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_robustness(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_oracle_check(const CliOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace ctssg
