#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctssg/encoder.hpp"
#include "ctssg/metrics.hpp"
#include "ctssg/optim.hpp"
#include "ctssg/synth.hpp"

namespace ctssg {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::size_t batch_size = 4;
  /// Mini-batches whose gradients are summed into one optimizer step.
  std::size_t accumulation = 1;
  std::size_t warmup_steps = 100;
  std::size_t max_steps = 2000;
  std::size_t eval_every = 100;
  /// Stop after this many evaluations without improvement; 0 disables.
  std::size_t patience = 0;
  std::uint64_t seed = 0;
  double threshold = 0.5;

  void validate() const;
  AdamConfig adam() const;
};

struct HistoryRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_auroc = 0.0;
  double val_map = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

std::string history_csv(std::span<const HistoryRow> rows);

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  EncoderParams params;
  AdamState adam;
  std::size_t step = 0;
  EncoderParams best_params;
  double best_f1 = -1.0;
  std::size_t best_step = 0;
  std::size_t evals_since_best = 0;
  std::vector<HistoryRow> history;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
};

/// Sample order for one epoch: a Fisher-Yates permutation keyed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Sigmoid probabilities [samples x M], one independent forward per sample,
/// collected in input order.
std::vector<double> predict_probabilities(const SpectralEncoder& encoder,
                                          const EncoderParams& params,
                                          std::span<const SyntheticVolume> data);

MetricsReport evaluate(const SpectralEncoder& encoder, const EncoderParams& params,
                       std::span<const SyntheticVolume> data, double threshold = 0.5);

/// Mean BCE and its gradient over `batch`; per-sample tapes run in parallel
/// and are reduced in batch order.
double batch_gradient(const SpectralEncoder& encoder, const EncoderParams& params,
                      std::span<const SyntheticVolume* const> batch,
                      std::vector<std::vector<double>>& grads);

class Trainer {
 public:
  Trainer(const SpectralEncoder& encoder, TrainConfig cfg);

  TrainState initial_state(const EncoderParams& params) const;

  /// Runs from state.step to cfg.max_steps (or until patience runs out).
  /// `on_eval` fires after every evaluation, with the state at that point.
  void run(TrainState& state, std::span<const SyntheticVolume> train,
           std::span<const SyntheticVolume> val,
           const std::function<void(const TrainState&)>& on_eval = {}) const;

  const TrainConfig& config() const { return cfg_; }

 private:
  const SpectralEncoder& encoder_;
  TrainConfig cfg_;
};

// Checkpoints: <dir>/params.{bin,json}, <dir>/config.json (the model config
// echo) and <dir>/checkpoint.json carrying the config hash.

/// FNV-1a 64 of the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

void save_checkpoint(const std::filesystem::path& dir, const EncoderParams& params,
                     const nlohmann::json& model_config, const nlohmann::json& extra = {});

struct LoadedCheckpoint {
  EncoderParams params;
  nlohmann::json meta;
};

/// Throws LoadError unless the stored hash equals config_hash(model_config).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const EncoderConfig& cfg,
                                 const nlohmann::json& model_config);

/// Persists a full TrainState (last params, optimizer moments, best params,
/// history) under `dir` so Trainer::run can resume it.
void save_train_state(const std::filesystem::path& dir, const TrainState& state,
                      const nlohmann::json& model_config);
TrainState load_train_state(const std::filesystem::path& dir, const EncoderConfig& cfg,
                            const nlohmann::json& model_config);

}  // namespace ctssg
