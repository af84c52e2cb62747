#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctssg/encoder.hpp"
#include "ctssg/graph.hpp"
#include "ctssg/synth.hpp"
#include "ctssg/trainer.hpp"

namespace ctssg {

/// Split sizes; volumes are drawn consecutively as train, val, test.
struct DataConfig {
  std::size_t train = 400;
  std::size_t val = 100;
  std::size_t test = 100;
  /// Read volumes from a gen-data directory instead of generating them.
  std::filesystem::path dir;

  std::size_t total() const { return train + val + test; }
};

struct ExperimentConfig {
  std::string name = "desk";
  std::filesystem::path out_dir = "runs/desk";
  std::vector<std::uint64_t> seeds{0};

  SynthConfig synth = default_synth_config();
  GraphConfig graph;
  /// Per-block receptive fields; empty means graph.receptive_field everywhere.
  std::vector<std::size_t> per_layer_q;
  EncoderConfig encoder;
  TrainConfig train;
  DataConfig data;

  /// Copies volume extents and label count from `synth` into the encoder and
  /// the node count into the graph, then checks every cross-field invariant.
  void resolve();
  void validate() const;
};

ExperimentConfig default_experiment_config();

/// Reads a config document; missing keys keep their defaults. The result is
/// resolved and validated.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// The full resolved document, suitable for reloading.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// The part of the config that determines parameter shapes and the forward
/// pass; checkpoints are keyed by its hash.
nlohmann::json model_json(const ExperimentConfig& cfg);


}  // namespace ctssg
