#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctssg/tensor.hpp"

namespace ctssg {

enum class PatternKind { kBlob, kAlternatingIntensity, kMultiSliceGradient };

std::string to_string(PatternKind p);
PatternKind pattern_from_string(const std::string& s);

/// Planted abnormality for one label.
struct LabelSpec {
  /// Inclusive triplet-index range the pattern is rendered into.
  std::size_t band_begin = 0;
  std::size_t band_end = 0;
  PatternKind pattern = PatternKind::kBlob;
  double amplitude = 0.3;
  /// P(label = 1).
  double prevalence = 0.4;
};

struct SynthConfig {
  std::size_t slices = 24;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t slices_per_node = 3;
  std::vector<LabelSpec> labels;
  /// Optional M x M correlation of the latent Gaussians that drive labels.
  std::vector<std::vector<double>> label_correlation;
  double background = 0.5;
  double noise_floor = 0.05;
  std::uint64_t seed = 0;

  std::size_t nodes() const { return slices / slices_per_node; }
  void validate() const;
};

/// Four labels, one per pattern family plus a second blob, on 24x32x32.
SynthConfig default_synth_config();

struct SyntheticVolume {
  Tensor voxels;               // [S x H x W], values in [0, 1]
  std::vector<double> labels;  // M entries in {0, 1}
  std::uint64_t seed = 0;
  std::size_t index = 0;
};

/// Axis-aligned disk in the slice plane where label `label` is drawn.
struct Region {
  double center_y = 0.0;
  double center_x = 0.0;
  double radius = 0.0;
  bool contains(std::size_t y, std::size_t x) const;
};

Region label_region(const SynthConfig& cfg, std::size_t label);

/// Volume `index` of the dataset; a pure function of (cfg, index).
SyntheticVolume generate_volume(const SynthConfig& cfg, std::size_t index);

/// Volumes first_index .. first_index + count - 1.
std::vector<SyntheticVolume> generate(const SynthConfig& cfg, std::size_t count,
                                      std::size_t first_index = 0);

/// Shifts content by `shift` slices along the z-axis (positive = toward
/// higher slice index), filling vacated slices with the volume minimum.
Tensor z_translate(const Tensor& volume, int shift);

/// Adds i.i.d. N(0, sigma^2) noise and clips to [0, 1]. sigma = 0 returns the input.
Tensor add_noise(const Tensor& volume, double sigma, std::uint64_t seed);

// On-disk dataset: vol_NNNNNN.bin per volume (magic "CTSV", u32 version,
// u32 S, H, W, then float32 voxels, all little-endian) plus index.json.

void write_volume_file(const std::filesystem::path& path, const Tensor& voxels);
Tensor read_volume_file(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                   const std::vector<SyntheticVolume>& volumes);
std::vector<SyntheticVolume> read_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace ctssg
