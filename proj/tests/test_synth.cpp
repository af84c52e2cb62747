#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctssg/errors.hpp"
#include "ctssg/metrics.hpp"
#include "ctssg/oracles.hpp"
#include "ctssg/synth.hpp"

using namespace ctssg;
namespace fs = std::filesystem;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctssg_test_" + name);
  fs::remove_all(p);
  return p;
}

std::pair<double, double> mean_std(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / double(v.size() - 1))};
}

}  // namespace

TEST_CASE("volumes are a pure function of (config, index)") {
  const SynthConfig cfg = default_synth_config();
  const SyntheticVolume a = generate_volume(cfg, 17), b = generate_volume(cfg, 17);
  CHECK(vals(a.voxels) == vals(b.voxels));
  CHECK(a.labels == b.labels);
  const auto batch = generate(cfg, 5, 15);
  CHECK(vals(batch[2].voxels) == vals(a.voxels));
  CHECK(vals(generate_volume(cfg, 18).voxels) != vals(a.voxels));
  SynthConfig other = cfg;
  other.seed = 1;
  CHECK(vals(generate_volume(other, 17).voxels) != vals(a.voxels));
  for (double v : a.voxels.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("prevalence extremes") {
  SynthConfig cfg = default_synth_config();
  for (auto& l : cfg.labels) l.prevalence = 0.0;
  for (const auto& v : generate(cfg, 20)) CHECK(v.labels == std::vector<double>(4, 0.0));
  for (auto& l : cfg.labels) l.prevalence = 1.0;
  for (const auto& v : generate(cfg, 20)) CHECK(v.labels == std::vector<double>(4, 1.0));
}

TEST_CASE("label prevalence is respected on average") {
  const SynthConfig cfg = default_synth_config();
  std::vector<double> counts(4, 0.0);
  const auto data = generate(cfg, 2000);
  for (const auto& v : data) {
    for (std::size_t m = 0; m < 4; ++m) counts[m] += v.labels[m];
  }
  for (double c : counts) CHECK(std::abs(c / 2000.0 - 0.4) < 0.04);
}

TEST_CASE("background noise matches the configured floor") {
  SynthConfig cfg = default_synth_config();
  cfg.height = 204;
  cfg.width = 204;
  for (auto& l : cfg.labels) l.prevalence = 0.0;
  const SyntheticVolume v = generate_volume(cfg, 0);
  REQUIRE(v.voxels.numel() >= 998'000);
  const auto [m, s] = mean_std(v.voxels.values());
  CHECK(std::abs(m - 0.5) < 1e-3);
  CHECK(std::abs(s - 0.05) < 0.05 * 0.05);

  const Tensor flat({1000, 1000}, std::vector<double>(1'000'000, 0.5));
  const Tensor noisy = add_noise(flat, 0.03, 9);
  CHECK(std::abs(mean_std(noisy.values()).second - 0.03) < 0.03 * 0.05);
  CHECK(vals(add_noise(flat, 0.0, 9)) == vals(flat));
  CHECK(vals(add_noise(flat, 0.03, 9)) == vals(noisy));
  CHECK_THROWS_AS(add_noise(flat, -0.1, 9), ValidationError);
}

TEST_CASE("z_translate") {
  const SynthConfig cfg = default_synth_config();
  const Tensor v = generate_volume(cfg, 3).voxels;
  const std::size_t plane = 32 * 32;
  const auto in = v.values();
  const double lo = *std::min_element(in.begin(), in.end());
  for (int shift : {3, -3}) {
    const Tensor t = z_translate(v, shift);
    for (std::size_t z = 0; z < 24; ++z) {
      const long src = long(z) - shift;
      for (std::size_t k = 0; k < plane; k += 97) {
        const double expected = (src < 0 || src >= 24) ? lo : in[std::size_t(src) * plane + k];
        CHECK(t[z * plane + k] == expected);
      }
    }
  }
  CHECK(vals(z_translate(v, 0)) == vals(v));
  CHECK_NOTHROW(z_translate(v, 23));
  CHECK_NOTHROW(z_translate(v, -23));
  CHECK_THROWS_AS(z_translate(v, 24), ValidationError);
  CHECK_THROWS_AS(z_translate(Tensor({4, 4}), 1), DimensionError);
}

TEST_CASE("volume files and datasets round trip") {
  const SynthConfig cfg = default_synth_config();
  const auto data = generate(cfg, 6);
  const fs::path dir = scratch("dataset");
  write_dataset(dir, cfg, data);
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(vals(back[i].voxels) == vals(data[i].voxels));
    CHECK(back[i].labels == data[i].labels);
  }
  const fs::path bad = dir / "bad.bin";
  std::ofstream(bad) << "XXXXnot a volume";
  CHECK_THROWS_AS(read_volume_file(bad), LoadError);
  CHECK_THROWS_AS(read_dataset(dir / "missing"), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("synth config validation and json") {
  SynthConfig cfg = default_synth_config();
  CHECK(synth_config_from_json(to_json(cfg)).labels.size() == 4);
  cfg.labels[0].band_end = 8;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = default_synth_config();
  cfg.labels[1].amplitude = 0.01;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = default_synth_config();
  cfg.slices = 25;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = default_synth_config();
  cfg.labels[0].prevalence = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK_THROWS_AS(pattern_from_string("stripes"), ValidationError);
}

TEST_CASE("planted patterns are detectable by a matched filter") {
  const SynthConfig cfg = default_synth_config();
  const auto data = generate(cfg, 500, 1000);
  std::vector<double> pred, truth;
  for (const auto& v : data) {
    const auto d = oracle::matched_filter(cfg, v.voxels);
    pred.insert(pred.end(), d.begin(), d.end());
    truth.insert(truth.end(), v.labels.begin(), v.labels.end());
  }
  const MetricsReport r = evaluate_metrics(pred, truth, 500, 4);
  for (const auto& l : r.per_label) CHECK(*l.f1 >= 0.99);
}
