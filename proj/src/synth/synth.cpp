#include "ctssg/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <Eigen/Dense>

#include "ctssg/errors.hpp"

namespace ctssg {

using nlohmann::json;

std::string to_string(PatternKind p) {
  switch (p) {
    case PatternKind::kBlob: return "blob";
    case PatternKind::kAlternatingIntensity: return "alternating_intensity";
    case PatternKind::kMultiSliceGradient: return "multi_slice_gradient";
  }
  return "?";
}

PatternKind pattern_from_string(const std::string& s) {
  if (s == "blob") return PatternKind::kBlob;
  if (s == "alternating_intensity") return PatternKind::kAlternatingIntensity;
  if (s == "multi_slice_gradient") return PatternKind::kMultiSliceGradient;
  throw ValidationError("unknown pattern '" + s + "'");
}

void SynthConfig::validate() const {
  if (slices_per_node == 0 || slices == 0 || slices % slices_per_node != 0) {
    throw ValidationError("synth: S=" + std::to_string(slices) + " is not a whole number of " +
                          std::to_string(slices_per_node) + "-slice triplets");
  }
  if (height == 0 || width == 0) throw ValidationError("synth: slice extents must be positive");
  if (labels.empty()) throw ValidationError("synth: at least one label is required");
  if (!(noise_floor >= 0.0)) throw ValidationError("synth: noise_floor must be >= 0");
  if (!(background >= 0.0 && background <= 1.0)) {
    throw ValidationError("synth: background must lie in [0, 1]");
  }
  for (std::size_t m = 0; m < labels.size(); ++m) {
    const LabelSpec& l = labels[m];
    const std::string who = "synth label " + std::to_string(m) + ": ";
    if (!(l.prevalence >= 0.0 && l.prevalence <= 1.0)) {
      throw ValidationError(who + "prevalence must lie in [0, 1]");
    }
    if (l.band_end < l.band_begin || l.band_end >= nodes()) {
      throw ValidationError(who + "z_band [" + std::to_string(l.band_begin) + ", " +
                            std::to_string(l.band_end) + "] is not within [0, " +
                            std::to_string(nodes()) + ")");
    }
    const std::size_t band = l.band_end - l.band_begin + 1;
    if (l.pattern != PatternKind::kBlob && band < 2) {
      throw ValidationError(who + to_string(l.pattern) +
                            " needs a band of at least 2 triplets");
    }
    if (!(l.amplitude > noise_floor)) {
      throw ValidationError(who + "amplitude must exceed noise_floor");
    }
  }
  if (!label_correlation.empty()) {
    const std::size_t m = labels.size();
    if (label_correlation.size() != m) throw ValidationError("synth: correlation must be M x M");
    for (std::size_t i = 0; i < m; ++i) {
      if (label_correlation[i].size() != m) throw ValidationError("synth: correlation must be M x M");
      if (label_correlation[i][i] != 1.0) throw ValidationError("synth: correlation diagonal must be 1");
      for (std::size_t j = 0; j < m; ++j) {
        if (label_correlation[i][j] != label_correlation[j][i]) {
          throw ValidationError("synth: correlation must be symmetric");
        }
      }
    }
  }
}

SynthConfig default_synth_config() {
  SynthConfig cfg;
  cfg.labels = {
      {0, 2, PatternKind::kBlob, 0.5, 0.4},
      {2, 4, PatternKind::kAlternatingIntensity, 0.25, 0.4},
      {4, 6, PatternKind::kMultiSliceGradient, 0.3, 0.4},
      {5, 7, PatternKind::kBlob, 0.5, 0.4},
  };
  return cfg;
}

bool Region::contains(std::size_t y, std::size_t x) const {
  const double dy = double(y) + 0.5 - center_y, dx = double(x) + 0.5 - center_x;
  return dy * dy + dx * dx <= radius * radius;
}

Region label_region(const SynthConfig& cfg, std::size_t label) {
  const auto grid = std::size_t(std::ceil(std::sqrt(double(cfg.labels.size()))));
  const double cell_h = double(cfg.height) / double(grid);
  const double cell_w = double(cfg.width) / double(grid);
  Region r;
  r.center_y = (double(label / grid) + 0.5) * cell_h;
  r.center_x = (double(label % grid) + 0.5) * cell_w;
  r.radius = 0.35 * std::min(cell_h, cell_w);
  return r;
}

namespace {

std::mt19937_64 volume_rng(std::uint64_t seed, std::size_t index, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                    std::uint32_t(std::uint64_t(index) >> 32), stream};
  return std::mt19937_64(seq);
}

std::vector<double> sample_labels(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t m = cfg.labels.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(m);
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
  if (!cfg.label_correlation.empty()) {
    Eigen::MatrixXd corr(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) {
        corr(i, j) = cfg.label_correlation[std::size_t(i)][std::size_t(j)];
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) {
      throw ValidationError("synth: label correlation is not positive definite");
    }
    z = llt.matrixL() * z;
  }
  std::vector<double> labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double u = 0.5 * std::erfc(-z(Eigen::Index(i)) / std::sqrt(2.0));
    labels[i] = u < cfg.labels[i].prevalence ? 1.0 : 0.0;
  }
  return labels;
}

}  // namespace

SyntheticVolume generate_volume(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  std::mt19937_64 rng = volume_rng(cfg.seed, index, 0);
  SyntheticVolume out;
  out.seed = cfg.seed;
  out.index = index;
  out.labels = sample_labels(cfg, rng);

  const std::size_t s_n = cfg.slices, h_n = cfg.height, w_n = cfg.width;
  std::vector<double> vox(s_n * h_n * w_n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : vox) v = cfg.background + cfg.noise_floor * normal(rng);

  const std::size_t c = cfg.slices_per_node;
  for (std::size_t m = 0; m < cfg.labels.size(); ++m) {
    const LabelSpec& spec = cfg.labels[m];
    // Draw the blob position unconditionally so label m does not shift the
    // random stream seen by later labels.
    const std::size_t z0 = spec.band_begin * c, z1 = (spec.band_end + 1) * c;
    std::uniform_real_distribution<double> zpos(double(z0), double(z1 - 1));
    const double blob_z = zpos(rng);
    if (out.labels[m] != 1.0) continue;
    const Region region = label_region(cfg, m);
    const double sigma_xy = region.radius / 2.0, sigma_z = 1.5;
    for (std::size_t z = z0; z < z1; ++z) {
      for (std::size_t y = 0; y < h_n; ++y) {
        for (std::size_t x = 0; x < w_n; ++x) {
          if (!region.contains(y, x)) continue;
          double offset = 0.0;
          switch (spec.pattern) {
            case PatternKind::kBlob: {
              const double dy = double(y) + 0.5 - region.center_y;
              const double dx = double(x) + 0.5 - region.center_x;
              const double dz = double(z) - blob_z;
              offset = spec.amplitude * std::exp(-(dy * dy + dx * dx) / (2 * sigma_xy * sigma_xy) -
                                                 dz * dz / (2 * sigma_z * sigma_z));
              break;
            }
            case PatternKind::kAlternatingIntensity:
              offset = (z % 2 == 0 ? 1.0 : -1.0) * spec.amplitude;
              break;
            case PatternKind::kMultiSliceGradient:
              offset = spec.amplitude * double(z - z0 + 1) / double(z1 - z0);
              break;
          }
          vox[(z * h_n + y) * w_n + x] += offset;
        }
      }
    }
  }
  // Clip and round to float precision so the in-memory and on-disk forms agree.
  for (double& v : vox) v = double(float(std::clamp(v, 0.0, 1.0)));
  out.voxels = Tensor({s_n, h_n, w_n}, std::move(vox));
  return out;
}

std::vector<SyntheticVolume> generate(const SynthConfig& cfg, std::size_t count,
                                      std::size_t first_index) {
  cfg.validate();
  std::vector<SyntheticVolume> out(count);
  const long n = long(count);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) out[i] = generate_volume(cfg, first_index + std::size_t(i));
  return out;
}

Tensor z_translate(const Tensor& volume, int shift) {
  if (volume.rank() != 3) throw DimensionError("z_translate: expected an S x H x W volume");
  const std::size_t s_n = volume.shape()[0];
  const std::size_t plane = volume.shape()[1] * volume.shape()[2];
  if (std::size_t(std::abs(shift)) >= s_n) {
    throw ValidationError("z_translate: |shift| = " + std::to_string(std::abs(shift)) +
                          " must be below S = " + std::to_string(s_n));
  }
  const auto in = volume.values();
  if (shift == 0) return volume.clone(false);
  const double fill = *std::min_element(in.begin(), in.end());
  std::vector<double> out(in.size(), fill);
  for (std::size_t z = 0; z < s_n; ++z) {
    const long src = long(z) - shift;
    if (src < 0 || src >= long(s_n)) continue;
    std::copy_n(in.begin() + src * long(plane), plane, out.begin() + long(z * plane));
  }
  return Tensor(volume.shape(), std::move(out));
}

Tensor add_noise(const Tensor& volume, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ValidationError("add_noise: sigma must be >= 0");
  if (sigma == 0.0) return volume.clone(false);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> out(volume.values().begin(), volume.values().end());
  for (double& v : out) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return Tensor(volume.shape(), std::move(out));
}

namespace {

constexpr char kMagic[4] = {'C', 'T', 'S', 'V'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(char((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

std::string volume_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vol_%06zu.bin", index);
  return buf;
}

}  // namespace

void write_volume_file(const std::filesystem::path& path, const Tensor& voxels) {
  if (voxels.rank() != 3) throw DimensionError("write_volume_file: expected S x H x W");
  std::string blob(kMagic, 4);
  put_u32(blob, kVersion);
  for (std::size_t e : voxels.shape()) put_u32(blob, std::uint32_t(e));
  for (double v : voxels.values()) put_u32(blob, std::bit_cast<std::uint32_t>(float(v)));
  std::ofstream(path, std::ios::binary).write(blob.data(), std::streamsize(blob.size()));
}

Tensor read_volume_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open volume " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  if (blob.size() < 20 || std::memcmp(p, kMagic, 4) != 0) {
    throw LoadError(path.string() + " is not a volume file");
  }
  if (get_u32(p + 4) != kVersion) throw LoadError(path.string() + ": unsupported version");
  const Shape shape{get_u32(p + 8), get_u32(p + 12), get_u32(p + 16)};
  const std::size_t n = shape_numel(shape);
  if (blob.size() != 20 + 4 * n) throw LoadError(path.string() + ": truncated voxel data");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_u32(p + 20 + 4 * i));
  return Tensor(shape, std::move(v));
}

void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                   const std::vector<SyntheticVolume>& volumes) {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  for (const SyntheticVolume& v : volumes) {
    const std::string file = volume_file_name(v.index);
    write_volume_file(dir / file, v.voxels);
    entries.push_back({{"file", file}, {"index", v.index}, {"seed", v.seed}, {"labels", v.labels}});
  }
  json index = {{"format", "ctsv-f32-le"},
                {"extents", {cfg.slices, cfg.height, cfg.width}},
                {"labels", cfg.labels.size()},
                {"seed", cfg.seed},
                {"count", volumes.size()},
                {"volumes", std::move(entries)}};
  std::ofstream(dir / "index.json") << index.dump(2) << '\n';
}

std::vector<SyntheticVolume> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw LoadError("no dataset index in " + dir.string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed dataset index: " + std::string(e.what()));
  }
  std::vector<SyntheticVolume> out;
  for (const json& e : index.at("volumes")) {
    SyntheticVolume v;
    v.voxels = read_volume_file(dir / e.at("file").get<std::string>());
    v.labels = e.at("labels").get<std::vector<double>>();
    v.seed = e.at("seed").get<std::uint64_t>();
    v.index = e.at("index").get<std::size_t>();
    out.push_back(std::move(v));
  }
  return out;
}

json to_json(const SynthConfig& cfg) {
  json labels = json::array();
  for (const LabelSpec& l : cfg.labels) {
    labels.push_back({{"band", {l.band_begin, l.band_end}},
                      {"pattern", to_string(l.pattern)},
                      {"amplitude", l.amplitude},
                      {"prevalence", l.prevalence}});
  }
  json j = {{"S", cfg.slices},
            {"H", cfg.height},
            {"W", cfg.width},
            {"C", cfg.slices_per_node},
            {"background", cfg.background},
            {"noise_floor", cfg.noise_floor},
            {"seed", cfg.seed},
            {"labels", std::move(labels)}};
  if (!cfg.label_correlation.empty()) j["label_correlation"] = cfg.label_correlation;
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg = default_synth_config();
  cfg.slices = j.value("S", cfg.slices);
  cfg.height = j.value("H", cfg.height);
  cfg.width = j.value("W", cfg.width);
  cfg.slices_per_node = j.value("C", cfg.slices_per_node);
  cfg.background = j.value("background", cfg.background);
  cfg.noise_floor = j.value("noise_floor", cfg.noise_floor);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("labels")) {
    cfg.labels.clear();
    for (const json& l : j.at("labels")) {
      LabelSpec spec;
      const auto band = l.at("band").get<std::vector<std::size_t>>();
      if (band.size() != 2) throw ValidationError("synth label band must be [begin, end]");
      spec.band_begin = band[0];
      spec.band_end = band[1];
      spec.pattern = pattern_from_string(l.at("pattern").get<std::string>());
      spec.amplitude = l.value("amplitude", spec.amplitude);
      spec.prevalence = l.value("prevalence", spec.prevalence);
      cfg.labels.push_back(spec);
    }
  }
  if (j.contains("label_correlation")) {
    cfg.label_correlation = j.at("label_correlation").get<std::vector<std::vector<double>>>();
  }
  return cfg;
}

}  // namespace ctssg
