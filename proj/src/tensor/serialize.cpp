#include "ctssg/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ctssg/errors.hpp"

namespace ctssg {

using nlohmann::json;

void append_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(char((bits >> (8 * b)) & 0xff));
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
  return std::bit_cast<double>(bits);
}

void write_tensors(const std::filesystem::path& stem, std::span<const NamedTensor> tensors) {
  std::string blob;
  json manifest = json::object();
  json entries = json::array();
  std::size_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    entries.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    for (double v : nt.tensor.values()) append_f64_le(blob, v);
    offset += nt.tensor.numel();
  }
  manifest["format"] = "f64-le";
  manifest["count"] = offset;
  manifest["tensors"] = std::move(entries);

  std::filesystem::path bin = stem, meta = stem;
  bin += ".bin";
  meta += ".json";
  std::ofstream(bin, std::ios::binary).write(blob.data(), std::streamsize(blob.size()));
  std::ofstream(meta) << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, meta = stem;
  bin += ".bin";
  meta += ".json";
  std::ifstream meta_in(meta);
  if (!meta_in) throw LoadError("missing parameter manifest " + meta.string());
  std::ifstream bin_in(bin, std::ios::binary);
  if (!bin_in) throw LoadError("missing parameter blob " + bin.string());
  const std::string blob((std::istreambuf_iterator<char>(bin_in)), std::istreambuf_iterator<char>());

  json manifest;
  try {
    manifest = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + meta.string() + ": " + e.what());
  }
  const std::size_t count = manifest.at("count").get<std::size_t>();
  if (blob.size() != count * 8) {
    throw LoadError("parameter blob " + bin.string() + " has " + std::to_string(blob.size()) +
                    " bytes, manifest expects " + std::to_string(count * 8));
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  std::vector<NamedTensor> out;
  for (const json& e : manifest.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + n > count) throw LoadError("tensor " + e.at("name").get<std::string>() +
                                            " runs past the end of the blob");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_f64_le(bytes + 8 * (offset + i));
    out.push_back({e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

}  // namespace ctssg
