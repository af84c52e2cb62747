#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctssg/tensor.hpp"

namespace ctssg {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Writes `<stem>.bin` (concatenated little-endian float64 values) and
/// `<stem>.json` (name -> shape and element offset manifest).
void write_tensors(const std::filesystem::path& stem, std::span<const NamedTensor> tensors);

/// Reads a container written by write_tensors. Tensors come back as leaves
/// without gradient tracking, in manifest order.
std::vector<NamedTensor> read_tensors(const std::filesystem::path& stem);

/// Little-endian float64 encoding shared with the dataset writer.
void append_f64_le(std::string& out, double v);
double read_f64_le(const unsigned char* p);

}  // namespace ctssg
