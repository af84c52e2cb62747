#pragma once

#include <cstddef>

namespace ctssg::kernels {

enum class Trans { kNo, kYes };

/// Geometry of a batched 2D convolution with square kernel, NCHW layout.
struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
};

}  // namespace ctssg::kernels
