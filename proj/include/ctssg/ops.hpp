#pragma once

// Differentiable primitives. Each op records a backward rule on the active
// tape when at least one input requires a gradient.

#include <cstddef>
#include <functional>
#include <vector>

#include "ctssg/tensor.hpp"

namespace ctssg {

inline constexpr double kLayerNormEps = 1e-5;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);

/// [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x * W + b over the last axis of x; leading axes are treated as a batch.
/// `b` may be undefined for a bias-free map.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-row zero-mean unit-variance normalization over the last axis, then
/// gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// Exact erf-form GELU.
Tensor gelu(const Tensor& x);

/// Arithmetic mean along `axis`; the axis is removed from the shape.
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

/// Mean binary cross-entropy over all entries, in log-sum-exp form.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Batched NCHW convolution with square kernel and zero padding.
/// x: [B x Cin x H x W], weight: [Cout x Cin x k x k], bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

double gelu_scalar(double x);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Central-difference check of tape gradients of a scalar function of
/// `params`. Returns the max over coordinates of
/// |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double h = 1e-5);

}  // namespace ctssg
