#pragma once

// Straightforward single-threaded kernels. These are the reference the
// parallel variants are tested against; keep them simple rather than fast.

#include <cstddef>
#include <span>

#include "ctssg/kernels/common.hpp"

namespace ctssg::kernels::serial {

/// C[m x n] (+)= op(A) * op(B), row-major. op(A) is m x k, op(B) is k x n.
/// Each C entry is the left-to-right sum over the inner index, added to the
/// old value only when `accumulate` is set.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

/// y = conv(x, w) + bias, zero padding.
template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

/// grad_x += conv-transpose(grad_y, w).
template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x);

/// grad_w += correlation(x, grad_y); grad_bias += sum(grad_y).
template <typename T>
void conv2d_backward_weight(const ConvShape& s, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w, std::span<T> grad_bias);

/// Row-wise normalization of a rows x width matrix. Writes the normalized
/// values (before the affine map) to `xhat` and 1/sqrt(var + eps) to `rstd`.
template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t width, std::span<const T> x,
                        std::span<const T> gamma, std::span<const T> beta, T eps,
                        std::span<T> xhat, std::span<T> rstd, std::span<T> y);

/// Accumulates input, gamma and beta gradients of layer_norm_forward.
/// Any of grad_x / grad_gamma / grad_beta may be empty to skip it.
template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t width, std::span<const T> grad_y,
                         std::span<const T> xhat, std::span<const T> rstd,
                         std::span<const T> gamma, std::span<T> grad_x, std::span<T> grad_gamma,
                         std::span<T> grad_beta);

}  // namespace ctssg::kernels::serial
