#pragma once

// OpenMP variants of the serial kernels. Every output element is owned by a
// single thread and accumulated in the same order the serial reference uses,
// so results are bit-identical to it and independent of the thread count.

#include <cstddef>
#include <span>

#include "ctssg/kernels/common.hpp"

namespace ctssg::kernels::parallel {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x);

template <typename T>
void conv2d_backward_weight(const ConvShape& s, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w, std::span<T> grad_bias);

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t width, std::span<const T> x,
                        std::span<const T> gamma, std::span<const T> beta, T eps,
                        std::span<T> xhat, std::span<T> rstd, std::span<T> y);

template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t width, std::span<const T> grad_y,
                         std::span<const T> xhat, std::span<const T> rstd,
                         std::span<const T> gamma, std::span<T> grad_x, std::span<T> grad_gamma,
                         std::span<T> grad_beta);

/// Number of threads the parallel kernels will use.
int max_threads();

/// Sets the OpenMP thread count; no-op in builds without OpenMP.
void set_threads(int n);

}  // namespace ctssg::kernels::parallel
