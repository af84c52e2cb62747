#include "ctssg/kernels/serial.hpp"

#include <cmath>

namespace ctssg::kernels::serial {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = trans_b == Trans::kNo ? b[p * n + j] : b[j * k + p];
        sum += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T sum = bias.empty() ? T(0) : bias[co];
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < s.kernel; ++ky) {
              const long iy = long(oy * s.stride + ky) - long(s.padding);
              if (iy < 0 || iy >= long(s.height)) continue;
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long ix = long(ox * s.stride + kx) - long(s.padding);
                if (ix < 0 || ix >= long(s.width)) continue;
                sum += x[((n * s.in_channels + ci) * s.height + iy) * s.width + ix] *
                       w[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
              }
            }
          }
          y[((n * s.out_channels + co) * oh + oy) * ow + ox] = sum;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T g = grad_y[((n * s.out_channels + co) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < s.kernel; ++ky) {
              const long iy = long(oy * s.stride + ky) - long(s.padding);
              if (iy < 0 || iy >= long(s.height)) continue;
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long ix = long(ox * s.stride + kx) - long(s.padding);
                if (ix < 0 || ix >= long(s.width)) continue;
                grad_x[((n * s.in_channels + ci) * s.height + iy) * s.width + ix] +=
                    g * w[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvShape& s, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w, std::span<T> grad_bias) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T g = grad_y[((n * s.out_channels + co) * oh + oy) * ow + ox];
          if (!grad_bias.empty()) grad_bias[co] += g;
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < s.kernel; ++ky) {
              const long iy = long(oy * s.stride + ky) - long(s.padding);
              if (iy < 0 || iy >= long(s.height)) continue;
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long ix = long(ox * s.stride + kx) - long(s.padding);
                if (ix < 0 || ix >= long(s.width)) continue;
                grad_w[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] +=
                    g * x[((n * s.in_channels + ci) * s.height + iy) * s.width + ix];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t width, std::span<const T> x,
                        std::span<const T> gamma, std::span<const T> beta, T eps,
                        std::span<T> xhat, std::span<T> rstd, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * width;
    T mean = 0;
    for (std::size_t j = 0; j < width; ++j) mean += row[j];
    mean /= T(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(width);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[r * width + j] = h;
      y[r * width + j] = h * gamma[j] + beta[j];
    }
  }
}

template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t width, std::span<const T> grad_y,
                         std::span<const T> xhat, std::span<const T> rstd,
                         std::span<const T> gamma, std::span<T> grad_x, std::span<T> grad_gamma,
                         std::span<T> grad_beta) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* gy = grad_y.data() + r * width;
    const T* h = xhat.data() + r * width;
    if (!grad_x.empty()) {
      T mean_g = 0, mean_gh = 0;
      for (std::size_t j = 0; j < width; ++j) {
        mean_g += gy[j] * gamma[j];
        mean_gh += gy[j] * gamma[j] * h[j];
      }
      mean_g /= T(width);
      mean_gh /= T(width);
      for (std::size_t j = 0; j < width; ++j) {
        grad_x[r * width + j] += rstd[r] * (gy[j] * gamma[j] - mean_g - h[j] * mean_gh);
      }
    }
    for (std::size_t j = 0; j < width; ++j) {
      if (!grad_gamma.empty()) grad_gamma[j] += gy[j] * h[j];
      if (!grad_beta.empty()) grad_beta[j] += gy[j];
    }
  }
}

#define CTSSG_INSTANTIATE(T)                                                                    \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,                   \
                        std::span<const T>, std::span<const T>, std::span<T>, bool);           \
  template void conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,    \
                                  std::span<const T>, std::span<T>);                          \
  template void conv2d_backward_input<T>(const ConvShape&, std::span<const T>,                 \
                                         std::span<const T>, std::span<T>);                    \
  template void conv2d_backward_weight<T>(const ConvShape&, std::span<const T>,                \
                                          std::span<const T>, std::span<T>, std::span<T>);     \
  template void layer_norm_forward<T>(std::size_t, std::size_t, std::span<const T>,            \
                                      std::span<const T>, std::span<const T>, T, std::span<T>, \
                                      std::span<T>, std::span<T>);                             \
  template void layer_norm_backward<T>(std::size_t, std::size_t, std::span<const T>,           \
                                       std::span<const T>, std::span<const T>,                 \
                                       std::span<const T>, std::span<T>, std::span<T>,         \
                                       std::span<T>);

CTSSG_INSTANTIATE(float)
CTSSG_INSTANTIATE(double)

#undef CTSSG_INSTANTIATE

}  // namespace ctssg::kernels::serial
