#include "ctssg/kernels/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctssg::kernels::parallel {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  const long rows = long(m);
#pragma omp parallel if (m * n * k > 32768)
  {
    std::vector<T> acc(n);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) {
      std::fill(acc.begin(), acc.end(), T(0));
      if (trans_b == Trans::kNo) {
        // Stream rows of B; each acc[j] still sums over p in ascending order.
        for (std::size_t p = 0; p < k; ++p) {
          const T av = trans_a == Trans::kNo ? a[i * k + p] : a[p * m + i];
          const T* brow = b.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
      } else {
        for (std::size_t j = 0; j < n; ++j) {
          const T* bcol = b.data() + j * k;
          T sum = 0;
          for (std::size_t p = 0; p < k; ++p) {
            const T av = trans_a == Trans::kNo ? a[i * k + p] : a[p * m + i];
            sum += av * bcol[p];
          }
          acc[j] = sum;
        }
      }
      T* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = accumulate ? crow[j] + acc[j] : acc[j];
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long stride = long(s.stride), pad = long(s.padding), kern = long(s.kernel);
  const long h = long(s.height), wd = long(s.width);
  const long planes = long(s.batch * s.out_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels > 16384)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = std::size_t(plane) / s.out_channels;
    const std::size_t co = std::size_t(plane) % s.out_channels;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        // Taps that land inside the input; the rest read padding.
        const long ky_begin = std::max(0L, pad - long(oy) * stride);
        const long ky_end = std::min(kern, h + pad - long(oy) * stride);
        const long kx_begin = std::max(0L, pad - long(ox) * stride);
        const long kx_end = std::min(kern, wd + pad - long(ox) * stride);
        T sum = bias.empty() ? T(0) : bias[co];
        for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
          const T* xp = x.data() + (n * s.in_channels + ci) * s.height * s.width;
          const T* wp = w.data() + (co * s.in_channels + ci) * s.kernel * s.kernel;
          for (long ky = ky_begin; ky < ky_end; ++ky) {
            const long row = (long(oy) * stride + ky - pad) * wd + long(ox) * stride - pad;
            const T* wrow = wp + ky * kern;
            for (long kx = kx_begin; kx < kx_end; ++kx) sum += xp[row + kx] * wrow[kx];
          }
        }
        y[((n * s.out_channels + co) * oh + oy) * ow + ox] = sum;
      }
    }
  }
}

namespace {

// Smallest o >= 0 with i + pad - o * stride < kern.
long first_output(long i, long pad, long kern, long stride) {
  const long num = i + pad - kern + 1;
  return num <= 0 ? 0 : (num + stride - 1) / stride;
}

// One past the largest o < extent with i + pad - o * stride >= 0.
long last_output(long i, long pad, long stride, long extent) {
  const long num = i + pad;
  return num < 0 ? 0 : std::min(extent, num / stride + 1);
}

// Smallest o >= 0 with o * stride + k - pad >= 0.
long first_inside(long k, long pad, long stride) {
  const long num = pad - k;
  return num <= 0 ? 0 : (num + stride - 1) / stride;
}

// One past the largest o < extent with o * stride + k - pad < size.
long end_inside(long k, long pad, long stride, long size, long extent) {
  const long num = size - 1 + pad - k;
  return num < 0 ? 0 : std::min(extent, num / stride + 1);
}

}  // namespace

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x) {
  const long oh = long(s.out_height()), ow = long(s.out_width());
  const long stride = long(s.stride), pad = long(s.padding), kern = long(s.kernel);
  const long planes = long(s.batch * s.in_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels > 16384)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = std::size_t(plane) / s.in_channels;
    const std::size_t ci = std::size_t(plane) % s.in_channels;
    for (long iy = 0; iy < long(s.height); ++iy) {
      for (long ix = 0; ix < long(s.width); ++ix) {
        // Outputs whose window covers (iy, ix): 0 <= i + pad - o * stride < kern.
        const long oy_begin = first_output(iy, pad, kern, stride), oy_end = last_output(iy, pad, stride, oh);
        const long ox_begin = first_output(ix, pad, kern, stride), ox_end = last_output(ix, pad, stride, ow);
        // Gather in (co, oy, ox) order, the order in which the reference scatters.
        T acc = grad_x[((n * s.in_channels + ci) * s.height + iy) * s.width + ix];
        for (std::size_t co = 0; co < s.out_channels; ++co) {
          const T* gy = grad_y.data() + (n * s.out_channels + co) * oh * ow;
          const T* wp = w.data() + (co * s.in_channels + ci) * s.kernel * s.kernel;
          for (long oy = oy_begin; oy < oy_end; ++oy) {
            const long ky = iy + pad - oy * stride;
            for (long ox = ox_begin; ox < ox_end; ++ox) {
              acc += gy[oy * ow + ox] * wp[ky * kern + (ix + pad - ox * stride)];
            }
          }
        }
        grad_x[((n * s.in_channels + ci) * s.height + iy) * s.width + ix] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvShape& s, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w, std::span<T> grad_bias) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long stride = long(s.stride), pad = long(s.padding);
  const long h = long(s.height), wd = long(s.width);
  const long channels = long(s.out_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels > 16384)
  for (long co = 0; co < channels; ++co) {
    if (!grad_bias.empty()) {
      T acc = grad_bias[co];
      for (std::size_t n = 0; n < s.batch; ++n) {
        const T* gy = grad_y.data() + (n * s.out_channels + co) * oh * ow;
        for (std::size_t o = 0; o < oh * ow; ++o) acc += gy[o];
      }
      grad_bias[co] = acc;
    }
    for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const std::size_t widx = ((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx;
          // Outputs whose tap (ky, kx) lands inside the input.
          const long oy_begin = first_inside(long(ky), pad, stride);
          const long oy_end = end_inside(long(ky), pad, stride, h, long(oh));
          const long ox_begin = first_inside(long(kx), pad, stride);
          const long ox_end = end_inside(long(kx), pad, stride, wd, long(ow));
          T acc = grad_w[widx];
          for (std::size_t n = 0; n < s.batch; ++n) {
            const T* gy = grad_y.data() + (n * s.out_channels + co) * oh * ow;
            const T* xp = x.data() + (n * s.in_channels + ci) * s.height * s.width;
            for (long oy = oy_begin; oy < oy_end; ++oy) {
              const long row = (oy * stride + long(ky) - pad) * wd + long(kx) - pad;
              const T* grow = gy + oy * long(ow);
              for (long ox = ox_begin; ox < ox_end; ++ox) acc += grow[ox] * xp[row + ox * stride];
            }
          }
          grad_w[widx] = acc;
        }
      }
    }
  }
}

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t width, std::span<const T> x,
                        std::span<const T> gamma, std::span<const T> beta, T eps,
                        std::span<T> xhat, std::span<T> rstd, std::span<T> y) {
  const long nrows = long(rows);
#pragma omp parallel for schedule(static) if (rows * width > 65536)
  for (long r = 0; r < nrows; ++r) {
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
  const bool big = rows * width > 65536;
  if (!grad_x.empty()) {
    const long nrows = long(rows);
#pragma omp parallel for schedule(static) if (big)
    for (long r = 0; r < nrows; ++r) {
      const T* gy = grad_y.data() + r * width;
      const T* h = xhat.data() + r * width;
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
  }
  if (grad_gamma.empty() && grad_beta.empty()) return;
  const long cols = long(width);
#pragma omp parallel for schedule(static) if (big)
  for (long j = 0; j < cols; ++j) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T g = grad_y[r * width + j];
      if (!grad_gamma.empty()) grad_gamma[j] += g * xhat[r * width + j];
      if (!grad_beta.empty()) grad_beta[j] += g;
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

}  // namespace ctssg::kernels::parallel
