// Serial vs OpenMP timings for the hot kernels, in float and double.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctssg/kernels/parallel.hpp"
#include "ctssg/kernels/serial.hpp"

namespace k = ctssg::kernels;

namespace {

template <typename Fn>
double best_of(int repeats, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (T& x : v) x = T(u(rng));
  return v;
}

void report(const char* name, const char* type, double serial, double parallel, bool same) {
  std::printf("%-22s %-7s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, type,
              serial * 1e3, parallel * 1e3, serial / parallel, same ? "identical" : "MISMATCH");
}

template <typename T>
bool bench(const char* type, std::size_t n, int repeats) {
  std::mt19937_64 rng(42);
  bool ok = true;

  const auto a = random_vector<T>(n * n, rng), b = random_vector<T>(n * n, rng);
  std::vector<T> c1(n * n), c2(n * n);
  const double gs = best_of(repeats, [&] {
    k::serial::gemm<T>(k::Trans::kNo, k::Trans::kNo, n, n, n, a, b, c1, false);
  });
  const double gp = best_of(repeats, [&] {
    k::parallel::gemm<T>(k::Trans::kNo, k::Trans::kNo, n, n, n, a, b, c2, false);
  });
  report(("gemm " + std::to_string(n)).c_str(), type, gs, gp, c1 == c2);
  ok = ok && c1 == c2;

  // Second tiny_cnn stage at desk scale: 8 triplets x 8 -> 64 channels, 16x16.
  k::ConvShape s;
  s.batch = 8;
  s.in_channels = 8;
  s.out_channels = 64;
  s.height = 16;
  s.width = 16;
  s.kernel = 3;
  s.stride = 2;
  s.padding = 1;
  const auto x = random_vector<T>(s.input_size(), rng), w = random_vector<T>(s.weight_size(), rng);
  const auto bias = random_vector<T>(s.out_channels, rng), gy = random_vector<T>(s.output_size(), rng);
  std::vector<T> y1(s.output_size()), y2(s.output_size());
  const double fs = best_of(repeats, [&] { k::serial::conv2d_forward<T>(s, x, w, bias, y1); });
  const double fp = best_of(repeats, [&] { k::parallel::conv2d_forward<T>(s, x, w, bias, y2); });
  report("conv2d forward", type, fs, fp, y1 == y2);
  ok = ok && y1 == y2;

  std::vector<T> gx1(s.input_size()), gx2(s.input_size());
  const double bs = best_of(repeats, [&] {
    std::fill(gx1.begin(), gx1.end(), T(0));
    k::serial::conv2d_backward_input<T>(s, gy, w, gx1);
  });
  const double bp = best_of(repeats, [&] {
    std::fill(gx2.begin(), gx2.end(), T(0));
    k::parallel::conv2d_backward_input<T>(s, gy, w, gx2);
  });
  report("conv2d backward input", type, bs, bp, gx1 == gx2);
  ok = ok && gx1 == gx2;

  std::vector<T> gw1(s.weight_size()), gw2(s.weight_size()), gb1(s.out_channels), gb2(s.out_channels);
  const double ws = best_of(repeats, [&] {
    std::fill(gw1.begin(), gw1.end(), T(0));
    std::fill(gb1.begin(), gb1.end(), T(0));
    k::serial::conv2d_backward_weight<T>(s, x, gy, gw1, gb1);
  });
  const double wp = best_of(repeats, [&] {
    std::fill(gw2.begin(), gw2.end(), T(0));
    std::fill(gb2.begin(), gb2.end(), T(0));
    k::parallel::conv2d_backward_weight<T>(s, x, gy, gw2, gb2);
  });
  report("conv2d backward weight", type, ws, wp, gw1 == gw2 && gb1 == gb2);
  ok = ok && gw1 == gw2 && gb1 == gb2;
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs parallel kernel benchmark"};
  std::size_t n = 256;
  int repeats = 5;
  int threads = 0;
  app.add_option("--size", n, "gemm matrix size")->check(CLI::PositiveNumber);
  app.add_option("--repeats", repeats, "timing repeats (best is reported)")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  CLI11_PARSE(app, argc, argv);
  k::parallel::set_threads(threads);
  std::printf("threads: %d\n", k::parallel::max_threads());
  const bool ok = bench<float>("float", n, repeats) & bench<double>("double", n, repeats);
  return ok ? 0 : 1;
}
