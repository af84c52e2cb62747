#include "ctssg/ops.hpp"

#include <cmath>
#include <numbers>

#include "ctssg/errors.hpp"
#include "ctssg/kernels/parallel.hpp"

namespace ctssg {

namespace kp = kernels::parallel;
using kernels::Trans;
using NodePtr = std::shared_ptr<detail::TensorNode>;

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor finish(Shape shape, std::vector<double> values, bool track, Tape::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values), track);
  if (track) Tape::active()->record(out.node(), std::move(fn));
  return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

std::span<const double> view(const std::vector<double>& v) { return v; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool track = tracking({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.shape(), std::move(out), track, [an, bn](std::span<const double> g) {
    for (const NodePtr& n : {an, bn}) {
      if (!n->requires_grad) continue;
      auto& dst = n->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool track = tracking({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.shape(), std::move(out), track, [an, bn](std::span<const double> g) {
    if (an->requires_grad) {
      auto& dst = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& dst = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool track = tracking({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.shape(), std::move(out), track, [an, bn](std::span<const double> g) {
    if (an->requires_grad) {
      auto& dst = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*bn->values)[i];
    }
    if (bn->requires_grad) {
      auto& dst = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*an->values)[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  NodePtr an = a.node();
  return finish(a.shape(), std::move(out), tracking({&a}), [an, factor](std::span<const double> g) {
    auto& dst = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  NodePtr an = a.node();
  return finish(std::move(shape), std::move(out), tracking({&a}), [an](std::span<const double> g) {
    auto& dst = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  NodePtr an = a.node();
  return finish(Shape{}, {s}, tracking({&a}), [an](std::span<const double> g) {
    auto& dst = an->ensure_grad();
    for (double& d : dst) d += g[0];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kp::gemm<double>(Trans::kNo, Trans::kNo, m, n, k, a.values(), b.values(), out, false);
  NodePtr an = a.node(), bn = b.node();
  return finish({m, n}, std::move(out), tracking({&a, &b}),
                [an, bn, m, n, k](std::span<const double> g) {
                  if (an->requires_grad) {
                    kp::gemm<double>(Trans::kNo, Trans::kYes, m, k, n, g, view(*bn->values),
                                     an->ensure_grad(), true);
                  }
                  if (bn->requires_grad) {
                    kp::gemm<double>(Trans::kYes, Trans::kNo, k, n, m, view(*an->values), g,
                                     bn->ensure_grad(), true);
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.shape()[0]) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t in = weight.shape()[0], out_dim = weight.shape()[1];
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not fit weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * out_dim);
  kp::gemm<double>(Trans::kNo, Trans::kNo, rows, out_dim, in, x.values(), weight.values(), out,
                   false);
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return finish(std::move(shape), std::move(out), tracking({&x, &weight, &bias}),
                [xn, wn, bn, rows, in, out_dim](std::span<const double> g) {
                  if (xn->requires_grad) {
                    kp::gemm<double>(Trans::kNo, Trans::kYes, rows, in, out_dim, g,
                                     view(*wn->values), xn->ensure_grad(), true);
                  }
                  if (wn->requires_grad) {
                    kp::gemm<double>(Trans::kYes, Trans::kNo, in, out_dim, rows,
                                     view(*xn->values), g, wn->ensure_grad(), true);
                  }
                  if (bn && bn->requires_grad) {
                    auto& gb = bn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                    }
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ValidationError("layer_norm: eps must be positive");
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  kp::layer_norm_forward<double>(rows, d, x.values(), gamma.values(), beta.values(), eps, *xhat,
                                 *rstd, out);
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(x.shape(), std::move(out), tracking({&x, &gamma, &beta}),
                [xn, gn, bn, xhat, rstd, rows, d](std::span<const double> g) {
                  std::span<double> gx, gg, gb;
                  if (xn->requires_grad) gx = xn->ensure_grad();
                  if (gn->requires_grad) gg = gn->ensure_grad();
                  if (bn->requires_grad) gb = bn->ensure_grad();
                  kp::layer_norm_backward<double>(rows, d, g, *xhat, *rstd, view(*gn->values),
                                                  gx, gg, gb);
                });
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(xv[i]);
  NodePtr xn = x.node();
  return finish(x.shape(), std::move(out), tracking({&x}), [xn](std::span<const double> g) {
    auto& dst = xn->ensure_grad();
    const auto& xs = *xn->values;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xs[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dst[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw IndexError("mean_over_axis: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<double> out(outer * inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
    }
  }
  for (double& v : out) v /= double(n);
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) shape.push_back(s[i]);
  }
  NodePtr xn = x.node();
  return finish(std::move(shape), std::move(out), tracking({&x}),
                [xn, outer, inner, n](std::span<const double> g) {
                  auto& dst = xn->ensure_grad();
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t k = 0; k < n; ++k) {
                      for (std::size_t i = 0; i < inner; ++i) {
                        dst[(o * n + k) * inner + i] += g[o * inner + i] / double(n);
                      }
                    }
                  }
                });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits", logits, targets);
  const auto z = logits.values(), y = targets.values();
  const std::size_t n = z.size();
  if (n == 0) throw DimensionError("bce_with_logits: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw ValidationError("bce_with_logits: target " + std::to_string(y[i]) + " at index " +
                            std::to_string(i) + " is not binary");
    }
    // log(1 + exp(-z)) for y = 1, log(1 + exp(z)) for y = 0.
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  NodePtr zn = logits.node(), yn = targets.node();
  return finish(Shape{}, {total / double(n)}, tracking({&logits}),
                [zn, yn, n](std::span<const double> g) {
                  auto& dst = zn->ensure_grad();
                  const auto& zs = *zn->values;
                  const auto& ys = *yn->values;
                  for (std::size_t i = 0; i < n; ++i) {
                    const double e = std::exp(-std::abs(zs[i]));
                    const double sig = zs[i] >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
                    dst[i] += g[0] * (sig - ys[i]) / double(n);
                  }
                });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.shape()[1] != x.shape()[1] ||
      weight.shape()[2] != weight.shape()[3]) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " does not fit weight " +
                         shape_string(weight.shape()));
  }
  kernels::ConvShape cs;
  cs.batch = x.shape()[0];
  cs.in_channels = x.shape()[1];
  cs.height = x.shape()[2];
  cs.width = x.shape()[3];
  cs.out_channels = weight.shape()[0];
  cs.kernel = weight.shape()[2];
  cs.stride = stride;
  cs.padding = padding;
  if (stride == 0 || cs.height + 2 * padding < cs.kernel || cs.width + 2 * padding < cs.kernel) {
    throw DimensionError("conv2d: kernel " + std::to_string(cs.kernel) + " does not fit input " +
                         shape_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cs.out_channels}) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()));
  }
  std::vector<double> out(cs.output_size());
  std::span<const double> bv;
  if (bias.defined()) bv = bias.values();
  kp::conv2d_forward<double>(cs, x.values(), weight.values(), bv, out);
  NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return finish({cs.batch, cs.out_channels, cs.out_height(), cs.out_width()}, std::move(out),
                tracking({&x, &weight, &bias}), [xn, wn, bn, cs](std::span<const double> g) {
                  if (xn->requires_grad) {
                    kp::conv2d_backward_input<double>(cs, g, view(*wn->values),
                                                      xn->ensure_grad());
                  }
                  std::span<double> gw, gb;
                  if (wn->requires_grad) gw = wn->ensure_grad();
                  if (bn && bn->requires_grad) gb = bn->ensure_grad();
                  if (!gw.empty() || !gb.empty()) {
                    if (gw.empty()) {
                      // Weight gradient is not wanted but the kernel fills both; use scratch.
                      std::vector<double> scratch(cs.weight_size());
                      kp::conv2d_backward_weight<double>(cs, view(*xn->values), g, scratch, gb);
                    } else {
                      kp::conv2d_backward_weight<double>(cs, view(*xn->values), g, gw, gb);
                    }
                  }
                });
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double h) {
  if (!(h > 0.0)) throw ValidationError("grad_check: step must be positive");
  for (Tensor& p : params) p.zero_grad();
  Tape tape;
  Tensor out;
  {
    Tape::Scope scope(&tape);
    out = f();
  }
  if (out.numel() != 1) throw DimensionError("grad_check: function is not scalar");
  if (!std::isfinite(out.item())) throw NumericError("grad_check: f is not finite");
  if (out.requires_grad()) tape.backward(out);

  auto evaluate = [&]() {
    Tape::Scope scope(nullptr);
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: f is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
    auto vals = param.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = evaluate();
      vals[i] = orig - h;
      const double fm = evaluate();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace ctssg
