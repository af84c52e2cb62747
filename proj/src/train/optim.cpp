#include "ctssg/optim.hpp"

#include <cmath>

#include "ctssg/errors.hpp"

namespace ctssg {

void AdamConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ValidationError("adam eps must be positive");
}

double warmup_factor(std::size_t step, std::size_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return 1.0;
  return double(step) / double(warmup_steps);
}

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, std::size_t step, const AdamConfig& cfg) {
  if (step == 0) throw ValidationError("adam_step: step counter starts at 1");
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel() || state.m[p].size() != params[p].numel() ||
        state.v[p].size() != params[p].numel()) {
      throw DimensionError("adam_step: size mismatch for parameter " + std::to_string(p));
    }
    for (double g : grads[p]) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(p) +
                           " at step " + std::to_string(step));
      }
    }
  }
  const double lr = cfg.lr * warmup_factor(step, cfg.warmup_steps);
  const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace ctssg
