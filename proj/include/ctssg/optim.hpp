#pragma once

#include <cstddef>
#include <vector>

#include "ctssg/tensor.hpp"

namespace ctssg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t warmup_steps = 100;

  void validate() const;
};

/// Linear warmup: min(1, step / warmup_steps); 1 when warmup is disabled.
double warmup_factor(std::size_t step, std::size_t warmup_steps);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Zeroed moments shaped like `params`.
AdamState make_adam_state(const std::vector<Tensor>& params);

/// One bias-corrected Adam update at 1-based `step`, writing into the
/// parameter storage. Throws NumericError before touching anything if a
/// gradient is not finite.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, std::size_t step, const AdamConfig& cfg);

}  // namespace ctssg
