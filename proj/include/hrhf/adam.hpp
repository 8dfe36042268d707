#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hrhf/tensor.hpp"

namespace hrhf {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment per parameter tensor plus the shared step counter.
struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;

  static AdamState init(std::span<const Tensor* const> params, AdamConfig cfg);
};

// Standard bias-corrected Adam update, in place. Rejects non-finite
// gradients and any length mismatch against the recorded state.
void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state);

}  // namespace hrhf
