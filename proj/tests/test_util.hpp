#pragma once

#include <vector>

#include "hrhf/rng.hpp"
#include "hrhf/segnet.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf::testutil {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// random per-pixel probability map [H,W,C] (or [N,H,W,C])
inline Tensor random_prob_map(Shape s, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(s));
  const auto C = t.shape.back();
  const auto rows = t.numel() / C;
  for (std::int64_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double v = 0.05 + rng.uniform();
      t[r * C + c] = v;
      sum += v;
    }
    for (std::int64_t c = 0; c < C; ++c) t[r * C + c] /= sum;
  }
  return t;
}

inline ModelState tiny_model(int blocks, int channels, int classes,
                             std::uint64_t seed) {
  ArchConfig arch;
  arch.blocks = blocks;
  arch.channels = channels;
  Rng rng(seed);
  return init_model(arch, classes, rng);
}

}  // namespace hrhf::testutil
