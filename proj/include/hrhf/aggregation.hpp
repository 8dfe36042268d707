#pragma once

#include <vector>

#include "hrhf/rng.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

enum class AggregationKind { SAA, AVG, MAX };

struct AggregationSpec {
  AggregationKind kind = AggregationKind::SAA;
  // candidate temperatures for per-(image, class) draws
  std::vector<double> r_set{0.5, 1.0, 5.0, 10.0, 20.0};
};

// Normalized log-sum-exp over the spatial extent, per class:
//   y_k = (1/r) * log( (1/(H*W)) * sum_ij exp(r * s[i,j,k]) )
// Stabilized by subtracting the per-class max. Interpolates between the
// spatial mean (r -> 0) and the spatial max (r -> inf); r sets how many
// pixels have to carry the class for the pooled score to rise, which is what
// controls the synthesized object's extent.
Tensor saa_pool(const Tensor& score_map, double r);
Tensor saa_pool(const Tensor& score_map, const std::vector<double>& r_per_class);

Tensor avg_pool(const Tensor& score_map);
Tensor max_pool(const Tensor& score_map);

// One independent uniform draw from r_set per class.
std::vector<double> sample_r(Rng& rng, const std::vector<double>& r_set,
                             int class_count);

}  // namespace hrhf
