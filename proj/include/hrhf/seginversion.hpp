#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrhf/aggregation.hpp"
#include "hrhf/rng.hpp"
#include "hrhf/segnet.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

struct InversionConfig {
  int steps = 300;
  double lr = 0.25;
  int batch = 8;  // images synthesized per invert() call when targets omitted
  std::int64_t resolution = 64;
  double stop_loss = 0.05;
  double w_tv = 1e-2;
  double w_l2 = 1e-4;
  double w_feat = 1e-2;
  std::vector<double> r_set{0.5, 1.0, 5.0, 10.0, 20.0};
  AggregationKind aggregation = AggregationKind::SAA;
  bool aggregate_logits = false;  // default: pool the probability map
  // target policy: one base class round-robin, a second with this probability
  int max_target_classes = 2;
  double extra_class_prob = 0.3;
  double log_floor = 1e-12;
};

// Multi-hot over the teacher's class space; channel 0 (background) is never
// a target.
struct TargetVector {
  std::vector<std::uint8_t> y;

  int class_count() const { return static_cast<int>(y.size()); }
  std::vector<int> active() const;
  static TargetVector single(int class_count, int class_id);
};

struct FakeSample {
  Tensor image;  // [H,W,3] in [0,1]
  TargetVector target;
  std::vector<double> r;  // per class
  double final_loss = 0.0;
  double initial_cls = 0.0;
  double final_cls = 0.0;
  Tensor teacher_scores;  // [H,W,C^{t-1}], cached from the final evaluation
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;
};

// w_tv * TV(x) + w_l2 * |x|^2; TV is the anisotropic squared-difference
// total variation normalized by pixel count.
double image_prior(const Tensor& x, double w_tv, double w_l2);

// sum over layers of |mu_batch - mu_run|^2 + |var_batch - var_run|^2
double feature_reg(const std::vector<Tensor>& batch_mean,
                   const std::vector<Tensor>& batch_var,
                   const ModelState& model);

// Full objective for one candidate image: per-target-class cross-entropy on
// the aggregated scores plus the regularizers.
double inversion_loss(const ModelState& teacher, const Tensor& x,
                      const TargetVector& y, const std::vector<double>& r,
                      const InversionConfig& cfg);

// The loss graph invert() optimizes: image leaf, frozen teacher forward,
// aggregation, classification term at `cls`, full objective at `loss`.
struct InversionGraph {
  ForwardGraph fg;
  int loss = -1;
  int cls = -1;
};

InversionGraph build_inversion_graph(const ModelState& teacher,
                                     std::int64_t H, std::int64_t W,
                                     const TargetVector& target,
                                     const std::vector<double>& r,
                                     const InversionConfig& cfg);

// Round-robin base class over the teacher's foreground channels, optionally
// joined by one extra class per the config policy.
std::vector<TargetVector> make_targets(int count, int class_count,
                                       const InversionConfig& cfg, Rng& rng);

// Adam on the input image under the frozen teacher. Deterministic given
// (teacher, targets, cfg, rng); samples run on independent child RNG streams
// and may execute in parallel. Samples whose loss turns non-finite are
// dropped with a diagnostic.
std::vector<FakeSample> invert(const ModelState& teacher,
                               const std::vector<TargetVector>& targets,
                               const InversionConfig& cfg, Rng& rng,
                               std::vector<std::string>* diagnostics = nullptr);

}  // namespace hrhf
