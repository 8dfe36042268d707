#pragma once

#include <cstdint>
#include <vector>

#include "hrhf/adam.hpp"
#include "hrhf/labelmap.hpp"
#include "hrhf/rng.hpp"
#include "hrhf/segnet.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

enum class KdScope { Both, RealOnly, FakeOnly };

struct DistillConfig {
  double lambda = 1.0;
  int ratio_real = 1;
  int ratio_fake = 1;
  int batch = 8;
  AdamConfig adam;
  KdScope kd_scope = KdScope::Both;
  double log_floor = 1e-12;
};

// One pooled training sample. `new_labels` carries step-local new-class ids
// (0 = none, j in 1..n_new); fake samples are all zeros. `teacher_scores`
// may be cached ([H,W,C_old]) or left empty to be computed at batch time.
struct PoolSample {
  Tensor image;  // [H,W,3]
  LabelMap new_labels;
  Tensor teacher_scores;
};

struct SampleBatch {
  Tensor images;  // [B,H,W,3]
  std::vector<std::uint8_t> is_fake;
  std::vector<LabelMap> new_labels;
  std::vector<Tensor> teacher_scores;  // empty slots filled by the train step
  bool fake_fallback = false;          // fake quota served from the real pool
};

// Fold the probabilities of channels >= old_count into the background
// channel; old foreground channels pass through. Per-pixel mass is conserved
// by construction.
Tensor probability_rearrange(const Tensor& s_t, int old_count);

// Per pixel, argmax over [teacher probabilities (C_old) || new-class one-hot
// (C_total - C_old)]; ties break toward the highest channel, so ground truth
// beats a saturated teacher probability.
LabelMap label_merge(const Tensor& teacher_map, const LabelMap& new_labels,
                     int total_classes);

// -(1/(rows)) * sum_u sum_c teacher[u,c] * log(student[u,c]), log argument
// floored. Maps must be probability maps of equal shape.
double kd_loss(const Tensor& teacher, const Tensor& rearranged_student,
               double log_floor = 1e-12);

// Pixel-averaged cross-entropy against a hard label map; ignored pixels are
// excluded from both the sum and the denominator.
double seg_loss(const LabelMap& y, const Tensor& s_t,
                double log_floor = 1e-12);

// Without-replacement cursor over shuffled pool orders; reshuffles a pool
// when it runs out.
struct EpochState {
  std::vector<int> real_order;
  std::vector<int> fake_order;
  size_t real_pos = 0;
  size_t fake_pos = 0;
};

// ceil(batch * a/(a+b)) real samples and the remainder fake for ratio a:b.
// An empty fake pool with a nonzero fake quota falls back to all-real and
// flags the batch.
SampleBatch make_batch(const std::vector<PoolSample>& real_pool,
                       const std::vector<PoolSample>& fake_pool,
                       const DistillConfig& cfg, Rng& rng, EpochState& epoch);

struct StepLosses {
  double kd = 0.0;
  double seg = 0.0;
  double total = 0.0;
  bool applied = false;
};

// One optimizer step on the student: teacher eval-mode forward for samples
// without cached scores, Probability Rearrange + KD loss, Label Merge + seg
// loss, total = lambda * kd + seg. A non-finite loss or gradient rejects the
// step and leaves the student untouched.
StepLosses hrhf_train_step(const ModelState& teacher, ModelState& student,
                           SampleBatch& batch, const DistillConfig& cfg,
                           AdamState& opt);

}  // namespace hrhf
