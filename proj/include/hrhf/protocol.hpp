#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hrhf/dataset.hpp"
#include "hrhf/distillation.hpp"
#include "hrhf/seginversion.hpp"
#include "hrhf/segnet.hpp"

namespace hrhf {

enum class Method { HRHF, FT, Joint, NoiseReplay, HRHFNoKD, Baseline };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
  int epochs_step0 = 30;
  int epochs_incr = 20;
  int batch = 8;
  double lr = 1e-3;
  double lambda = 1.0;
  int ratio_real = 1;
  int ratio_fake = 1;
  KdScope kd_scope = KdScope::Both;
  double fake_pool_factor = 2.0;  // fake pool size vs real step data size
  int fake_pool_min = 8;
  double log_floor = 1e-12;
};

struct RunPlan {
  StepSpec steps;
  Method method = Method::HRHF;
  ArchConfig arch;
  TrainConfig train;
  InversionConfig inversion;
  std::uint64_t seed = 1;
  std::string config_hash;
};

// Per-class IoU over the cumulative class space (background = 0). Classes
// with an empty prediction/ground-truth union carry NaN and are excluded
// from group means. Groups: old = background + classes of earlier steps,
// new = the evaluated step's classes, all = their union.
struct MetricsReport {
  int step = 0;
  std::string method;
  std::vector<double> per_class_iou;
  std::vector<int> old_group;
  std::vector<int> new_group;
  double miou_old = 0.0;
  double miou_new = 0.0;
  double miou_all = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct EpochLoss {
  int step = 0;
  int epoch = 0;
  double kd = 0.0;
  double seg = 0.0;
  double total = 0.0;
};

using LossSink = std::function<void(const EpochLoss&)>;
using WarnSink = std::function<void(const std::string&)>;
using FakesSink = std::function<void(int step, const std::vector<FakeSample>&)>;

MetricsReport evaluate_model(const ModelState& model,
                             const std::vector<Scene>& scenes,
                             const StepSpec& spec, int step);

// Supervised step-0 training (per-pixel cross-entropy on step-0 labels).
ModelState train_initial(const RunPlan& plan,
                         const std::vector<Scene>& step0_scenes,
                         const LossSink& on_epoch = nullptr);

// One incremental step under the plan's method. HRHF builds the fake pool by
// inverting the previous model; NoiseReplay swaps in uniform noise;
// Baseline runs with an empty fake pool; HRHFNoKD sets lambda = 0; FT trains
// on the new data alone.
ModelState run_step(const RunPlan& plan, const ModelState& prev,
                    const std::vector<Scene>& step_scenes, int step,
                    const LossSink& on_epoch = nullptr,
                    const WarnSink& on_warn = nullptr,
                    std::vector<FakeSample>* out_fakes = nullptr);

struct RunResult {
  std::vector<MetricsReport> reports;
  std::vector<ModelState> step_models;  // theta_0 .. theta_T (Joint: one)
};

RunResult run_plan(const RunPlan& plan, const std::vector<Scene>& train_scenes,
                   const std::vector<Scene>& test_scenes,
                   const LossSink& on_epoch = nullptr,
                   const WarnSink& on_warn = nullptr,
                   const FakesSink& on_fakes = nullptr);

}  // namespace hrhf
