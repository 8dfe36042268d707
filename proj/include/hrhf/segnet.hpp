#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrhf/graph.hpp"
#include "hrhf/labelmap.hpp"
#include "hrhf/rng.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

// Stride-1 toy FCN: `blocks` conv3x3+bn+relu stages at a fixed width, then a
// 1x1 conv head to `class_count` channels and a per-pixel softmax. Output
// resolution equals input resolution.
struct ArchConfig {
  int blocks = 4;
  int channels = 16;
  int kernel = 3;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double head_init_sigma = 0.01;
};

bool operator==(const ArchConfig& a, const ArchConfig& b);

struct ConvBlock {
  Tensor w;  // [K,K,Ci,Co]
  Tensor b;
  Tensor gamma;
  Tensor beta;
  Tensor run_mean;
  Tensor run_var;
};

struct ModelState {
  ArchConfig arch;
  int class_count = 0;
  int step_index = 0;
  std::vector<ConvBlock> blocks;
  Tensor head_w;  // [1,1,C,classes]
  Tensor head_b;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<std::string> param_names() const;
  std::int64_t param_count() const;
};

bool bit_equal(const ModelState& a, const ModelState& b);

ModelState init_model(const ArchConfig& arch, int class_count, Rng& rng);

// Student initialization for a new step: shared weights copied, head gains
// `added_classes` channels drawn from N(0, head_init_sigma^2). Zero added
// classes returns a bit-equal copy.
ModelState head_expand(const ModelState& teacher, int added_classes, Rng& rng);

enum class BnMode { Train, Eval };

// Shared graph construction for training, inversion, and inference. In Train
// mode batch statistics normalize and `stat_mean/stat_var` point at them; in
// Eval mode running statistics are baked in as constants and the stat nodes
// are added only when collect_stats is set.
struct ForwardGraph {
  Graph g;
  int image = -1;
  int logits = -1;
  int scores = -1;
  std::vector<int> params;
  std::vector<int> stat_mean;
  std::vector<int> stat_var;
};

ForwardGraph build_forward(const ModelState& m, std::int64_t batch,
                           std::int64_t H, std::int64_t W, BnMode mode,
                           bool params_trainable, bool image_trainable,
                           bool collect_stats);

void bind_params(const ModelState& m, const ForwardGraph& fg, Bindings& b);

struct ForwardOut {
  Tensor scores;  // [N,H,W,C], per-pixel simplex
  std::vector<Tensor> batch_mean;
  std::vector<Tensor> batch_var;
};

// Train mode updates the model's running statistics (momentum per arch).
ForwardOut forward(ModelState& m, const Tensor& images, BnMode mode,
                   bool want_stats = false);
ForwardOut forward_eval(const ModelState& m, const Tensor& images,
                        bool want_stats = false);

// Given already-computed batch stats, fold them into the running estimates.
void commit_running_stats(ModelState& m, const std::vector<Tensor>& mean,
                          const std::vector<Tensor>& var);

// Eval-mode forward + per-pixel argmax; ties break toward the lowest channel.
LabelMap predict(const ModelState& m, const Tensor& image);

LabelMap argmax_map(const Tensor& scores);  // [H,W,C] or [1,H,W,C]

}  // namespace hrhf
