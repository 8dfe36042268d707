#include "hrhf/distillation.hpp"

#include <algorithm>
#include <cmath>

#include "hrhf/kernels.hpp"

namespace hrhf {

Tensor probability_rearrange(const Tensor& s_t, int old_count) {
  if (s_t.rank() < 2)
    throw Error("probability_rearrange: rank must be >= 2");
  const auto C = s_t.shape.back();
  if (old_count < 1 || old_count > C)
    throw Error("probability_rearrange: old channel count " +
                std::to_string(old_count) + " incompatible with C=" +
                std::to_string(C));
  Graph g;
  const int x = g.input("s_t", s_t.shape, false);
  const int y = g.rearrange(x, old_count);
  Bindings b;
  b[x] = s_t;
  return run_forward(g, b).at(y);
}

LabelMap label_merge(const Tensor& teacher_map, const LabelMap& new_labels,
                     int total_classes) {
  if (teacher_map.rank() != 3)
    throw Error("label_merge: teacher map must be [H,W,C]");
  const auto H = teacher_map.shape[0];
  const auto W = teacher_map.shape[1];
  const auto C_old = teacher_map.shape[2];
  if (new_labels.height != H || new_labels.width != W)
    throw Error("label_merge: spatial shape mismatch, teacher " +
                shape_str(teacher_map.shape) + " vs labels " +
                std::to_string(new_labels.height) + "x" +
                std::to_string(new_labels.width));
  const int n_new = total_classes - static_cast<int>(C_old);
  if (n_new < 0) throw Error("label_merge: total classes below teacher's");

  LabelMap out = LabelMap::filled(H, W, 0);
  for (std::int64_t i = 0; i < H * W; ++i) {
    const double* t = teacher_map.data.data() + i * C_old;
    const int nl = new_labels.idx[static_cast<size_t>(i)];
    if (nl < 0 || nl > n_new)
      throw Error("label_merge: new-class id " + std::to_string(nl) +
                  " outside 0.." + std::to_string(n_new));
    // argmax over the concatenated [teacher || one-hot] vector, ties to the
    // highest channel index
    int best = 0;
    double bv = t[0];
    for (std::int64_t c = 1; c < C_old; ++c)
      if (t[c] >= bv) {
        bv = t[c];
        best = static_cast<int>(c);
      }
    for (int j = 1; j <= n_new; ++j) {
      const double v = (j == nl) ? 1.0 : 0.0;
      if (v >= bv) {
        bv = v;
        best = static_cast<int>(C_old) + j - 1;
      }
    }
    out.idx[static_cast<size_t>(i)] = best;
  }
  return out;
}

double kd_loss(const Tensor& teacher, const Tensor& rearranged_student,
               double log_floor) {
  if (!teacher.same_shape(rearranged_student))
    throw Error("kd_loss: shape mismatch " + shape_str(teacher.shape) +
                " vs " + shape_str(rearranged_student.shape));
  if (teacher.rank() < 2) throw Error("kd_loss: rank must be >= 2");
  const auto C = teacher.shape.back();
  const auto rows = teacher.numel() / C;
  double s = 0.0;
  for (std::int64_t i = 0; i < teacher.numel(); ++i) {
    const double t = teacher[i];
    if (t == 0.0) continue;  // 0 * log 0 = 0
    s += t * std::log(std::max(rearranged_student[i], log_floor));
  }
  return -s / static_cast<double>(rows);
}

double seg_loss(const LabelMap& y, const Tensor& s_t, double log_floor) {
  if (s_t.rank() != 3) throw Error("seg_loss: scores must be [H,W,C]");
  if (y.height != s_t.shape[0] || y.width != s_t.shape[1])
    throw Error("seg_loss: spatial shape mismatch");
  const auto C = s_t.shape[2];
  double s = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t i = 0; i < y.pixels(); ++i) {
    if (y.ignored(i)) continue;
    const int c = y.idx[static_cast<size_t>(i)];
    if (c < 0 || c >= C)
      throw Error("seg_loss: label " + std::to_string(c) + " out of range");
    s += std::log(std::max(s_t[i * C + c], log_floor));
    ++counted;
  }
  if (counted == 0) return 0.0;
  return -s / static_cast<double>(counted);
}

namespace {

void reshuffle(std::vector<int>& order, size_t n, Rng& rng) {
  order.resize(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  for (size_t i = n; i > 1; --i) {
    const size_t j = rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
}

int draw(const std::vector<PoolSample>& pool, std::vector<int>& order,
         size_t& pos, Rng& rng) {
  if (pos >= order.size()) {
    reshuffle(order, pool.size(), rng);
    pos = 0;
  }
  return order[pos++];
}

}  // namespace

SampleBatch make_batch(const std::vector<PoolSample>& real_pool,
                       const std::vector<PoolSample>& fake_pool,
                       const DistillConfig& cfg, Rng& rng,
                       EpochState& epoch) {
  if (cfg.batch < 1) throw Error("make_batch: batch must be >= 1");
  if (cfg.ratio_real < 1 || cfg.ratio_fake < 1)
    throw Error("make_batch: ratio parts must be positive");
  const int a = cfg.ratio_real;
  const int b = cfg.ratio_fake;
  int n_real = static_cast<int>(
      (static_cast<std::int64_t>(cfg.batch) * a + (a + b) - 1) / (a + b));
  int n_fake = cfg.batch - n_real;

  SampleBatch out;
  if (n_fake > 0 && fake_pool.empty()) {
    out.fake_fallback = true;
    n_real = cfg.batch;
    n_fake = 0;
  }
  if (real_pool.empty() && n_real > 0)
    throw Error("make_batch: real pool is empty");

  std::vector<const PoolSample*> picked;
  std::vector<std::uint8_t> fake_flag;
  for (int i = 0; i < n_real; ++i) {
    picked.push_back(
        &real_pool[static_cast<size_t>(draw(real_pool, epoch.real_order,
                                            epoch.real_pos, rng))]);
    fake_flag.push_back(0);
  }
  for (int i = 0; i < n_fake; ++i) {
    picked.push_back(
        &fake_pool[static_cast<size_t>(draw(fake_pool, epoch.fake_order,
                                            epoch.fake_pos, rng))]);
    fake_flag.push_back(1);
  }

  // deterministic in-batch shuffle
  std::vector<int> perm(picked.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  for (size_t i = perm.size(); i > 1; --i) {
    const size_t j = rng.uniform_int(i);
    std::swap(perm[i - 1], perm[j]);
  }

  const auto H = picked[0]->image.shape[0];
  const auto W = picked[0]->image.shape[1];
  const auto B = static_cast<std::int64_t>(picked.size());
  out.images = Tensor::zeros({B, H, W, 3});
  for (std::int64_t k = 0; k < B; ++k) {
    const PoolSample& ps = *picked[static_cast<size_t>(perm[k])];
    if (ps.image.shape != Shape{H, W, 3})
      throw Error("make_batch: inconsistent image shapes in pool");
    std::copy(ps.image.data.begin(), ps.image.data.end(),
              out.images.data.begin() + k * H * W * 3);
    out.is_fake.push_back(fake_flag[static_cast<size_t>(perm[k])]);
    out.new_labels.push_back(ps.new_labels);
    out.teacher_scores.push_back(ps.teacher_scores);
  }
  return out;
}

StepLosses hrhf_train_step(const ModelState& teacher, ModelState& student,
                           SampleBatch& batch, const DistillConfig& cfg,
                           AdamState& opt) {
  const auto B = batch.images.shape[0];
  const auto H = batch.images.shape[1];
  const auto W = batch.images.shape[2];
  const int C_old = teacher.class_count;
  const int C_new = student.class_count;
  if (C_new < C_old)
    throw Error("hrhf_train_step: student has fewer classes than teacher");

  StepLosses out;
  try {
    // teacher maps for samples without a cached one (eval mode, no stat
    // updates)
    std::vector<std::int64_t> missing;
    for (std::int64_t i = 0; i < B; ++i)
      if (batch.teacher_scores[static_cast<size_t>(i)].numel() == 0)
        missing.push_back(i);
    if (!missing.empty()) {
      Tensor sub = Tensor::zeros(
          {static_cast<std::int64_t>(missing.size()), H, W, 3});
      for (size_t k = 0; k < missing.size(); ++k)
        std::copy(batch.images.data.begin() + missing[k] * H * W * 3,
                  batch.images.data.begin() + (missing[k] + 1) * H * W * 3,
                  sub.data.begin() +
                      static_cast<std::int64_t>(k) * H * W * 3);
      const Tensor scores = forward_eval(teacher, sub).scores;
      for (size_t k = 0; k < missing.size(); ++k) {
        Tensor m = Tensor::zeros({H, W, C_old});
        std::copy(scores.data.begin() +
                      static_cast<std::int64_t>(k) * H * W * C_old,
                  scores.data.begin() +
                      static_cast<std::int64_t>(k + 1) * H * W * C_old,
                  m.data.begin());
        batch.teacher_scores[static_cast<size_t>(missing[k])] = std::move(m);
      }
    }

    // merged hard labels per sample
    std::vector<LabelMap> merged;
    merged.reserve(static_cast<size_t>(B));
    for (std::int64_t i = 0; i < B; ++i)
      merged.push_back(label_merge(batch.teacher_scores[static_cast<size_t>(i)],
                                   batch.new_labels[static_cast<size_t>(i)],
                                   C_new));

    // student graph: train-mode forward, rearrange, both losses
    ForwardGraph fg = build_forward(student, B, H, W, BnMode::Train,
                                    /*params_trainable=*/true,
                                    /*image_trainable=*/false,
                                    /*collect_stats=*/false);
    Graph& g = fg.g;
    const int rearranged = g.rearrange(fg.scores, C_old);

    // KD weights: teacher probabilities scaled by 1/(n_included * H * W),
    // zeroed for samples outside the KD scope
    std::int64_t n_inc = 0;
    for (std::int64_t i = 0; i < B; ++i) {
      const bool fake = batch.is_fake[static_cast<size_t>(i)] != 0;
      const bool inc = cfg.kd_scope == KdScope::Both ||
                       (fake && cfg.kd_scope == KdScope::FakeOnly) ||
                       (!fake && cfg.kd_scope == KdScope::RealOnly);
      if (inc) ++n_inc;
    }
    Tensor kd_w = Tensor::zeros({B, H, W, C_old});
    if (n_inc > 0) {
      const double scale =
          -1.0 / static_cast<double>(n_inc * H * W);
      for (std::int64_t i = 0; i < B; ++i) {
        const bool fake = batch.is_fake[static_cast<size_t>(i)] != 0;
        const bool inc = cfg.kd_scope == KdScope::Both ||
                         (fake && cfg.kd_scope == KdScope::FakeOnly) ||
                         (!fake && cfg.kd_scope == KdScope::RealOnly);
        if (!inc) continue;
        const Tensor& t = batch.teacher_scores[static_cast<size_t>(i)];
        for (std::int64_t k = 0; k < H * W * C_old; ++k)
          kd_w[i * H * W * C_old + k] = t[k] * scale;
      }
    }
    const int kd_node = g.sum(g.mul(g.constant(std::move(kd_w), "kd_w"),
                                    g.log_floor(rearranged, cfg.log_floor)));

    // seg weights: merged one-hot scaled by -1/(total labeled pixels)
    Tensor seg_w = Tensor::zeros({B, H, W, C_new});
    {
      std::int64_t labeled = 0;
      for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t p = 0; p < H * W; ++p)
          if (!merged[static_cast<size_t>(i)].ignored(p)) ++labeled;
      const double scale = labeled > 0
                               ? -1.0 / static_cast<double>(labeled)
                               : 0.0;
      for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t p = 0; p < H * W; ++p) {
          const auto& m = merged[static_cast<size_t>(i)];
          if (m.ignored(p)) continue;
          const int c = m.idx[static_cast<size_t>(p)];
          seg_w[(i * H * W + p) * C_new + c] = scale;
        }
    }
    const int seg_node = g.sum(g.mul(g.constant(std::move(seg_w), "seg_w"),
                                     g.log_floor(fg.scores, cfg.log_floor)));

    const int total_node =
        g.add(g.mul_scalar(kd_node, cfg.lambda), seg_node);

    Bindings b;
    b[fg.image] = batch.images;
    bind_params(student, fg, b);
    Forward fwd = run_forward(g, b);
    out.kd = fwd.at(kd_node)[0];
    out.seg = fwd.at(seg_node)[0];
    out.total = fwd.at(total_node)[0];

    BackwardResult bk =
        run_backward(g, fwd, total_node, Tensor::scalar(1.0));

    auto params = student.params();
    std::vector<const Tensor*> grads;
    grads.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      const int id = fg.params[i];
      if (!bk.has[static_cast<size_t>(id)])
        throw Error("hrhf_train_step: missing gradient for parameter " +
                    std::to_string(i));
      grads.push_back(&bk.at(id));
    }
    adam_step(params, grads, opt);

    // batch statistics feed the running estimates only after a committed step
    std::vector<Tensor> means, vars;
    for (int id : fg.stat_mean) means.push_back(fwd.at(id));
    for (int id : fg.stat_var) vars.push_back(fwd.at(id));
    commit_running_stats(student, means, vars);
    out.applied = true;
  } catch (const NonFiniteError&) {
    // adam_step validates every gradient before mutating anything, so the
    // student and optimizer state are untouched here
    out.applied = false;
  }
  return out;
}

}  // namespace hrhf
