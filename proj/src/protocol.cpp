#include "hrhf/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hrhf/kernels.hpp"

namespace hrhf {

namespace {

// fixed stream ids off the plan seed; keep stable, reports are reproduced
// from (config, seed) alone
constexpr std::uint64_t kStreamInit = 10;
constexpr std::uint64_t kStreamTrainBase = 100;
constexpr std::uint64_t kStreamInvertBase = 200;
constexpr std::uint64_t kStreamExpandBase = 300;
constexpr std::uint64_t kStreamNoiseBase = 400;

std::vector<int> shuffled_indices(size_t n, Rng& rng) {
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (size_t i = n; i > 1; --i) {
    const size_t j = rng.uniform_int(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// one supervised cross-entropy step on a batch of (image, hard label) pairs
double supervised_step(ModelState& model, const Tensor& images,
                       const std::vector<const LabelMap*>& labels,
                       double log_floor, AdamState& opt) {
  const auto B = images.shape[0];
  const auto H = images.shape[1];
  const auto W = images.shape[2];
  const int C = model.class_count;

  ForwardGraph fg = build_forward(model, B, H, W, BnMode::Train, true, false,
                                  false);
  Graph& g = fg.g;
  Tensor wts = Tensor::zeros({B, H, W, C});
  std::int64_t labeled = 0;
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t p = 0; p < H * W; ++p)
      if (!labels[static_cast<size_t>(i)]->ignored(p)) ++labeled;
  const double scale =
      labeled > 0 ? -1.0 / static_cast<double>(labeled) : 0.0;
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t p = 0; p < H * W; ++p) {
      const LabelMap& m = *labels[static_cast<size_t>(i)];
      if (m.ignored(p)) continue;
      const int c = m.idx[static_cast<size_t>(p)];
      if (c < 0 || c >= C)
        throw Error("supervised_step: label " + std::to_string(c) +
                    " out of range for " + std::to_string(C) + " classes");
      wts[(i * H * W + p) * C + c] = scale;
    }
  const int loss = g.sum(g.mul(g.constant(std::move(wts), "ce_w"),
                               g.log_floor(fg.scores, log_floor)));

  Bindings b;
  b[fg.image] = images;
  bind_params(model, fg, b);
  Forward fwd = run_forward(g, b);
  const double loss_v = fwd.at(loss)[0];

  BackwardResult bk = run_backward(g, fwd, loss, Tensor::scalar(1.0));
  auto params = model.params();
  std::vector<const Tensor*> grads;
  for (size_t i = 0; i < params.size(); ++i)
    grads.push_back(&bk.at(fg.params[i]));
  adam_step(params, grads, opt);

  std::vector<Tensor> means, vars;
  for (int id : fg.stat_mean) means.push_back(fwd.at(id));
  for (int id : fg.stat_var) vars.push_back(fwd.at(id));
  commit_running_stats(model, means, vars);
  return loss_v;
}

Tensor stack_images(const std::vector<Scene>& scenes,
                    const std::vector<int>& order, size_t from, size_t to) {
  const auto H = scenes[0].image.shape[0];
  const auto W = scenes[0].image.shape[1];
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(to - from), H, W, 3});
  for (size_t k = from; k < to; ++k) {
    const auto& img = scenes[static_cast<size_t>(order[k])].image;
    std::copy(img.data.begin(), img.data.end(),
              out.data.begin() +
                  static_cast<std::int64_t>(k - from) * H * W * 3);
  }
  return out;
}

void train_supervised(ModelState& model, const std::vector<Scene>& scenes,
                      const std::vector<LabelMap>& labels, int epochs,
                      int batch, double lr, double log_floor, Rng& rng,
                      int step, const LossSink& on_epoch) {
  if (scenes.empty()) throw Error("train_supervised: no scenes");
  AdamConfig ac;
  ac.lr = lr;
  auto params = model.params();
  std::vector<const Tensor*> cparams(params.begin(), params.end());
  AdamState opt = AdamState::init(cparams, ac);

  for (int e = 0; e < epochs; ++e) {
    const auto order = shuffled_indices(scenes.size(), rng);
    double total = 0.0;
    int batches = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch)) {
      const size_t end =
          std::min(order.size(), at + static_cast<size_t>(batch));
      Tensor images = stack_images(scenes, order, at, end);
      std::vector<const LabelMap*> lbl;
      for (size_t k = at; k < end; ++k)
        lbl.push_back(&labels[static_cast<size_t>(order[k])]);
      total += supervised_step(model, images, lbl, log_floor, opt);
      ++batches;
    }
    if (on_epoch)
      on_epoch({step, e, 0.0, total / std::max(batches, 1),
                total / std::max(batches, 1)});
  }
}

std::vector<PoolSample> real_pool_for_step(const std::vector<Scene>& scenes,
                                           const StepSpec& spec, int t) {
  const int c_prev = spec.class_count_at(t) -
                     static_cast<int>(
                         spec.step_classes[static_cast<size_t>(t)].size());
  std::vector<PoolSample> pool;
  pool.reserve(scenes.size());
  for (const auto& s : scenes) {
    PoolSample ps;
    ps.image = s.image;
    // step-local ids: cumulative index minus the previous head width, +1
    LabelMap lm = relabel_for_step(s, spec, t);
    for (auto& v : lm.idx)
      if (v != 0) v = v - c_prev + 1;
    ps.new_labels = std::move(lm);
    pool.push_back(std::move(ps));
  }
  return pool;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::HRHF: return "HRHF";
    case Method::FT: return "FT";
    case Method::Joint: return "Joint";
    case Method::NoiseReplay: return "NoiseReplay";
    case Method::HRHFNoKD: return "HRHF_noKD";
    case Method::Baseline: return "Baseline";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "HRHF") return Method::HRHF;
  if (name == "FT") return Method::FT;
  if (name == "Joint") return Method::Joint;
  if (name == "NoiseReplay") return Method::NoiseReplay;
  if (name == "HRHF_noKD") return Method::HRHFNoKD;
  if (name == "Baseline") return Method::Baseline;
  throw Error("unknown method '" + name + "'");
}

MetricsReport evaluate_model(const ModelState& model,
                             const std::vector<Scene>& scenes,
                             const StepSpec& spec, int step) {
  spec.validate();
  const int C_uni = spec.class_count_at(spec.num_steps() - 1);
  const int n = static_cast<int>(scenes.size());

  // per-scene confusion counts, reduced in fixed order (integer counts, so
  // the reduction is order-exact anyway)
  std::vector<std::vector<std::int64_t>> partial(
      static_cast<size_t>(n),
      std::vector<std::int64_t>(static_cast<size_t>(C_uni * C_uni), 0));
  const int T = kernels::thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(dynamic, 1) if (T > 1)
#endif
  for (int i = 0; i < n; ++i) {
    const Scene& sc = scenes[static_cast<size_t>(i)];
    const LabelMap pred = predict(model, sc.image);
    const LabelMap gt = full_labels(sc, spec);
    auto& cm = partial[static_cast<size_t>(i)];
    for (std::int64_t p = 0; p < gt.pixels(); ++p) {
      const int g = gt.idx[static_cast<size_t>(p)];
      const int q = pred.idx[static_cast<size_t>(p)];
      cm[static_cast<size_t>(g * C_uni + q)] += 1;
    }
  }
  std::vector<std::int64_t> conf(static_cast<size_t>(C_uni * C_uni), 0);
  for (const auto& cm : partial)
    for (size_t k = 0; k < conf.size(); ++k) conf[k] += cm[k];

  MetricsReport rep;
  rep.step = step;
  rep.per_class_iou.assign(static_cast<size_t>(C_uni),
                           std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < C_uni; ++c) {
    const std::int64_t tp = conf[static_cast<size_t>(c * C_uni + c)];
    std::int64_t fp = 0, fn = 0;
    for (int r = 0; r < C_uni; ++r) {
      if (r == c) continue;
      fp += conf[static_cast<size_t>(r * C_uni + c)];
      fn += conf[static_cast<size_t>(c * C_uni + r)];
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni > 0)
      rep.per_class_iou[static_cast<size_t>(c)] =
          static_cast<double>(tp) / static_cast<double>(uni);
  }

  rep.old_group.push_back(0);
  for (int t = 0; t < step; ++t)
    for (int c : spec.step_classes[static_cast<size_t>(t)])
      rep.old_group.push_back(spec.cumulative_index(c));
  for (int c : spec.step_classes[static_cast<size_t>(step)])
    rep.new_group.push_back(spec.cumulative_index(c));

  auto group_mean = [&](const std::vector<int>& ids) {
    double s = 0.0;
    int k = 0;
    for (int c : ids) {
      const double v = rep.per_class_iou[static_cast<size_t>(c)];
      if (!std::isnan(v)) {
        s += v;
        ++k;
      }
    }
    return k > 0 ? s / k : std::numeric_limits<double>::quiet_NaN();
  };
  rep.miou_old = group_mean(rep.old_group);
  rep.miou_new = group_mean(rep.new_group);
  std::vector<int> all = rep.old_group;
  all.insert(all.end(), rep.new_group.begin(), rep.new_group.end());
  rep.miou_all = group_mean(all);
  return rep;
}

ModelState train_initial(const RunPlan& plan,
                         const std::vector<Scene>& step0_scenes,
                         const LossSink& on_epoch) {
  plan.steps.validate();
  if (step0_scenes.empty()) throw Error("train_initial: no step-0 scenes");
  const Rng master(plan.seed);
  Rng init_rng = master.split(kStreamInit);
  Rng train_rng = master.split(kStreamTrainBase);

  ModelState model =
      init_model(plan.arch, plan.steps.class_count_at(0), init_rng);
  model.step_index = 0;
  std::vector<LabelMap> labels;
  labels.reserve(step0_scenes.size());
  for (const auto& s : step0_scenes)
    labels.push_back(relabel_for_step(s, plan.steps, 0));
  train_supervised(model, step0_scenes, labels, plan.train.epochs_step0,
                   plan.train.batch, plan.train.lr, plan.train.log_floor,
                   train_rng, 0, on_epoch);
  return model;
}

ModelState run_step(const RunPlan& plan, const ModelState& prev,
                    const std::vector<Scene>& step_scenes, int step,
                    const LossSink& on_epoch, const WarnSink& on_warn,
                    std::vector<FakeSample>* out_fakes) {
  plan.steps.validate();
  if (step < 1 || step >= plan.steps.num_steps())
    throw Error("run_step: bad step index");
  const Rng master(plan.seed);
  const int n_new = static_cast<int>(
      plan.steps.step_classes[static_cast<size_t>(step)].size());

  Rng expand_rng =
      master.split(kStreamExpandBase + static_cast<std::uint64_t>(step));
  ModelState student = head_expand(prev, n_new, expand_rng);
  student.step_index = step;

  if (plan.method == Method::FT) {
    if (plan.train.epochs_incr > 0) {
      std::vector<LabelMap> labels;
      labels.reserve(step_scenes.size());
      for (const auto& s : step_scenes)
        labels.push_back(relabel_for_step(s, plan.steps, step));
      Rng train_rng = master.split(kStreamTrainBase +
                                   static_cast<std::uint64_t>(step));
      train_supervised(student, step_scenes, labels, plan.train.epochs_incr,
                       plan.train.batch, plan.train.lr, plan.train.log_floor,
                       train_rng, step, on_epoch);
    }
    return student;
  }
  if (plan.method == Method::Joint)
    throw Error("run_step: Joint has no incremental steps");

  if (plan.train.epochs_incr == 0) return student;

  std::vector<PoolSample> real = real_pool_for_step(step_scenes, plan.steps,
                                                    step);
  if (real.empty()) throw Error("run_step: no scenes for step");

  // fake pool per method
  std::vector<PoolSample> fake;
  const int pool_size =
      std::max(plan.train.fake_pool_min,
               static_cast<int>(std::lround(plan.train.fake_pool_factor *
                                            static_cast<double>(real.size()))));
  if (plan.method == Method::HRHF || plan.method == Method::HRHFNoKD) {
    Rng inv_rng =
        master.split(kStreamInvertBase + static_cast<std::uint64_t>(step));
    InversionConfig icfg = plan.inversion;
    icfg.resolution = step_scenes[0].image.shape[0];
    const auto targets =
        make_targets(pool_size, prev.class_count, icfg, inv_rng);
    std::vector<std::string> diags;
    const auto samples = invert(prev, targets, icfg, inv_rng, &diags);
    if (on_warn)
      for (const auto& d : diags) on_warn("invert: " + d);
    const auto H = step_scenes[0].image.shape[0];
    const auto W = step_scenes[0].image.shape[1];
    for (const auto& fs : samples) {
      PoolSample ps;
      ps.image = fs.image;
      ps.new_labels = LabelMap::filled(H, W, 0);
      ps.teacher_scores = fs.teacher_scores;
      fake.push_back(std::move(ps));
    }
    if (out_fakes) *out_fakes = samples;
  } else if (plan.method == Method::NoiseReplay) {
    Rng noise_rng =
        master.split(kStreamNoiseBase + static_cast<std::uint64_t>(step));
    const auto H = step_scenes[0].image.shape[0];
    const auto W = step_scenes[0].image.shape[1];
    for (int i = 0; i < pool_size; ++i) {
      PoolSample ps;
      ps.image = Tensor::zeros({H, W, 3});
      for (auto& v : ps.image.data) v = noise_rng.uniform();
      ps.new_labels = LabelMap::filled(H, W, 0);
      fake.push_back(std::move(ps));
    }
  }
  // Baseline keeps the fake pool empty: the sampler falls back to all-real

  DistillConfig dc;
  dc.lambda = plan.method == Method::HRHFNoKD ? 0.0 : plan.train.lambda;
  dc.ratio_real = plan.train.ratio_real;
  dc.ratio_fake = plan.train.ratio_fake;
  dc.batch = plan.train.batch;
  dc.adam.lr = plan.train.lr;
  dc.kd_scope = plan.train.kd_scope;
  dc.log_floor = plan.train.log_floor;

  auto params = student.params();
  std::vector<const Tensor*> cparams(params.begin(), params.end());
  AdamState opt = AdamState::init(cparams, dc.adam);

  Rng train_rng =
      master.split(kStreamTrainBase + static_cast<std::uint64_t>(step));
  EpochState epoch_state;
  const int a = dc.ratio_real, b = dc.ratio_fake;
  const int real_quota = static_cast<int>(
      (static_cast<std::int64_t>(dc.batch) * a + (a + b) - 1) / (a + b));
  const int batches_per_epoch = static_cast<int>(
      (static_cast<std::int64_t>(real.size()) + real_quota - 1) / real_quota);

  bool warned_fallback = false;
  for (int e = 0; e < plan.train.epochs_incr; ++e) {
    double kd = 0.0, seg = 0.0, total = 0.0;
    int applied = 0;
    for (int bi = 0; bi < batches_per_epoch; ++bi) {
      SampleBatch batch = make_batch(real, fake, dc, train_rng, epoch_state);
      if (batch.fake_fallback && !warned_fallback) {
        warned_fallback = true;
        if (on_warn)
          on_warn("fake pool empty; batches fall back to real data only");
      }
      const StepLosses sl = hrhf_train_step(prev, student, batch, dc, opt);
      if (!sl.applied) {
        if (on_warn)
          on_warn("step " + std::to_string(step) + " epoch " +
                  std::to_string(e) + " batch " + std::to_string(bi) +
                  ": non-finite loss, step rejected");
        continue;
      }
      kd += sl.kd;
      seg += sl.seg;
      total += sl.total;
      ++applied;
    }
    const double inv = applied > 0 ? 1.0 / applied : 0.0;
    if (on_epoch) on_epoch({step, e, kd * inv, seg * inv, total * inv});
  }
  return student;
}

RunResult run_plan(const RunPlan& plan, const std::vector<Scene>& train_scenes,
                   const std::vector<Scene>& test_scenes,
                   const LossSink& on_epoch, const WarnSink& on_warn,
                   const FakesSink& on_fakes) {
  plan.steps.validate();
  RunResult out;

  if (plan.method == Method::Joint) {
    // single supervised pass over everything with complete labels
    const Rng master(plan.seed);
    Rng init_rng = master.split(kStreamInit);
    Rng train_rng = master.split(kStreamTrainBase);
    const int last = plan.steps.num_steps() - 1;
    ModelState model =
        init_model(plan.arch, plan.steps.class_count_at(last), init_rng);
    std::vector<LabelMap> labels;
    labels.reserve(train_scenes.size());
    for (const auto& s : train_scenes)
      labels.push_back(full_labels(s, plan.steps));
    train_supervised(model, train_scenes, labels, plan.train.epochs_step0,
                     plan.train.batch, plan.train.lr, plan.train.log_floor,
                     train_rng, 0, on_epoch);
    MetricsReport rep = evaluate_model(model, test_scenes, plan.steps, last);
    rep.method = method_name(plan.method);
    rep.seed = plan.seed;
    rep.config_hash = plan.config_hash;
    out.reports.push_back(std::move(rep));
    out.step_models.push_back(std::move(model));
    return out;
  }

  const auto splits = split_incremental(train_scenes, plan.steps);
  auto scenes_of = [&](int t) {
    std::vector<Scene> s;
    for (int idx : splits[static_cast<size_t>(t)])
      s.push_back(train_scenes[static_cast<size_t>(idx)]);
    return s;
  };

  ModelState model = train_initial(plan, scenes_of(0), on_epoch);
  {
    MetricsReport rep = evaluate_model(model, test_scenes, plan.steps, 0);
    rep.method = method_name(plan.method);
    rep.seed = plan.seed;
    rep.config_hash = plan.config_hash;
    out.reports.push_back(std::move(rep));
  }
  out.step_models.push_back(model);

  for (int t = 1; t < plan.steps.num_steps(); ++t) {
    std::vector<FakeSample> fakes;
    model = run_step(plan, model, scenes_of(t), t, on_epoch, on_warn,
                     on_fakes ? &fakes : nullptr);
    if (on_fakes) on_fakes(t, fakes);
    MetricsReport rep = evaluate_model(model, test_scenes, plan.steps, t);
    rep.method = method_name(plan.method);
    rep.seed = plan.seed;
    rep.config_hash = plan.config_hash;
    out.reports.push_back(std::move(rep));
    out.step_models.push_back(model);
  }
  return out;
}

}  // namespace hrhf
