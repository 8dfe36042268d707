#include "hrhf/seginversion.hpp"

#include <algorithm>
#include <cmath>

#include "hrhf/adam.hpp"
#include "hrhf/kernels.hpp"

namespace hrhf {

std::vector<int> TargetVector::active() const {
  std::vector<int> out;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i]) out.push_back(static_cast<int>(i));
  return out;
}

TargetVector TargetVector::single(int class_count, int class_id) {
  TargetVector t;
  t.y.assign(static_cast<size_t>(class_count), 0);
  t.y[static_cast<size_t>(class_id)] = 1;
  return t;
}

double image_prior(const Tensor& x, double w_tv, double w_l2) {
  x.require_finite("image_prior input");
  Shape s = x.shape;
  std::int64_t N = 1, H, W, C;
  if (s.size() == 4) {
    N = s[0];
    H = s[1];
    W = s[2];
    C = s[3];
  } else if (s.size() == 3) {
    H = s[0];
    W = s[1];
    C = s[2];
  } else {
    throw Error("image_prior: expected [H,W,C] or [N,H,W,C]");
  }
  const double tv = kernels::tv_loss(x.data.data(), N, H, W, C);
  double l2 = 0.0;
  for (double v : x.data) l2 += v * v;
  return w_tv * tv + w_l2 * l2;
}

double feature_reg(const std::vector<Tensor>& batch_mean,
                   const std::vector<Tensor>& batch_var,
                   const ModelState& model) {
  if (batch_mean.size() != model.blocks.size() ||
      batch_var.size() != model.blocks.size())
    throw Error("feature_reg: statistics for " +
                std::to_string(batch_mean.size()) + "/" +
                std::to_string(batch_var.size()) + " layers, model has " +
                std::to_string(model.blocks.size()));
  double s = 0.0;
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const Tensor& rm = model.blocks[l].run_mean;
    const Tensor& rv = model.blocks[l].run_var;
    if (!batch_mean[l].same_shape(rm) || !batch_var[l].same_shape(rv))
      throw Error("feature_reg: channel mismatch at layer " +
                  std::to_string(l));
    for (std::int64_t c = 0; c < rm.numel(); ++c) {
      const double dm = batch_mean[l][c] - rm[c];
      const double dv = batch_var[l][c] - rv[c];
      s += dm * dm + dv * dv;
    }
  }
  return s;
}

// loss(x) = mean over target classes of -log(yhat_k)  +  image prior
//           +  w_feat * feature regularizer
InversionGraph build_inversion_graph(const ModelState& teacher,
                                     std::int64_t H, std::int64_t W,
                                     const TargetVector& target,
                                     const std::vector<double>& r,
                                     const InversionConfig& cfg) {
  const int C = teacher.class_count;
  if (target.class_count() != C)
    throw Error("inversion target has " +
                std::to_string(target.class_count()) + " classes, teacher " +
                std::to_string(C));
  const auto active = target.active();
  if (active.empty()) throw Error("inversion target has no active class");
  if (target.y[0]) throw Error("background cannot be an inversion target");

  InversionGraph ig;
  ig.fg = build_forward(teacher, 1, H, W, BnMode::Eval,
                        /*params_trainable=*/false, /*image_trainable=*/true,
                        /*collect_stats=*/true);
  Graph& g = ig.fg.g;

  const int base = cfg.aggregate_logits ? ig.fg.logits : ig.fg.scores;
  int yhat;  // [1,C]
  switch (cfg.aggregation) {
    case AggregationKind::SAA: {
      Tensor rt = Tensor::zeros({C});
      for (int c = 0; c < C; ++c) rt[c] = r[static_cast<size_t>(c)];
      yhat = g.lse_pool(base, g.constant(std::move(rt), "r"));
      break;
    }
    case AggregationKind::AVG:
      yhat = g.avg_pool(base);
      break;
    case AggregationKind::MAX:
      yhat = g.max_pool(base);
      break;
    default:
      throw Error("unknown aggregation kind");
  }

  Tensor w = Tensor::zeros({1, C});
  for (int c : active)
    w[c] = -1.0 / static_cast<double>(active.size());
  ig.cls = g.sum(g.mul(g.constant(std::move(w), "target_weights"),
                       g.log_floor(yhat, cfg.log_floor)));

  int loss = ig.cls;
  if (cfg.w_tv != 0.0)
    loss = g.add(loss, g.mul_scalar(g.tv(ig.fg.image), cfg.w_tv));
  if (cfg.w_l2 != 0.0)
    loss = g.add(loss, g.mul_scalar(
                           g.sum(g.mul(ig.fg.image, ig.fg.image)), cfg.w_l2));
  if (cfg.w_feat != 0.0) {
    int feat = -1;
    for (size_t l = 0; l < teacher.blocks.size(); ++l) {
      const int dm = g.sub(ig.fg.stat_mean[l],
                           g.constant(teacher.blocks[l].run_mean));
      const int dv = g.sub(ig.fg.stat_var[l],
                           g.constant(teacher.blocks[l].run_var));
      const int term = g.add(g.sum(g.mul(dm, dm)), g.sum(g.mul(dv, dv)));
      feat = feat < 0 ? term : g.add(feat, term);
    }
    loss = g.add(loss, g.mul_scalar(feat, cfg.w_feat));
  }
  ig.loss = loss;
  return ig;
}

namespace {

Tensor noise_image(Rng& rng, std::int64_t H, std::int64_t W) {
  Tensor x = Tensor::zeros({1, H, W, 3});
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

void clamp01(Tensor& x) {
  for (auto& v : x.data) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

double inversion_loss(const ModelState& teacher, const Tensor& x,
                      const TargetVector& y, const std::vector<double>& r,
                      const InversionConfig& cfg) {
  Tensor xb = x;
  if (xb.rank() == 3)
    xb.shape = {1, x.shape[0], x.shape[1], x.shape[2]};
  InversionGraph ig =
      build_inversion_graph(teacher, xb.shape[1], xb.shape[2], y, r, cfg);
  Bindings b;
  bind_params(teacher, ig.fg, b);
  b[ig.fg.image] = std::move(xb);
  Forward fwd = run_forward(ig.fg.g, b);
  return fwd.at(ig.loss)[0];
}

std::vector<TargetVector> make_targets(int count, int class_count,
                                       const InversionConfig& cfg, Rng& rng) {
  if (class_count < 2)
    throw Error("make_targets: teacher has no foreground class");
  const int n_fg = class_count - 1;
  std::vector<TargetVector> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    TargetVector t;
    t.y.assign(static_cast<size_t>(class_count), 0);
    const int base = 1 + (i % n_fg);
    t.y[static_cast<size_t>(base)] = 1;
    if (cfg.max_target_classes > 1 && n_fg > 1 &&
        rng.uniform() < cfg.extra_class_prob) {
      int extra = 1 + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(n_fg - 1)));
      if (extra >= base) ++extra;  // skip the base class
      t.y[static_cast<size_t>(extra)] = 1;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<FakeSample> invert(const ModelState& teacher,
                               const std::vector<TargetVector>& targets,
                               const InversionConfig& cfg, Rng& rng,
                               std::vector<std::string>* diagnostics) {
  if (targets.empty()) throw Error("invert: no targets");
  if (cfg.steps < 0 || cfg.lr <= 0.0 || cfg.stop_loss <= 0.0)
    throw Error("invert: invalid config");
  const std::int64_t H = cfg.resolution;
  const std::int64_t W = cfg.resolution;
  const int n = static_cast<int>(targets.size());

  // independent per-sample streams; parent state advances once per call
  const Rng run_master(rng.next_u64());

  std::vector<FakeSample> out(static_cast<size_t>(n));
  std::vector<std::uint8_t> ok(static_cast<size_t>(n), 0);
  std::vector<std::string> diag(static_cast<size_t>(n));

  const int T = kernels::thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(dynamic, 1) if (T > 1)
#endif
  for (int i = 0; i < n; ++i) {
    Rng srng = run_master.split(static_cast<std::uint64_t>(i));
    try {
      FakeSample fs;
      fs.target = targets[static_cast<size_t>(i)];
      fs.seed = srng.seed();
      fs.r = sample_r(srng, cfg.r_set, teacher.class_count);

      InversionGraph ig = build_inversion_graph(
          teacher, H, W, fs.target, fs.r, cfg);
      Bindings b;
      bind_params(teacher, ig.fg, b);

      Tensor x = noise_image(srng, H, W);
      AdamState adam;
      {
        std::vector<const Tensor*> view{&x};
        AdamConfig ac;
        ac.lr = cfg.lr;
        adam = AdamState::init(view, ac);
      }

      double loss = 0.0;
      double cls = 0.0;
      bool first = true;
      bool stopped = false;
      for (int step = 0; step < cfg.steps; ++step) {
        b[ig.fg.image] = x;
        Forward fwd = run_forward(ig.fg.g, b);
        loss = fwd.at(ig.loss)[0];
        cls = fwd.at(ig.cls)[0];
        fs.loss_trace.push_back(loss);
        if (first) {
          fs.initial_cls = cls;
          first = false;
        }
        if (loss < cfg.stop_loss) {
          stopped = true;
          break;
        }
        BackwardResult bk =
            run_backward(ig.fg.g, fwd, ig.loss, Tensor::scalar(1.0));
        const Tensor& gx = bk.at(ig.fg.image);
        std::vector<Tensor*> ps{&x};
        std::vector<const Tensor*> gs{&gx};
        adam_step(ps, gs, adam);
        clamp01(x);
      }
      // final (or only, when steps == 0 / early stop) evaluation at the
      // returned iterate
      b[ig.fg.image] = x;
      Forward fwd = run_forward(ig.fg.g, b);
      loss = fwd.at(ig.loss)[0];
      cls = fwd.at(ig.cls)[0];
      if (!stopped) fs.loss_trace.push_back(loss);
      if (first) fs.initial_cls = cls;
      fs.final_loss = loss;
      fs.final_cls = cls;

      Tensor img = x;
      img.shape = {H, W, 3};
      fs.image = std::move(img);
      Tensor sc = fwd.at(ig.fg.scores);
      sc.shape = {H, W, teacher.class_count};
      fs.teacher_scores = std::move(sc);
      out[static_cast<size_t>(i)] = std::move(fs);
      ok[static_cast<size_t>(i)] = 1;
    } catch (const Error& e) {
      diag[static_cast<size_t>(i)] =
          "sample " + std::to_string(i) + " aborted: " + e.what();
    }
  }

  std::vector<FakeSample> kept;
  kept.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (ok[static_cast<size_t>(i)])
      kept.push_back(std::move(out[static_cast<size_t>(i)]));
    else if (diagnostics)
      diagnostics->push_back(diag[static_cast<size_t>(i)]);
  }
  return kept;
}

}  // namespace hrhf
