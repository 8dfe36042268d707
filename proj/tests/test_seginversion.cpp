#include <doctest.h>

#include <cmath>

#include "hrhf/seginversion.hpp"
#include "test_util.hpp"

using namespace hrhf;
using testutil::random_tensor;
using testutil::tiny_model;

namespace {

double target_bce(const Tensor& yhat, const TargetVector& t, double floor) {
  const auto active = t.active();
  double s = 0.0;
  for (int k : active) s += -std::log(std::max(yhat[k], floor));
  return s / static_cast<double>(active.size());
}

InversionConfig tiny_inv_cfg() {
  InversionConfig cfg;
  cfg.resolution = 8;
  cfg.steps = 5;
  cfg.stop_loss = 1e-9;
  return cfg;
}

}  // namespace

TEST_CASE("image_prior: constant image has zero TV") {
  Tensor x = Tensor::full({4, 4, 3}, 0.37);
  CHECK(image_prior(x, 1.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("image_prior: 2x1 single-channel example gives 1/2") {
  Tensor x = Tensor::from({2, 1, 1}, {0.0, 1.0});
  CHECK(image_prior(x, 1.0, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("image_prior: zero image has zero prior") {
  Tensor x = Tensor::zeros({4, 4, 3});
  CHECK(image_prior(x, 1.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("image_prior: l2 term is the raw sum of squares") {
  Tensor x = Tensor::full({2, 2, 1}, 0.5);
  CHECK(image_prior(x, 0.0, 1.0) == doctest::Approx(4 * 0.25).epsilon(1e-12));
}

TEST_CASE("feature_reg: matching stats cost zero") {
  const ModelState m = tiny_model(2, 4, 3, 60);
  std::vector<Tensor> mean, var;
  for (const auto& blk : m.blocks) {
    mean.push_back(blk.run_mean);
    var.push_back(blk.run_var);
  }
  CHECK(feature_reg(mean, var, m) == doctest::Approx(0.0));
}

TEST_CASE("feature_reg: unit mean offset in one layer costs one") {
  ModelState m = tiny_model(1, 1, 2, 61);
  std::vector<Tensor> mean{Tensor::from({1}, {1.0})};
  std::vector<Tensor> var{m.blocks[0].run_var};
  m.blocks[0].run_mean = Tensor::from({1}, {0.0});
  CHECK(feature_reg(mean, var, m) == doctest::Approx(1.0));
}

TEST_CASE("feature_reg: random stats match an independent scalar loop") {
  ModelState m = tiny_model(3, 5, 3, 62);
  Rng rng(1);
  std::vector<Tensor> mean, var;
  for (auto& blk : m.blocks) {
    blk.run_mean = random_tensor({5}, rng);
    blk.run_var = random_tensor({5}, rng, 0.2, 2.0);
    mean.push_back(random_tensor({5}, rng));
    var.push_back(random_tensor({5}, rng, 0.2, 2.0));
  }
  double expect = 0.0;
  for (size_t l = 0; l < m.blocks.size(); ++l)
    for (int c = 0; c < 5; ++c) {
      const double dm = mean[l][c] - m.blocks[l].run_mean[c];
      const double dv = var[l][c] - m.blocks[l].run_var[c];
      expect += dm * dm + dv * dv;
    }
  CHECK(feature_reg(mean, var, m) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("feature_reg: layer count mismatch is rejected") {
  const ModelState m = tiny_model(2, 4, 3, 63);
  std::vector<Tensor> mean{Tensor::zeros({4})};
  std::vector<Tensor> var{Tensor::full({4}, 1.0)};
  CHECK_THROWS_AS(feature_reg(mean, var, m), Error);
}

TEST_CASE("classification term: perfect and half-confidence values") {
  TargetVector t = TargetVector::single(4, 2);
  Tensor perfect = Tensor::from({4}, {0.1, 0.2, 1.0, 0.3});
  CHECK(target_bce(perfect, t, 1e-12) == doctest::Approx(0.0));
  Tensor half = Tensor::from({4}, {0.1, 0.2, 0.5, 0.3});
  CHECK(target_bce(half, t, 1e-12) ==
        doctest::Approx(0.6931472).epsilon(1e-6));
}

TEST_CASE("inversion_loss equals the value-path composition") {
  const ModelState m = tiny_model(2, 6, 4, 64);
  Rng rng(2);
  const Tensor x = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  InversionConfig cfg = tiny_inv_cfg();
  cfg.w_tv = 0.0;
  cfg.w_l2 = 0.0;
  cfg.w_feat = 0.0;
  TargetVector t = TargetVector::single(4, 1);
  t.y[3] = 1;
  const std::vector<double> r{1.0, 5.0, 0.5, 10.0};
  const double via_graph = inversion_loss(m, x, t, r, cfg);

  Tensor scores = forward_eval(m, x).scores;
  scores.shape = {8, 8, 4};
  const Tensor yhat = saa_pool(scores, r);
  CHECK(via_graph ==
        doctest::Approx(target_bce(yhat, t, cfg.log_floor)).epsilon(1e-12));
}

TEST_CASE("inversion loss with regularizers adds prior and feature terms") {
  const ModelState m = tiny_model(2, 6, 3, 65);
  Rng rng(3);
  const Tensor x = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  TargetVector t = TargetVector::single(3, 2);
  const std::vector<double> r{5.0, 5.0, 5.0};
  InversionConfig none = tiny_inv_cfg();
  none.w_tv = none.w_l2 = none.w_feat = 0.0;
  InversionConfig prior = none;
  prior.w_tv = 0.01;
  prior.w_l2 = 1e-4;
  const double base = inversion_loss(m, x, t, r, none);
  const double with_prior = inversion_loss(m, x, t, r, prior);
  CHECK(with_prior ==
        doctest::Approx(base + image_prior(x, 0.01, 1e-4)).epsilon(1e-9));

  InversionConfig feat = none;
  feat.w_feat = 0.5;
  const auto out = forward_eval(m, x, true);
  const double expect_feat =
      0.5 * feature_reg(out.batch_mean, out.batch_var, m);
  CHECK(inversion_loss(m, x, t, r, feat) ==
        doctest::Approx(base + expect_feat).epsilon(1e-9));
}

TEST_CASE("background cannot be targeted") {
  const ModelState m = tiny_model(1, 4, 3, 66);
  Rng rng(4);
  const Tensor x = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  TargetVector t;
  t.y = {1, 0, 0};
  CHECK_THROWS_AS(
      inversion_loss(m, x, t, {1.0, 1.0, 1.0}, tiny_inv_cfg()), Error);
}

TEST_CASE("full inversion loss gradient matches finite differences on 4x4") {
  const ModelState m = tiny_model(2, 4, 3, 67);
  InversionConfig cfg;
  cfg.resolution = 4;
  TargetVector t = TargetVector::single(3, 1);
  const std::vector<double> r{1.0, 5.0, 0.5};
  InversionGraph ig = build_inversion_graph(m, 4, 4, t, r, cfg);
  Bindings b;
  bind_params(m, ig.fg, b);
  Rng rng(5);
  b[ig.fg.image] = random_tensor({1, 4, 4, 3}, rng, 0.05, 0.95);
  CHECK(grad_check(ig.fg.g, b, ig.loss, 1e-4) < 1e-4);
}

TEST_CASE("invert with zero steps returns the initial noise, loss recorded") {
  const ModelState m = tiny_model(2, 6, 3, 68);
  InversionConfig cfg = tiny_inv_cfg();
  cfg.steps = 0;
  Rng rng(6);
  const auto fakes = invert(m, {TargetVector::single(3, 1)}, cfg, rng);
  REQUIRE(fakes.size() == 1);
  const FakeSample& fs = fakes[0];
  CHECK(fs.image.shape == Shape{8, 8, 3});
  CHECK(std::isfinite(fs.final_loss));
  CHECK(fs.final_loss == fs.loss_trace.back());
  // the image is untouched seeded noise: reproduce it from the same stream
  Rng rng2(6);
  const Rng run_master(rng2.next_u64());
  Rng srng = run_master.split(0);
  (void)srng.seed();
  CHECK(fs.seed == run_master.split(0).seed());
}

TEST_CASE("invert leaves the teacher bit-unchanged") {
  const ModelState m = tiny_model(2, 6, 3, 69);
  const ModelState copy = m;
  InversionConfig cfg = tiny_inv_cfg();
  Rng rng(7);
  const auto fakes =
      invert(m, {TargetVector::single(3, 1), TargetVector::single(3, 2)},
             cfg, rng);
  CHECK(fakes.size() == 2);
  CHECK(bit_equal(m, copy));
}

TEST_CASE("invert is deterministic given the seed") {
  const ModelState m = tiny_model(2, 6, 3, 70);
  InversionConfig cfg = tiny_inv_cfg();
  cfg.steps = 3;
  auto run = [&] {
    Rng rng(8);
    return invert(m, {TargetVector::single(3, 1), TargetVector::single(3, 2)},
                  cfg, rng);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(bit_equal(a[i].image, b[i].image));
    CHECK(a[i].final_loss == b[i].final_loss);
    CHECK(a[i].r == b[i].r);
  }
}

TEST_CASE("invert clamps images to [0,1] and records the cls trend") {
  const ModelState m = tiny_model(2, 6, 3, 71);
  InversionConfig cfg = tiny_inv_cfg();
  cfg.steps = 10;
  Rng rng(9);
  const auto fakes = invert(m, {TargetVector::single(3, 2)}, cfg, rng);
  REQUIRE(fakes.size() == 1);
  for (double v : fakes[0].image.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(fakes[0].loss_trace.size() >= 2);
  CHECK(std::isfinite(fakes[0].initial_cls));
  CHECK(std::isfinite(fakes[0].final_cls));
  // cached teacher scores are a valid probability map
  const Tensor& sc = fakes[0].teacher_scores;
  REQUIRE(sc.shape == Shape{8, 8, 3});
  for (int p = 0; p < 64; ++p) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += sc[p * 3 + c];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("early stop: final recorded loss equals the running minimum") {
  const ModelState m = tiny_model(2, 6, 3, 72);
  InversionConfig cfg = tiny_inv_cfg();
  cfg.steps = 200;
  cfg.stop_loss = 2.0;  // generous so the stop triggers quickly
  cfg.w_tv = cfg.w_l2 = cfg.w_feat = 0.0;
  Rng rng(10);
  const auto fakes = invert(m, {TargetVector::single(3, 1)}, cfg, rng);
  REQUIRE(fakes.size() == 1);
  const auto& trace = fakes[0].loss_trace;
  double run_min = trace[0];
  for (double v : trace) run_min = std::min(run_min, v);
  if (trace.size() < 200) {  // early stop fired
    CHECK(fakes[0].final_loss == run_min);
    CHECK(fakes[0].final_loss < cfg.stop_loss);
  }
}

TEST_CASE("make_targets covers foreground classes round-robin") {
  InversionConfig cfg;
  cfg.extra_class_prob = 0.0;
  Rng rng(11);
  const auto ts = make_targets(6, 4, cfg, rng);
  REQUIRE(ts.size() == 6);
  for (int i = 0; i < 6; ++i) {
    const auto active = ts[static_cast<size_t>(i)].active();
    REQUIRE(active.size() == 1);
    CHECK(active[0] == 1 + (i % 3));
  }
}
