#include <doctest.h>

#include <cmath>

#include "hrhf/segnet.hpp"
#include "test_util.hpp"

using namespace hrhf;
using testutil::random_tensor;
using testutil::tiny_model;

TEST_CASE("forward produces per-pixel probability simplexes") {
  ModelState m = tiny_model(2, 6, 3, 41);
  Rng rng(1);
  const Tensor img = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  const Tensor s = forward_eval(m, img).scores;
  REQUIRE(s.shape == Shape{1, 8, 8, 3});
  for (int p = 0; p < 64; ++p) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double v = s[p * 3 + c];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("eval-mode forward is pure and bit-identical") {
  ModelState m = tiny_model(3, 8, 4, 42);
  Rng rng(2);
  const Tensor img = random_tensor({10, 10, 3}, rng, 0.0, 1.0);
  const Tensor a = forward_eval(m, img).scores;
  const Tensor b = forward_eval(m, img).scores;
  CHECK(bit_equal(a, b));
}

TEST_CASE("running stats change only in train mode") {
  ModelState m = tiny_model(2, 6, 3, 43);
  Rng rng(3);
  const Tensor img = random_tensor({1, 8, 8, 3}, rng, 0.0, 1.0);
  const Tensor rm_before = m.blocks[0].run_mean;
  forward_eval(m, img);
  CHECK(bit_equal(m.blocks[0].run_mean, rm_before));
  forward(m, img, BnMode::Train);
  CHECK(!bit_equal(m.blocks[0].run_mean, rm_before));
}

TEST_CASE("head_expand by zero returns a bit-equal model") {
  ModelState m = tiny_model(2, 6, 3, 44);
  Rng rng(4);
  const ModelState e = head_expand(m, 0, rng);
  CHECK(bit_equal(e, m));
}

TEST_CASE("head_expand copies old head rows bit-exactly") {
  ModelState m = tiny_model(2, 6, 3, 45);
  Rng rng(5);
  const ModelState e = head_expand(m, 1, rng);
  CHECK(e.class_count == 4);
  REQUIRE(e.head_w.shape == Shape{1, 1, 6, 4});
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(e.head_w[i * 4 + c] == m.head_w[i * 3 + c]);
  for (int c = 0; c < 3; ++c) CHECK(e.head_b[c] == m.head_b[c]);
  // new channels come from the seeded low-variance draw
  double maxabs = 0.0;
  for (int i = 0; i < 6; ++i)
    maxabs = std::max(maxabs, std::abs(e.head_w[i * 4 + 3]));
  CHECK(maxabs > 0.0);
  CHECK(maxabs < 0.1);
}

TEST_CASE("expanded head after forward has the new channel count") {
  ModelState m = tiny_model(2, 6, 3, 46);
  Rng rng(6);
  const ModelState e = head_expand(m, 1, rng);
  Rng irng(7);
  const Tensor img = random_tensor({8, 8, 3}, irng, 0.0, 1.0);
  const Tensor s = forward_eval(e, img).scores;
  CHECK(s.shape == Shape{1, 8, 8, 4});
}

TEST_CASE("masking new logits preserves old-class probability ordering") {
  // renormalizing the expanded model's old-class block must preserve the
  // per-pixel ordering the teacher produced
  ModelState m = tiny_model(2, 6, 3, 47);
  Rng rng(8);
  const ModelState e = head_expand(m, 2, rng);
  Rng irng(9);
  const Tensor img = random_tensor({6, 6, 3}, irng, 0.0, 1.0);
  const Tensor st = forward_eval(m, img).scores;
  const Tensor se = forward_eval(e, img).scores;
  for (int p = 0; p < 36; ++p) {
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const bool teacher_lt = st[p * 3 + a] < st[p * 3 + b];
        const bool student_lt = se[p * 5 + a] < se[p * 5 + b];
        CHECK(teacher_lt == student_lt);
      }
  }
}

TEST_CASE("predict: constant-winner map and tie rule") {
  Tensor s = Tensor::zeros({2, 2, 3});
  for (int p = 0; p < 4; ++p) {
    s[p * 3 + 0] = 0.2;
    s[p * 3 + 1] = 0.3;
    s[p * 3 + 2] = 0.5;
  }
  const LabelMap lm = argmax_map(s);
  for (int v : lm.idx) CHECK(v == 2);

  Tensor tie = Tensor::zeros({1, 1, 3});
  tie[0] = 0.4;
  tie[1] = 0.4;
  tie[2] = 0.2;
  CHECK(argmax_map(tie).idx[0] == 0);
}

TEST_CASE("predict equals a brute-force per-pixel scan") {
  Rng rng(10);
  const Tensor s = random_tensor({4, 4, 5}, rng, 0.0, 1.0);
  const LabelMap lm = argmax_map(s);
  for (int p = 0; p < 16; ++p) {
    int best = 0;
    for (int c = 1; c < 5; ++c)
      if (s[p * 5 + c] > s[p * 5 + best]) best = c;
    CHECK(lm.idx[static_cast<size_t>(p)] == best);
  }
}

TEST_CASE("parameter count is a pure function of the architecture") {
  ModelState a = tiny_model(3, 8, 4, 48);
  ModelState b = tiny_model(3, 8, 4, 49);
  CHECK(a.param_count() == b.param_count());
  // 3x3x3x8+8+8+8 + 2*(3x3x8x8+8+8+8) + (8*4+4)
  const std::int64_t expect = (3 * 3 * 3 * 8 + 8 + 8 + 8) +
                              2 * (3 * 3 * 8 * 8 + 8 + 8 + 8) +
                              (8 * 4 + 4);
  CHECK(a.param_count() == expect);
}
