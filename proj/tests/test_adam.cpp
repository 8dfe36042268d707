#include <doctest.h>

#include <cmath>

#include "hrhf/adam.hpp"

using namespace hrhf;

namespace {

AdamState state_for(std::vector<Tensor*>& params, double lr) {
  std::vector<const Tensor*> view(params.begin(), params.end());
  AdamConfig cfg;
  cfg.lr = lr;
  return AdamState::init(view, cfg);
}

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged, moments decay") {
  Tensor p = Tensor::from({2}, {1.5, -0.5});
  Tensor g = Tensor::zeros({2});
  std::vector<Tensor*> params{&p};
  AdamState st = state_for(params, 0.1);
  st.m[0] = {0.8, 0.8};
  st.v[0] = {0.4, 0.4};
  for (int i = 0; i < 5; ++i) {
    std::vector<const Tensor*> grads{&g};
    adam_step(params, grads, st);
  }
  CHECK(p[0] == doctest::Approx(1.5));
  CHECK(p[1] == doctest::Approx(-0.5));
  CHECK(st.m[0][0] == doctest::Approx(0.8 * std::pow(0.9, 5)));
  CHECK(st.v[0][0] == doctest::Approx(0.4 * std::pow(0.999, 5)));
}

TEST_CASE("first step moves by about lr against the gradient") {
  // hand evaluation: m_hat = g, v_hat = g^2, delta = lr * g/(|g|+eps)
  Tensor p = Tensor::from({1}, {0.0});
  Tensor g = Tensor::from({1}, {1.0});
  std::vector<Tensor*> params{&p};
  AdamState st = state_for(params, 0.25);
  std::vector<const Tensor*> grads{&g};
  adam_step(params, grads, st);
  CHECK(st.step == 1);
  CHECK(p[0] == doctest::Approx(-0.25).epsilon(1e-6));
}

TEST_CASE("identical parameters with identical gradients update identically") {
  Tensor p1 = Tensor::from({3}, {0.1, 0.2, 0.3});
  Tensor p2 = p1;
  Tensor g = Tensor::from({3}, {0.5, -1.0, 2.0});
  std::vector<Tensor*> params{&p1, &p2};
  AdamState st = state_for(params, 0.01);
  for (int i = 0; i < 7; ++i) {
    std::vector<const Tensor*> grads{&g, &g};
    adam_step(params, grads, st);
  }
  CHECK(bit_equal(p1, p2));
}

TEST_CASE("non-finite gradients are rejected before any mutation") {
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  Tensor g = Tensor::from({2}, {0.5, 0.5});
  Tensor bad = Tensor::from({2}, {1.0, std::nan("")});
  std::vector<Tensor*> params{&p};
  AdamState st = state_for(params, 0.1);
  {
    std::vector<const Tensor*> grads{&g};
    adam_step(params, grads, st);
  }
  const Tensor before = p;
  const auto m_before = st.m;
  std::vector<const Tensor*> grads{&bad};
  CHECK_THROWS_AS(adam_step(params, grads, st), NonFiniteError);
  CHECK(bit_equal(p, before));
  CHECK(st.m == m_before);
  CHECK(st.step == 1);
}

TEST_CASE("length mismatch is rejected") {
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  Tensor g3 = Tensor::from({3}, {1.0, 2.0, 3.0});
  std::vector<Tensor*> params{&p};
  AdamState st = state_for(params, 0.1);
  std::vector<const Tensor*> grads{&g3};
  CHECK_THROWS_AS(adam_step(params, grads, st), Error);
}
