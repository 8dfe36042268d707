#include <doctest.h>

#include <cmath>

#include "hrhf/graph.hpp"
#include "hrhf/rng.hpp"
#include "test_util.hpp"

using namespace hrhf;
using testutil::random_tensor;

TEST_CASE("evaluate: sum of squares") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.sum(g.mul(x, x));
  g.mark_output(y);
  Bindings b;
  b[x] = Tensor::from({2}, {1.0, 2.0});
  const auto out = evaluate(g, b);
  CHECK(out.at(y)[0] == doctest::Approx(5.0));
}

TEST_CASE("evaluate: relu by definition") {
  Graph g;
  const int x = g.input("x", {3});
  const int y = g.relu(x);
  Bindings b;
  b[x] = Tensor::from({3}, {-1.0, 0.0, 2.0});
  const auto v = run_forward(g, b).at(y);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 2.0);
}

TEST_CASE("evaluate: softmax symmetry") {
  Graph g;
  const int x = g.input("x", {1, 2});
  const int y = g.softmax_last(x);
  Bindings b;
  b[x] = Tensor::from({1, 2}, {0.0, 0.0});
  const auto v = run_forward(g, b).at(y);
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(v[1] == doctest::Approx(0.5));
}

TEST_CASE("evaluate rejects shape mismatches with the node id") {
  Graph g;
  const int x = g.input("x", {2});
  g.sum(x);
  Bindings b;
  b[x] = Tensor::from({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_WITH_AS(run_forward(g, b),
                       doctest::Contains("node 0"), Error);
}

TEST_CASE("build-time shape mismatch names the offending node") {
  Graph g;
  const int a = g.input("a", {2});
  const int b = g.input("b", {3});
  CHECK_THROWS_AS(g.add(a, b), Error);
}

TEST_CASE("evaluate rejects non-finite intermediates") {
  Graph g;
  const int x = g.input("x", {1});
  g.log(x);
  Bindings b;
  b[x] = Tensor::from({1}, {-1.0});
  CHECK_THROWS_AS(run_forward(g, b), NonFiniteError);
}

TEST_CASE("evaluate is pure: repeated runs bit-identical") {
  Rng rng(11);
  Graph g;
  const int x = g.input("x", {4, 4, 3});
  const int y = g.sum(g.exp(g.mul_scalar(g.tv(x), 0.3)));
  Bindings b;
  b[x] = random_tensor({4, 4, 3}, rng);
  const auto v1 = run_forward(g, b).at(y);
  const auto v2 = run_forward(g, b).at(y);
  CHECK(bit_equal(v1, v2));
}

TEST_CASE("gradients: d/dx sum(x*x) = 2x") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.sum(g.mul(x, x));
  Bindings b;
  b[x] = Tensor::from({2}, {1.0, 2.0});
  const auto grads = gradients(g, b, y);
  CHECK(grads.at(x)[0] == doctest::Approx(2.0));
  CHECK(grads.at(x)[1] == doctest::Approx(4.0));
}

TEST_CASE("gradients: constant output gives zero gradient") {
  Graph g;
  const int x = g.input("x", {3});
  const int c = g.constant(Tensor::scalar(5.0));
  const int y = g.sum(c);
  Bindings b;
  b[x] = Tensor::from({3}, {1.0, 2.0, 3.0});
  const auto grads = gradients(g, b, y);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(grads.at(x)[i] == 0.0);
}

TEST_CASE("gradients rejects non-scalar seeds") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.mul(x, x);
  Bindings b;
  b[x] = Tensor::from({2}, {1.0, 2.0});
  CHECK_THROWS_AS(gradients(g, b, y), Error);
}

TEST_CASE("grad_check: quadratic is exact to rounding") {
  Rng rng(3);
  Graph g;
  const int x = g.input("x", {5});
  const int y = g.sum(g.mul(x, x));
  Bindings b;
  b[x] = random_tensor({5}, rng);
  CHECK(grad_check(g, b, y, 1e-3) < 1e-8);
}

TEST_CASE("grad_check: relu kink entries are excluded") {
  Graph g;
  const int x = g.input("x", {3});
  const int y = g.sum(g.relu(x));
  Bindings b;
  b[x] = Tensor::from({3}, {0.0, 1.0, -1.0});
  // the entry at the kink would report a large error if it were counted
  CHECK(grad_check(g, b, y, 1e-3) < 1e-8);
}

namespace {

double primitive_grad_error(int which, Rng& rng) {
  Graph g;
  Bindings b;
  int out = -1;
  switch (which) {
    case 0: {  // conv2d
      const int x = g.input("x", {1, 4, 4, 2});
      const int w = g.input("w", {3, 3, 2, 3});
      const int bias = g.input("b", {3});
      out = g.sum(g.conv2d(x, w, bias, 1));
      b[x] = random_tensor({1, 4, 4, 2}, rng);
      b[w] = random_tensor({3, 3, 2, 3}, rng, -0.5, 0.5);
      b[bias] = random_tensor({3}, rng);
      break;
    }
    case 1: {  // batchnorm (train-form composite)
      const int x = g.input("x", {2, 3, 3, 2});
      const int gamma = g.input("gamma", {2});
      const int beta = g.input("beta", {2});
      const int mu = g.channel_mean(x);
      const int var = g.channel_var(x, mu);
      const int y = g.bn_apply(x, mu, var, gamma, beta, 1e-5);
      out = g.sum(g.mul(y, y));
      b[x] = random_tensor({2, 3, 3, 2}, rng);
      b[gamma] = random_tensor({2}, rng, 0.5, 1.5);
      b[beta] = random_tensor({2}, rng);
      break;
    }
    case 2: {  // relu away from kinks
      const int x = g.input("x", {8});
      out = g.sum(g.relu(x));
      Tensor t = random_tensor({8}, rng);
      for (auto& v : t.data)
        if (std::abs(v) < 0.05) v = 0.2;
      b[x] = t;
      break;
    }
    case 3: {  // softmax
      const int x = g.input("x", {3, 4});
      const int y = g.softmax_last(x);
      out = g.sum(g.mul(y, y));
      b[x] = random_tensor({3, 4}, rng, -2.0, 2.0);
      break;
    }
    case 4: {  // log on positive inputs
      const int x = g.input("x", {6});
      out = g.sum(g.log(x));
      b[x] = random_tensor({6}, rng, 0.5, 2.0);
      break;
    }
    case 5: {  // exp
      const int x = g.input("x", {6});
      out = g.sum(g.exp(x));
      b[x] = random_tensor({6}, rng);
      break;
    }
    case 6: {  // add / mul mix
      const int x = g.input("x", {5});
      const int y = g.input("y", {5});
      out = g.sum(g.mul(g.add(x, y), g.sub(x, y)));
      b[x] = random_tensor({5}, rng);
      b[y] = random_tensor({5}, rng);
      break;
    }
    case 7: {  // sum & mean
      const int x = g.input("x", {7});
      out = g.add(g.mean(g.mul(x, x)), g.sum(g.mul_scalar(x, 0.25)));
      b[x] = random_tensor({7}, rng);
      break;
    }
    case 8: {  // LSE pooling
      const int x = g.input("x", {4, 4, 3});
      const int r = g.constant(Tensor::from({3}, {0.7, 3.0, 11.0}));
      out = g.sum(g.lse_pool(x, r));
      b[x] = random_tensor({4, 4, 3}, rng);
      break;
    }
    case 9: {  // avg pool + rearrange + tv
      const int x = g.input("x", {3, 3, 4});
      const int y = g.rearrange(x, 2);
      out = g.add(g.sum(g.avg_pool(y)), g.tv(x));
      b[x] = random_tensor({3, 3, 4}, rng);
      break;
    }
    default:
      REQUIRE(false);
  }
  return grad_check(g, b, out, 1e-4);
}

}  // namespace

TEST_CASE("per-primitive gradients match finite differences") {
  Rng rng(17);
  for (int which = 0; which < 10; ++which)
    for (int rep = 0; rep < 5; ++rep) {
      const double err = primitive_grad_error(which, rng);
      INFO("primitive ", which, " rep ", rep, " err ", err);
      CHECK(err < 1e-4);
    }
}

TEST_CASE("max pool gradient routes to the argmax") {
  Rng rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    Graph g;
    const int x = g.input("x", {3, 3, 2});
    const int out = g.sum(g.max_pool(x));
    Bindings b;
    b[x] = random_tensor({3, 3, 2}, rng);
    CHECK(grad_check(g, b, out, 1e-5) < 1e-4);
  }
}

TEST_CASE("chain rule: split backward equals fused graph, bit-identical") {
  Rng rng(31);
  // fused: z = sum(exp(relu(x)) * exp(relu(x)))
  Graph fused;
  const int fx = fused.input("x", {6});
  const int fy = fused.exp(fused.relu(fx));
  const int fz = fused.sum(fused.mul(fy, fy));
  Bindings fb;
  Tensor xs = random_tensor({6}, rng);
  for (auto& v : xs.data)
    if (std::abs(v) < 0.05) v = 0.3;
  fb[fx] = xs;
  const auto fused_grad = gradients(fused, fb, fz);

  // split: inner computes y = exp(relu(x)); outer computes z = sum(y*y)
  Graph inner;
  const int ix = inner.input("x", {6});
  const int iy = inner.exp(inner.relu(ix));
  Bindings ib;
  ib[ix] = xs;
  Forward ifwd = run_forward(inner, ib);

  Graph outer;
  const int ox = outer.input("y", {6});
  const int oz = outer.sum(outer.mul(ox, ox));
  Bindings ob;
  ob[ox] = ifwd.at(iy);
  const auto outer_grad = gradients(outer, ob, oz);

  const BackwardResult chained =
      run_backward(inner, ifwd, iy, outer_grad.at(ox));
  CHECK(bit_equal(chained.at(ix), fused_grad.at(fx)));
}
