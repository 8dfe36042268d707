#include <doctest.h>

#include <cmath>

#include "hrhf/aggregation.hpp"
#include "hrhf/graph.hpp"
#include "test_util.hpp"

using namespace hrhf;
using testutil::random_tensor;

TEST_CASE("constant map pools to the constant for any r") {
  Tensor m = Tensor::full({5, 7, 2}, 0.7);
  for (double r : {0.5, 1.0, 5.0, 20.0}) {
    const Tensor y = saa_pool(m, r);
    CHECK(y[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("two-pixel map, r=1: log((1+e)/2)") {
  Tensor m = Tensor::from({2, 1, 1}, {0.0, 1.0});
  const Tensor y = saa_pool(m, 1.0);
  CHECK(y[0] == doctest::Approx(std::log((1.0 + std::exp(1.0)) / 2.0))
                    .epsilon(1e-9));
  CHECK(y[0] == doctest::Approx(0.620115).epsilon(1e-5));
}

TEST_CASE("two-pixel map, r=50: within log(2)/50 of the max") {
  Tensor m = Tensor::from({2, 1, 1}, {0.0, 1.0});
  const Tensor y = saa_pool(m, 50.0);
  CHECK(y[0] <= 1.0);
  CHECK(1.0 - y[0] <= std::log(2.0) / 50.0);
}

TEST_CASE("avg and max pooling definitions") {
  Tensor m = Tensor::from({2, 1, 1}, {0.0, 1.0});
  CHECK(avg_pool(m)[0] == doctest::Approx(0.5));
  CHECK(max_pool(m)[0] == doctest::Approx(1.0));
}

TEST_CASE("avg pool equals an independent scalar loop") {
  Rng rng(5);
  const Tensor m = random_tensor({3, 3, 4}, rng);
  const Tensor y = avg_pool(m);
  for (int c = 0; c < 4; ++c) {
    double s = 0.0;
    for (int i = 0; i < 9; ++i) s += m[i * 4 + c];
    CHECK(y[c] == doctest::Approx(s / 9.0).epsilon(1e-12));
  }
}

TEST_CASE("r must be positive") {
  Tensor m = Tensor::full({2, 2, 1}, 0.5);
  CHECK_THROWS_AS(saa_pool(m, 0.0), Error);
  CHECK_THROWS_AS(saa_pool(m, -1.0), Error);
}

TEST_CASE("bounds: mean <= saa <= max, and the max-approach bound, exactly") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const std::int64_t H = 1 + rng.uniform_int(16);
    const std::int64_t W = 1 + rng.uniform_int(16);
    const std::int64_t C = 1 + rng.uniform_int(4);
    const Tensor m = random_tensor({H, W, C}, rng, -2.0, 2.0);
    const Tensor lo = avg_pool(m);
    const Tensor hi = max_pool(m);
    for (double r : {0.5, 1.0, 5.0, 20.0}) {
      const Tensor y = saa_pool(m, r);
      for (std::int64_t c = 0; c < C; ++c) {
        CHECK(y[c] >= lo[c]);
        CHECK(y[c] <= hi[c]);
        CHECK(hi[c] - y[c] <=
              std::log(static_cast<double>(H * W)) / r);
      }
    }
  }
}

TEST_CASE("monotone nondecreasing in r") {
  Rng rng(9);
  const std::vector<double> rs{0.5, 1.0, 5.0, 10.0, 20.0};
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor m = random_tensor({6, 5, 3}, rng, -1.0, 1.0);
    Tensor prev = saa_pool(m, rs[0]);
    for (size_t i = 1; i < rs.size(); ++i) {
      const Tensor cur = saa_pool(m, rs[i]);
      for (std::int64_t c = 0; c < 3; ++c) CHECK(cur[c] >= prev[c]);
      prev = cur;
    }
  }
}

TEST_CASE("shift equivariance within 1e-9") {
  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor m = random_tensor({4, 6, 2}, rng);
    const double shift = rng.uniform(-3.0, 3.0);
    Tensor shifted = m;
    for (auto& v : shifted.data) v += shift;
    for (double r : {0.5, 5.0, 20.0}) {
      const Tensor a = saa_pool(m, r);
      const Tensor c = saa_pool(shifted, r);
      for (std::int64_t k = 0; k < 2; ++k)
        CHECK(std::abs(c[k] - (a[k] + shift)) < 1e-9);
    }
  }
}

TEST_CASE("mean limit as r -> 0") {
  Rng rng(15);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor m = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
    const Tensor y = saa_pool(m, 1e-3);
    const Tensor mu = avg_pool(m);
    const Tensor mx = max_pool(m);
    for (std::int64_t c = 0; c < 2; ++c) {
      double lo = m[c];
      for (std::int64_t i = 0; i < 25; ++i)
        lo = std::min(lo, m[i * 2 + c]);
      const double range = mx[c] - lo;
      CHECK(std::abs(y[c] - mu[c]) <= 1e-3 * range * range + 1e-12);
    }
  }
}

TEST_CASE("gradient structure: softmax weights that sum to one") {
  Rng rng(17);
  const Tensor m = random_tensor({4, 4, 3}, rng);
  const std::vector<double> rs{0.5, 5.0, 20.0};
  Graph g;
  const int x = g.input("x", {4, 4, 3});
  const int r = g.constant(Tensor::from({3}, std::vector<double>(rs)));
  const int pooled = g.lse_pool(x, r);
  // pick class k by summing with a unit weight
  for (int k = 0; k < 3; ++k) {
    Graph gk;
    const int xk = gk.input("x", {4, 4, 3});
    const int rk = gk.constant(Tensor::from({3}, std::vector<double>(rs)));
    Tensor w = Tensor::zeros({3});
    w[k] = 1.0;
    const int yk =
        gk.sum(gk.mul(gk.constant(std::move(w)), gk.lse_pool(xk, rk)));
    Bindings b;
    b[xk] = m;
    const auto grads = gradients(gk, b, yk);
    const Tensor& gx = grads.at(xk);
    double sum = 0.0;
    for (std::int64_t i = 0; i < 16; ++i) {
      const double v = gx[i * 3 + k];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    // off-class entries receive nothing
    for (std::int64_t i = 0; i < 16; ++i)
      for (int c = 0; c < 3; ++c)
        if (c != k) CHECK(gx[i * 3 + c] == 0.0);
    CHECK(grad_check(gk, b, yk, 1e-4) < 1e-4);
  }
  (void)pooled;
  (void)x;
}

TEST_CASE("AVG and MAX match the r->0 / r->inf limits") {
  Rng rng(19);
  const Tensor m = random_tensor({6, 6, 2}, rng, 0.0, 1.0);
  const Tensor lo = saa_pool(m, 1e-4);
  const Tensor av = avg_pool(m);
  const Tensor hi = saa_pool(m, 2000.0);
  const Tensor mx = max_pool(m);
  for (std::int64_t c = 0; c < 2; ++c) {
    CHECK(std::abs(lo[c] - av[c]) < 1e-4);
    CHECK(std::abs(hi[c] - mx[c]) < 1e-2);
  }
}

TEST_CASE("sample_r: singleton set and seeded determinism") {
  Rng a(21), b(21);
  const std::vector<double> single{5.0};
  for (double v : sample_r(a, single, 7)) CHECK(v == 5.0);
  const std::vector<double> set{0.5, 1.0, 5.0, 10.0, 20.0};
  const auto s1 = sample_r(a, set, 16);
  const auto s2 = [&] {
    Rng c(21);
    for (double v : sample_r(c, single, 7)) (void)v;
    return sample_r(c, set, 16);
  }();
  CHECK(s1 == s2);
  (void)b;
}

TEST_CASE("sample_r: 1e4 draws hit each candidate at 0.2 +/- 0.02") {
  Rng rng(23);
  const std::vector<double> set{0.5, 1.0, 5.0, 10.0, 20.0};
  std::map<double, int> counts;
  const int n = 10000;
  const auto draws = sample_r(rng, set, n);
  for (double v : draws) counts[v]++;
  for (double v : set) {
    const double freq = counts[v] / static_cast<double>(n);
    CHECK(freq > 0.18);
    CHECK(freq < 0.22);
  }
}
