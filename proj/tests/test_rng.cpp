#include <doctest.h>

#include <cmath>
#include <vector>

#include "hrhf/rng.hpp"

using namespace hrhf;

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
  }
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 16; ++i) any_diff |= a2.next_u64() != c.next_u64();
  CHECK(any_diff);
}

TEST_CASE("split streams are independent of parent draws") {
  Rng parent(7);
  Rng child_before = parent.split(3);
  parent.next_u64();
  parent.next_u64();
  Rng child_after = parent.split(3);
  for (int i = 0; i < 16; ++i)
    CHECK(child_before.next_u64() == child_after.next_u64());

  Rng other = parent.split(4);
  bool any_diff = false;
  Rng again = parent.split(3);
  for (int i = 0; i < 16; ++i) any_diff |= again.next_u64() != other.next_u64();
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
  Rng r(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = r.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int is roughly uniform") {
  Rng r(5);
  std::vector<int> counts(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_int(5)];
  for (int c : counts) {
    CHECK(c > n / 5 - n / 50);
    CHECK(c < n / 5 + n / 50);
  }
}

TEST_CASE("normal has sane moments") {
  Rng r(9);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal(1.0, 2.0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean - 1.0) < 0.1);
  CHECK(std::abs(var - 4.0) < 0.3);
}
