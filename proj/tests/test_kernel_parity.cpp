#include <doctest.h>

#include <cstring>
#include <vector>

#include "hrhf/kernels.hpp"
#include "hrhf/rng.hpp"

using namespace hrhf;

namespace {

std::vector<double> rand_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

struct ThreadGuard {
  int saved;
  explicit ThreadGuard(int n) : saved(kernels::thread_count()) {
    kernels::set_threads(n);
  }
  ~ThreadGuard() { kernels::set_threads(saved); }
};

}  // namespace

// The OpenMP front doors must match the naive serial references bit for bit,
// at any thread count: parallelism never reorders a single accumulator.
TEST_CASE("conv kernels: parallel paths are bit-identical to serial") {
  Rng rng(101);
  for (int threads : {1, 2, 4}) {
    ThreadGuard tg(threads);
    for (int rep = 0; rep < 3; ++rep) {
      const std::int64_t N = 2, H = 7, W = 6, Ci = 5, Co = 4;
      const std::int64_t K = rep == 1 ? 1 : 3;
      const std::int64_t pad = (K - 1) / 2;
      const auto x = rand_vec(static_cast<size_t>(N * H * W * Ci), rng);
      const auto w = rand_vec(static_cast<size_t>(K * K * Ci * Co), rng);
      const auto b = rand_vec(static_cast<size_t>(Co), rng);
      const auto gy = rand_vec(static_cast<size_t>(N * H * W * Co), rng);

      std::vector<double> y1(gy.size()), y2(gy.size());
      kernels::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K, K, Co,
                              b.data(), pad, y1.data());
      kernels::serial::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K, K,
                                      Co, b.data(), pad, y2.data());
      CHECK(bits_equal(y1, y2));

      std::vector<double> gx1(x.size(), 0.0), gx2(x.size(), 0.0);
      kernels::conv2d_backward_input(gy.data(), w.data(), N, H, W, Ci, K, K,
                                     Co, pad, gx1.data());
      kernels::serial::conv2d_backward_input(gy.data(), w.data(), N, H, W,
                                             Ci, K, K, Co, pad, gx2.data());
      CHECK(bits_equal(gx1, gx2));

      std::vector<double> gw1(w.size()), gw2(w.size());
      kernels::conv2d_backward_weights(x.data(), gy.data(), N, H, W, Ci, K,
                                       K, Co, pad, gw1.data());
      kernels::serial::conv2d_backward_weights(x.data(), gy.data(), N, H, W,
                                               Ci, K, K, Co, pad, gw2.data());
      CHECK(bits_equal(gw1, gw2));

      std::vector<double> gb1(b.size()), gb2(b.size());
      kernels::conv2d_backward_bias(gy.data(), N * H * W, Co, gb1.data());
      kernels::serial::conv2d_backward_bias(gy.data(), N * H * W, Co,
                                            gb2.data());
      CHECK(bits_equal(gb1, gb2));
    }
  }
}

TEST_CASE("row kernels: parallel paths are bit-identical to serial") {
  Rng rng(102);
  for (int threads : {1, 2, 4}) {
    ThreadGuard tg(threads);
    const std::int64_t rows = 37, C = 6;
    const auto x = rand_vec(static_cast<size_t>(rows * C), rng);

    std::vector<double> s1(x.size()), s2(x.size());
    kernels::softmax_lastdim_forward(x.data(), rows, C, s1.data());
    kernels::serial::softmax_lastdim_forward(x.data(), rows, C, s2.data());
    CHECK(bits_equal(s1, s2));

    std::vector<double> m1(C), m2(C), v1(C), v2(C);
    kernels::channel_mean(x.data(), rows, C, m1.data());
    kernels::serial::channel_mean(x.data(), rows, C, m2.data());
    CHECK(bits_equal(m1, m2));
    kernels::channel_var(x.data(), m1.data(), rows, C, v1.data());
    kernels::serial::channel_var(x.data(), m1.data(), rows, C, v2.data());
    CHECK(bits_equal(v1, v2));

    const std::vector<double> r{0.5, 1.0, 5.0, 10.0, 20.0, 2.5};
    std::vector<double> l1(C), l2(C);
    kernels::lse_pool(x.data(), rows, C, r.data(), l1.data());
    kernels::serial::lse_pool(x.data(), rows, C, r.data(), l2.data());
    CHECK(bits_equal(l1, l2));
  }
}

TEST_CASE("thread count does not change conv results") {
  Rng rng(103);
  const std::int64_t N = 1, H = 16, W = 16, Ci = 8, Co = 8, K = 3;
  const auto x = rand_vec(static_cast<size_t>(N * H * W * Ci), rng);
  const auto w = rand_vec(static_cast<size_t>(K * K * Ci * Co), rng);
  const auto b = rand_vec(static_cast<size_t>(Co), rng);
  std::vector<double> ref(static_cast<size_t>(N * H * W * Co));
  {
    ThreadGuard tg(1);
    kernels::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K, K, Co,
                            b.data(), 1, ref.data());
  }
  for (int threads : {2, 3, 8}) {
    ThreadGuard tg(threads);
    std::vector<double> y(ref.size());
    kernels::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K, K, Co,
                            b.data(), 1, y.data());
    CHECK(bits_equal(ref, y));
  }
}
