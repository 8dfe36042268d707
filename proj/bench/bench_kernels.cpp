// Times the OpenMP front-door kernels against the naive serial references
// and reports effective GFLOP/s, plus one end-to-end forward/backward of the
// toy network. Run with HRHF_THREADS=N to compare thread counts.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "hrhf/graph.hpp"
#include "hrhf/kernels.hpp"
#include "hrhf/rng.hpp"
#include "hrhf/segnet.hpp"

using namespace hrhf;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(std::vector<double>& v, Rng& rng) {
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
}

}  // namespace

int main() {
  Rng rng(7);
  const std::int64_t N = 8, H = 64, W = 64, Ci = 16, Co = 16, K = 3;
  const double conv_flops = 2.0 * N * H * W * Co * K * K * Ci;

  std::vector<double> x(static_cast<size_t>(N * H * W * Ci));
  std::vector<double> w(static_cast<size_t>(K * K * Ci * Co));
  std::vector<double> b(static_cast<size_t>(Co));
  std::vector<double> y(static_cast<size_t>(N * H * W * Co));
  std::vector<double> gx(x.size()), gw(w.size());
  fill(x, rng);
  fill(w, rng);
  fill(b, rng);
  fill(y, rng);

  std::printf("threads = %d\n", kernels::thread_count());

  struct Row {
    const char* name;
    double flops;
    std::function<void()> par;
    std::function<void()> ser;
  };
  const std::vector<Row> rows = {
      {"conv2d_forward", conv_flops,
       [&] {
         kernels::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K, K, Co,
                                 b.data(), 1, y.data());
       },
       [&] {
         kernels::serial::conv2d_forward(x.data(), N, H, W, Ci, w.data(), K,
                                         K, Co, b.data(), 1, y.data());
       }},
      {"conv2d_backward_input", conv_flops,
       [&] {
         std::fill(gx.begin(), gx.end(), 0.0);
         kernels::conv2d_backward_input(y.data(), w.data(), N, H, W, Ci, K, K,
                                        Co, 1, gx.data());
       },
       [&] {
         std::fill(gx.begin(), gx.end(), 0.0);
         kernels::serial::conv2d_backward_input(y.data(), w.data(), N, H, W,
                                                Ci, K, K, Co, 1, gx.data());
       }},
      {"conv2d_backward_weights", conv_flops,
       [&] {
         kernels::conv2d_backward_weights(x.data(), y.data(), N, H, W, Ci, K,
                                          K, Co, 1, gw.data());
       },
       [&] {
         kernels::serial::conv2d_backward_weights(x.data(), y.data(), N, H, W,
                                                  Ci, K, K, Co, 1, gw.data());
       }},
  };

  std::printf("%-24s %12s %12s %10s %10s\n", "kernel", "parallel ms",
              "serial ms", "par GF/s", "speedup");
  for (const auto& r : rows) {
    const double tp = time_ms(r.par, 5);
    const double ts = time_ms(r.ser, 2);
    std::printf("%-24s %12.3f %12.3f %10.2f %10.2f\n", r.name, tp, ts,
                r.flops / (tp * 1e6), ts / tp);
  }

  // end-to-end: one training-mode forward/backward of the default net
  {
    Rng mrng(3);
    ModelState m = init_model(ArchConfig{}, 4, mrng);
    ForwardGraph fg = build_forward(m, N, H, W, BnMode::Train, true, false,
                                    false);
    const int loss = fg.g.mean(fg.g.mul(fg.scores, fg.scores));
    Tensor images = Tensor::zeros({N, H, W, 3});
    for (auto& v : images.data) v = mrng.uniform();
    Bindings bind;
    bind[fg.image] = images;
    bind_params(m, fg, bind);
    const double t = time_ms(
        [&] {
          Forward fwd = run_forward(fg.g, bind);
          run_backward(fg.g, fwd, loss, Tensor::scalar(1.0));
        },
        3);
    std::printf("%-24s %12.3f ms/batch (%lld images)\n",
                "net fwd+bwd (train)", t, static_cast<long long>(N));
  }
  return 0;
}
