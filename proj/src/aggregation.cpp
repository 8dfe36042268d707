#include "hrhf/aggregation.hpp"

#include "hrhf/kernels.hpp"

namespace hrhf {

namespace {

void check_map(const Tensor& m) {
  if (m.rank() != 3)
    throw Error("aggregation: score map must be [H,W,C], got " +
                shape_str(m.shape));
  m.require_finite("aggregation score map");
}

}  // namespace

Tensor saa_pool(const Tensor& score_map, double r) {
  check_map(score_map);
  return saa_pool(score_map,
                  std::vector<double>(
                      static_cast<size_t>(score_map.shape[2]), r));
}

Tensor saa_pool(const Tensor& score_map,
                const std::vector<double>& r_per_class) {
  check_map(score_map);
  const auto C = score_map.shape[2];
  if (static_cast<std::int64_t>(r_per_class.size()) != C)
    throw Error("saa_pool: r count " + std::to_string(r_per_class.size()) +
                " does not match " + std::to_string(C) + " classes");
  for (double r : r_per_class)
    if (!(r > 0.0)) throw Error("saa_pool: r must be positive");
  Tensor out = Tensor::zeros({C});
  kernels::lse_pool(score_map.data.data(),
                    score_map.shape[0] * score_map.shape[1], C,
                    r_per_class.data(), out.data.data());
  return out;
}

Tensor avg_pool(const Tensor& score_map) {
  check_map(score_map);
  const auto C = score_map.shape[2];
  Tensor out = Tensor::zeros({C});
  kernels::channel_mean(score_map.data.data(),
                        score_map.shape[0] * score_map.shape[1], C,
                        out.data.data());
  return out;
}

Tensor max_pool(const Tensor& score_map) {
  check_map(score_map);
  const auto C = score_map.shape[2];
  Tensor out = Tensor::zeros({C});
  kernels::max_pool(score_map.data.data(),
                    score_map.shape[0] * score_map.shape[1], C,
                    out.data.data(), nullptr);
  return out;
}

std::vector<double> sample_r(Rng& rng, const std::vector<double>& r_set,
                             int class_count) {
  if (r_set.empty()) throw Error("sample_r: empty candidate set");
  for (double r : r_set)
    if (!(r > 0.0)) throw Error("sample_r: candidates must be positive");
  std::vector<double> out(static_cast<size_t>(class_count));
  for (auto& v : out) v = r_set[rng.uniform_int(r_set.size())];
  return out;
}

}  // namespace hrhf
