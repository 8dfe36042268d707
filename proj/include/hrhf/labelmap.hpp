#pragma once

#include <cstdint>
#include <vector>

#include "hrhf/tensor.hpp"

namespace hrhf {

// Per-pixel class indices with an optional ignore mask. Indices are local to
// whatever class space the producer used (step-local, cumulative, or global);
// the context defines it.
struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<int> idx;
  std::vector<std::uint8_t> ignore;  // empty means nothing ignored

  static LabelMap filled(std::int64_t h, std::int64_t w, int value);

  std::int64_t pixels() const { return height * width; }
  int at(std::int64_t y, std::int64_t x) const {
    return idx[static_cast<size_t>(y * width + x)];
  }
  bool ignored(std::int64_t i) const {
    return !ignore.empty() && ignore[static_cast<size_t>(i)] != 0;
  }

  // [H,W,C] one-hot view; ignored pixels come out all-zero
  Tensor to_onehot(int class_count) const;
};

bool operator==(const LabelMap& a, const LabelMap& b);

}  // namespace hrhf
