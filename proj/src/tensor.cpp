#include "hrhf/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace hrhf {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw Error("shape has non-positive extent " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  const auto n = shape_numel(s);
  t.shape = std::move(s);
  t.data.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t = zeros(std::move(s));
  for (auto& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from(Shape s, std::vector<double> v) {
  const auto n = shape_numel(s);
  if (n != static_cast<std::int64_t>(v.size()))
    throw Error("tensor data length " + std::to_string(v.size()) +
                " does not match shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(v);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) throw NonFiniteError("non-finite value in " + what);
}

void Tensor::attach_grad() { grad.assign(data.size(), 0.0); }

void Tensor::clear_grad() { grad.clear(); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  if (a.data.size() != b.data.size()) return false;
  return a.data.empty() ||
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(double)) == 0;
}

}  // namespace hrhf
