#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrhf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN/Inf showed up in a committed value. Callers that can reject a step
// or drop a sample catch this one specifically.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major 64-bit tensor. `grad`, when attached, has the same length
// as `data`. Values are immutable once handed to the graph engine; mutation
// happens only on owned parameter tensors (adam_step).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> v);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(std::int64_t i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void require_finite(const std::string& what) const;

  void attach_grad();
  void clear_grad();
};

bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace hrhf
