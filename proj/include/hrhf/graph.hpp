#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hrhf/tensor.hpp"

namespace hrhf {

// Reverse-mode tape over a small fixed op set. Nodes are appended in
// topological order (every input id is smaller than its consumer), shapes are
// inferred at build time, and evaluation is a pure function of
// (graph, bindings): fixed row-major summation order everywhere, so repeated
// runs are bit-identical.
enum class Op : std::uint8_t {
  Input,
  Const,
  Add,
  Sub,
  Mul,
  AddScalar,
  MulScalar,
  Relu,
  Log,
  LogFloor,  // log(max(x, floor)); zero gradient below the floor
  Exp,
  Sum,
  Mean,
  SoftmaxLast,
  Conv2d,       // (x, w, b), attr i0 = pad
  ChannelMean,  // [..., C] -> [C]
  ChannelVar,   // (x, mu) -> [C], biased
  BnApply,      // (x, mu, var, gamma, beta), attr a0 = eps
  LsePool,      // (x, r): [H,W,C]->[C] or [N,H,W,C]->[N,C]; r is [C] or [1]
  AvgPool,      // spatial mean per channel, shapes as LsePool
  MaxPool,      // spatial max per channel; subgradient to first argmax
  Rearrange,    // fold channels >= i0 into channel 0, keep 0..i0-1
  TvLoss,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::Input;
  std::vector<int> in;
  Shape shape;
  double a0 = 0.0;      // scalar attr: AddScalar/MulScalar constant, BnApply
                        // eps, LogFloor floor
  std::int64_t i0 = 0;  // Conv2d pad, Rearrange old channel count
  Tensor cval;          // Const payload
  bool trainable = false;
  std::string name;
};

class Graph {
 public:
  int input(const std::string& name, Shape shape, bool trainable = true);
  int constant(Tensor value, const std::string& name = "");

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int add_scalar(int a, double c);
  int mul_scalar(int a, double c);
  int relu(int a);
  int log(int a);
  int log_floor(int a, double floor);
  int exp(int a);
  int sum(int a);
  int mean(int a);
  int softmax_last(int a);
  int conv2d(int x, int w, int b, std::int64_t pad);
  int channel_mean(int x);
  int channel_var(int x, int mu);
  int bn_apply(int x, int mu, int var, int gamma, int beta, double eps);
  int lse_pool(int x, int r);
  int avg_pool(int x);
  int max_pool(int x);
  int rearrange(int x, std::int64_t old_channels);
  int tv(int x);

  void mark_output(int id);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const std::vector<int>& outputs() const { return outputs_; }
  const Shape& shape_of(int id) const { return node(id).shape; }

  // node ids of all trainable Input leaves
  std::vector<int> trainable_inputs() const;

 private:
  int push(Node n);
  const Node& in_node(int id, const char* ctx) const;

  std::vector<Node> nodes_;
  std::vector<int> outputs_;
};

using Bindings = std::map<int, Tensor>;

// Forward values for every node, indexed by node id.
struct Forward {
  std::vector<Tensor> values;
  const Tensor& at(int id) const { return values[static_cast<size_t>(id)]; }
};

Forward run_forward(const Graph& g, const Bindings& inputs);

// Values of the graph's marked outputs (all nodes if none marked).
std::map<int, Tensor> evaluate(const Graph& g, const Bindings& inputs);

// General vector-Jacobian product: seeds `seed_grad` at node `seed` and
// accumulates into every node that needs a gradient. `grads[id]` is valid
// where `has[id]` is true.
struct BackwardResult {
  std::vector<Tensor> grads;
  std::vector<bool> has;
  const Tensor& at(int id) const { return grads[static_cast<size_t>(id)]; }
};

BackwardResult run_backward(const Graph& g, const Forward& fwd, int seed,
                            const Tensor& seed_grad);

// d(seed_output)/d(leaf) for every trainable Input leaf; seed must be scalar.
std::map<int, Tensor> gradients(const Graph& g, const Bindings& inputs,
                                int seed_output);

// Central finite differences against the analytic gradient for every entry of
// every trainable leaf. Entries whose +/-eps probes flip a relu sign, change
// a max-pool argmax, or cross a LogFloor floor are excluded. Returns the
// worst relative error (absolute floor 1e-6).
double grad_check(const Graph& g, const Bindings& inputs, int seed_output,
                  double eps);

}  // namespace hrhf
