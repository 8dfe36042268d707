#include "hrhf/graph.hpp"

#include <algorithm>
#include <cmath>

#include "hrhf/kernels.hpp"

namespace hrhf {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddScalar: return "add_scalar";
    case Op::MulScalar: return "mul_scalar";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::LogFloor: return "log_floor";
    case Op::Exp: return "exp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SoftmaxLast: return "softmax";
    case Op::Conv2d: return "conv2d";
    case Op::ChannelMean: return "channel_mean";
    case Op::ChannelVar: return "channel_var";
    case Op::BnApply: return "bn_apply";
    case Op::LsePool: return "lse_pool";
    case Op::AvgPool: return "avg_pool";
    case Op::MaxPool: return "max_pool";
    case Op::Rearrange: return "rearrange";
    case Op::TvLoss: return "tv_loss";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(int id, Op op, const std::string& msg) {
  throw Error("node " + std::to_string(id) + " (" + op_name(op) + "): " + msg);
}

std::int64_t rows_of(const Shape& s) {
  std::int64_t r = 1;
  for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::int64_t channels_of(const Shape& s) { return s.back(); }

}  // namespace

const Node& Graph::in_node(int id, const char* ctx) const {
  if (id < 0 || id >= size())
    throw Error(std::string(ctx) + ": input node id " + std::to_string(id) +
                " out of range");
  return nodes_[static_cast<size_t>(id)];
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return size() - 1;
}

int Graph::input(const std::string& name, Shape shape, bool trainable) {
  shape_numel(shape);
  Node n;
  n.op = Op::Input;
  n.shape = std::move(shape);
  n.trainable = trainable;
  n.name = name;
  return push(std::move(n));
}

int Graph::constant(Tensor value, const std::string& name) {
  Node n;
  n.op = Op::Const;
  n.shape = value.shape;
  n.cval = std::move(value);
  n.name = name;
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  const auto& na = in_node(a, "add");
  const auto& nb = in_node(b, "add");
  if (na.shape != nb.shape)
    fail(size(), Op::Add, "shape mismatch " + shape_str(na.shape) + " vs " +
                              shape_str(nb.shape));
  Node n;
  n.op = Op::Add;
  n.in = {a, b};
  n.shape = na.shape;
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  const auto& na = in_node(a, "sub");
  const auto& nb = in_node(b, "sub");
  if (na.shape != nb.shape)
    fail(size(), Op::Sub, "shape mismatch " + shape_str(na.shape) + " vs " +
                              shape_str(nb.shape));
  Node n;
  n.op = Op::Sub;
  n.in = {a, b};
  n.shape = na.shape;
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  const auto& na = in_node(a, "mul");
  const auto& nb = in_node(b, "mul");
  if (na.shape != nb.shape)
    fail(size(), Op::Mul, "shape mismatch " + shape_str(na.shape) + " vs " +
                              shape_str(nb.shape));
  Node n;
  n.op = Op::Mul;
  n.in = {a, b};
  n.shape = na.shape;
  return push(std::move(n));
}

int Graph::add_scalar(int a, double c) {
  Node n;
  n.op = Op::AddScalar;
  n.in = {a};
  n.shape = in_node(a, "add_scalar").shape;
  n.a0 = c;
  return push(std::move(n));
}

int Graph::mul_scalar(int a, double c) {
  Node n;
  n.op = Op::MulScalar;
  n.in = {a};
  n.shape = in_node(a, "mul_scalar").shape;
  n.a0 = c;
  return push(std::move(n));
}

int Graph::relu(int a) {
  Node n;
  n.op = Op::Relu;
  n.in = {a};
  n.shape = in_node(a, "relu").shape;
  return push(std::move(n));
}

int Graph::log(int a) {
  Node n;
  n.op = Op::Log;
  n.in = {a};
  n.shape = in_node(a, "log").shape;
  return push(std::move(n));
}

int Graph::log_floor(int a, double floor) {
  Node n;
  n.op = Op::LogFloor;
  n.in = {a};
  n.shape = in_node(a, "log_floor").shape;
  n.a0 = floor;
  return push(std::move(n));
}

int Graph::exp(int a) {
  Node n;
  n.op = Op::Exp;
  n.in = {a};
  n.shape = in_node(a, "exp").shape;
  return push(std::move(n));
}

int Graph::sum(int a) {
  in_node(a, "sum");
  Node n;
  n.op = Op::Sum;
  n.in = {a};
  n.shape = {1};
  return push(std::move(n));
}

int Graph::mean(int a) {
  in_node(a, "mean");
  Node n;
  n.op = Op::Mean;
  n.in = {a};
  n.shape = {1};
  return push(std::move(n));
}

int Graph::softmax_last(int a) {
  const auto& na = in_node(a, "softmax");
  if (na.shape.empty()) fail(size(), Op::SoftmaxLast, "rank 0 input");
  Node n;
  n.op = Op::SoftmaxLast;
  n.in = {a};
  n.shape = na.shape;
  return push(std::move(n));
}

int Graph::conv2d(int x, int w, int b, std::int64_t pad) {
  const auto& nx = in_node(x, "conv2d");
  const auto& nw = in_node(w, "conv2d");
  const auto& nb = in_node(b, "conv2d");
  if (nx.shape.size() != 4) fail(size(), Op::Conv2d, "x must be [N,H,W,Ci]");
  if (nw.shape.size() != 4)
    fail(size(), Op::Conv2d, "w must be [KH,KW,Ci,Co]");
  const auto KH = nw.shape[0], KW = nw.shape[1];
  if (nw.shape[2] != nx.shape[3])
    fail(size(), Op::Conv2d,
         "channel mismatch: x has " + std::to_string(nx.shape[3]) +
             ", w expects " + std::to_string(nw.shape[2]));
  if (pad * 2 != KH - 1 || pad * 2 != KW - 1)
    fail(size(), Op::Conv2d, "only same-size convolutions supported");
  if (nb.shape != Shape{nw.shape[3]})
    fail(size(), Op::Conv2d, "bias must be [Co]");
  Node n;
  n.op = Op::Conv2d;
  n.in = {x, w, b};
  n.shape = {nx.shape[0], nx.shape[1], nx.shape[2], nw.shape[3]};
  n.i0 = pad;
  return push(std::move(n));
}

int Graph::channel_mean(int x) {
  const auto& nx = in_node(x, "channel_mean");
  if (nx.shape.size() < 2) fail(size(), Op::ChannelMean, "rank must be >= 2");
  Node n;
  n.op = Op::ChannelMean;
  n.in = {x};
  n.shape = {nx.shape.back()};
  return push(std::move(n));
}

int Graph::channel_var(int x, int mu) {
  const auto& nx = in_node(x, "channel_var");
  const auto& nm = in_node(mu, "channel_var");
  if (nx.shape.size() < 2) fail(size(), Op::ChannelVar, "rank must be >= 2");
  if (nm.shape != Shape{nx.shape.back()})
    fail(size(), Op::ChannelVar, "mu must be [C]");
  Node n;
  n.op = Op::ChannelVar;
  n.in = {x, mu};
  n.shape = {nx.shape.back()};
  return push(std::move(n));
}

int Graph::bn_apply(int x, int mu, int var, int gamma, int beta, double eps) {
  const auto& nx = in_node(x, "bn_apply");
  if (nx.shape.size() < 2) fail(size(), Op::BnApply, "rank must be >= 2");
  const Shape cs{nx.shape.back()};
  for (int id : {mu, var, gamma, beta})
    if (in_node(id, "bn_apply").shape != cs)
      fail(size(), Op::BnApply,
           "per-channel input must be " + shape_str(cs));
  Node n;
  n.op = Op::BnApply;
  n.in = {x, mu, var, gamma, beta};
  n.shape = nx.shape;
  n.a0 = eps;
  return push(std::move(n));
}

namespace {
Shape pooled_shape(const Shape& in, int id, Op op) {
  if (in.size() == 3) return {in[2]};
  if (in.size() == 4) return {in[0], in[3]};
  throw Error("node " + std::to_string(id) + " (" + op_name(op) +
              "): input must be [H,W,C] or [N,H,W,C], got " + shape_str(in));
}
}  // namespace

int Graph::lse_pool(int x, int r) {
  const auto& nx = in_node(x, "lse_pool");
  const auto& nr = in_node(r, "lse_pool");
  const Shape out = pooled_shape(nx.shape, size(), Op::LsePool);
  const auto C = nx.shape.back();
  if (nr.shape != Shape{C} && nr.shape != Shape{1})
    fail(size(), Op::LsePool, "r must be [C] or [1]");
  Node n;
  n.op = Op::LsePool;
  n.in = {x, r};
  n.shape = out;
  return push(std::move(n));
}

int Graph::avg_pool(int x) {
  const auto& nx = in_node(x, "avg_pool");
  Node n;
  n.op = Op::AvgPool;
  n.in = {x};
  n.shape = pooled_shape(nx.shape, size(), Op::AvgPool);
  return push(std::move(n));
}

int Graph::max_pool(int x) {
  const auto& nx = in_node(x, "max_pool");
  Node n;
  n.op = Op::MaxPool;
  n.in = {x};
  n.shape = pooled_shape(nx.shape, size(), Op::MaxPool);
  return push(std::move(n));
}

int Graph::rearrange(int x, std::int64_t old_channels) {
  const auto& nx = in_node(x, "rearrange");
  if (nx.shape.empty()) fail(size(), Op::Rearrange, "rank 0 input");
  const auto C = nx.shape.back();
  if (old_channels < 1 || old_channels > C)
    fail(size(), Op::Rearrange,
         "old channel count " + std::to_string(old_channels) +
             " incompatible with C=" + std::to_string(C));
  Node n;
  n.op = Op::Rearrange;
  n.in = {x};
  n.shape = nx.shape;
  n.shape.back() = old_channels;
  n.i0 = old_channels;
  return push(std::move(n));
}

int Graph::tv(int x) {
  const auto& nx = in_node(x, "tv_loss");
  if (nx.shape.size() != 3 && nx.shape.size() != 4)
    fail(size(), Op::TvLoss, "input must be [H,W,C] or [N,H,W,C]");
  Node n;
  n.op = Op::TvLoss;
  n.in = {x};
  n.shape = {1};
  return push(std::move(n));
}

void Graph::mark_output(int id) {
  in_node(id, "mark_output");
  outputs_.push_back(id);
}

std::vector<int> Graph::trainable_inputs() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (nodes_[static_cast<size_t>(i)].op == Op::Input &&
        nodes_[static_cast<size_t>(i)].trainable)
      out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace {

struct Dims4 {
  std::int64_t N, H, W, C;
};

Dims4 dims4(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  return {1, s[0], s[1], s[2]};
}

void spread_r(const Tensor& r, std::int64_t C, std::vector<double>& out) {
  out.resize(static_cast<size_t>(C));
  if (r.numel() == 1)
    std::fill(out.begin(), out.end(), r[0]);
  else
    std::copy(r.data.begin(), r.data.end(), out.begin());
}

}  // namespace

Forward run_forward(const Graph& g, const Bindings& inputs) {
  Forward fwd;
  fwd.values.resize(static_cast<size_t>(g.size()));
  for (int id = 0; id < g.size(); ++id) {
    const Node& n = g.node(id);
    Tensor& out = fwd.values[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::Input: {
        auto it = inputs.find(id);
        if (it == inputs.end())
          fail(id, n.op, "unbound input '" + n.name + "'");
        if (it->second.shape != n.shape)
          fail(id, n.op,
               "bound tensor shape " + shape_str(it->second.shape) +
                   " does not match declared " + shape_str(n.shape));
        out = it->second;
        break;
      }
      case Op::Const:
        out = n.cval;
        break;
      case Op::Add: {
        const Tensor& a = fwd.at(n.in[0]);
        const Tensor& b = fwd.at(n.in[1]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::Sub: {
        const Tensor& a = fwd.at(n.in[0]);
        const Tensor& b = fwd.at(n.in[1]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
        break;
      }
      case Op::Mul: {
        const Tensor& a = fwd.at(n.in[0]);
        const Tensor& b = fwd.at(n.in[1]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case Op::AddScalar: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] + n.a0;
        break;
      }
      case Op::MulScalar: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] * n.a0;
        break;
      }
      case Op::Relu: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        kernels::relu_forward(a.data.data(), a.numel(), out.data.data());
        break;
      }
      case Op::Log: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a[i]);
        break;
      }
      case Op::LogFloor: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i)
          out[i] = std::log(a[i] > n.a0 ? a[i] : n.a0);
        break;
      }
      case Op::Exp: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a[i]);
        break;
      }
      case Op::Sum: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::scalar(kernels::sum_all(a.data.data(), a.numel()));
        break;
      }
      case Op::Mean: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::scalar(kernels::sum_all(a.data.data(), a.numel()) /
                             static_cast<double>(a.numel()));
        break;
      }
      case Op::SoftmaxLast: {
        const Tensor& a = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        kernels::softmax_lastdim_forward(a.data.data(), rows_of(a.shape),
                                         channels_of(a.shape),
                                         out.data.data());
        break;
      }
      case Op::Conv2d: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& w = fwd.at(n.in[1]);
        const Tensor& b = fwd.at(n.in[2]);
        out = Tensor::zeros(n.shape);
        kernels::conv2d_forward(x.data.data(), x.shape[0], x.shape[1],
                                x.shape[2], x.shape[3], w.data.data(),
                                w.shape[0], w.shape[1], w.shape[3],
                                b.data.data(), n.i0, out.data.data());
        break;
      }
      case Op::ChannelMean: {
        const Tensor& x = fwd.at(n.in[0]);
        out = Tensor::zeros(n.shape);
        kernels::channel_mean(x.data.data(), rows_of(x.shape),
                              channels_of(x.shape), out.data.data());
        break;
      }
      case Op::ChannelVar: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& mu = fwd.at(n.in[1]);
        out = Tensor::zeros(n.shape);
        kernels::channel_var(x.data.data(), mu.data.data(), rows_of(x.shape),
                             channels_of(x.shape), out.data.data());
        break;
      }
      case Op::BnApply: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& mu = fwd.at(n.in[1]);
        const Tensor& var = fwd.at(n.in[2]);
        const Tensor& gamma = fwd.at(n.in[3]);
        const Tensor& beta = fwd.at(n.in[4]);
        out = Tensor::zeros(n.shape);
        const auto rows = rows_of(x.shape);
        const auto C = channels_of(x.shape);
        std::vector<double> inv(static_cast<size_t>(C));
        for (std::int64_t c = 0; c < C; ++c)
          inv[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[c] + n.a0);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < C; ++c)
            out[r * C + c] = gamma[c] * (x[r * C + c] - mu[c]) *
                                 inv[static_cast<size_t>(c)] +
                             beta[c];
        break;
      }
      case Op::LsePool: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& r = fwd.at(n.in[1]);
        const auto d = dims4(x.shape);
        for (std::int64_t c = 0; c < (r.numel() == 1 ? 1 : d.C); ++c)
          if (r[c] <= 0.0) fail(id, n.op, "r must be positive");
        out = Tensor::zeros(n.shape);
        std::vector<double> rv;
        spread_r(r, d.C, rv);
        for (std::int64_t b = 0; b < d.N; ++b)
          kernels::lse_pool(x.data.data() + b * d.H * d.W * d.C, d.H * d.W,
                            d.C, rv.data(), out.data.data() + b * d.C);
        break;
      }
      case Op::AvgPool: {
        const Tensor& x = fwd.at(n.in[0]);
        const auto d = dims4(x.shape);
        out = Tensor::zeros(n.shape);
        for (std::int64_t b = 0; b < d.N; ++b)
          kernels::channel_mean(x.data.data() + b * d.H * d.W * d.C,
                                d.H * d.W, d.C, out.data.data() + b * d.C);
        break;
      }
      case Op::MaxPool: {
        const Tensor& x = fwd.at(n.in[0]);
        const auto d = dims4(x.shape);
        out = Tensor::zeros(n.shape);
        for (std::int64_t b = 0; b < d.N; ++b)
          kernels::max_pool(x.data.data() + b * d.H * d.W * d.C, d.H * d.W,
                            d.C, out.data.data() + b * d.C, nullptr);
        break;
      }
      case Op::Rearrange: {
        const Tensor& x = fwd.at(n.in[0]);
        const auto C = channels_of(x.shape);
        const auto old = n.i0;
        const auto rows = rows_of(x.shape);
        out = Tensor::zeros(n.shape);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* xr = x.data.data() + r * C;
          double* yr = out.data.data() + r * old;
          double bg = xr[0];
          for (std::int64_t c = old; c < C; ++c) bg += xr[c];
          yr[0] = bg;
          for (std::int64_t c = 1; c < old; ++c) yr[c] = xr[c];
        }
        break;
      }
      case Op::TvLoss: {
        const Tensor& x = fwd.at(n.in[0]);
        const auto d = dims4(x.shape);
        out = Tensor::scalar(
            kernels::tv_loss(x.data.data(), d.N, d.H, d.W, d.C));
        break;
      }
    }
    if (!out.all_finite())
      throw NonFiniteError("node " + std::to_string(id) + " (" +
                           op_name(n.op) + "): non-finite forward result");
  }
  return fwd;
}

std::map<int, Tensor> evaluate(const Graph& g, const Bindings& inputs) {
  Forward fwd = run_forward(g, inputs);
  std::map<int, Tensor> out;
  if (g.outputs().empty()) {
    for (int id = 0; id < g.size(); ++id)
      out.emplace(id, std::move(fwd.values[static_cast<size_t>(id)]));
  } else {
    for (int id : g.outputs()) out.emplace(id, fwd.at(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

std::vector<bool> grad_mask(const Graph& g) {
  std::vector<bool> needs(static_cast<size_t>(g.size()), false);
  for (int id = 0; id < g.size(); ++id) {
    const Node& n = g.node(id);
    if (n.op == Op::Input && n.trainable) {
      needs[static_cast<size_t>(id)] = true;
      continue;
    }
    for (int in : n.in)
      if (needs[static_cast<size_t>(in)]) {
        needs[static_cast<size_t>(id)] = true;
        break;
      }
  }
  return needs;
}

}  // namespace

BackwardResult run_backward(const Graph& g, const Forward& fwd, int seed,
                            const Tensor& seed_grad) {
  if (seed < 0 || seed >= g.size()) throw Error("backward: bad seed node id");
  if (seed_grad.shape != g.node(seed).shape)
    throw Error("backward: seed gradient shape mismatch");

  const std::vector<bool> needs = grad_mask(g);
  BackwardResult bk;
  bk.grads.resize(static_cast<size_t>(g.size()));
  bk.has.assign(static_cast<size_t>(g.size()), false);

  auto touch = [&](int id) -> Tensor& {
    auto& t = bk.grads[static_cast<size_t>(id)];
    if (!bk.has[static_cast<size_t>(id)]) {
      t = Tensor::zeros(g.node(id).shape);
      bk.has[static_cast<size_t>(id)] = true;
    }
    return t;
  };

  touch(seed) = seed_grad;

  for (int id = seed; id >= 0; --id) {
    if (!bk.has[static_cast<size_t>(id)]) continue;
    const Node& n = g.node(id);
    if (n.op == Op::Input || n.op == Op::Const) continue;
    // propagate only toward nodes on a path from a trainable leaf
    const Tensor& gy = bk.at(id);
    auto want = [&](int k) {
      return needs[static_cast<size_t>(n.in[static_cast<size_t>(k)])];
    };
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Add: {
        if (want(0)) {
          Tensor& ga = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        }
        if (want(1)) {
          Tensor& gb = touch(n.in[1]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
        }
        break;
      }
      case Op::Sub: {
        if (want(0)) {
          Tensor& ga = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        }
        if (want(1)) {
          Tensor& gb = touch(n.in[1]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = fwd.at(n.in[0]);
        const Tensor& b = fwd.at(n.in[1]);
        if (want(0)) {
          Tensor& ga = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * b[i];
        }
        if (want(1)) {
          Tensor& gb = touch(n.in[1]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * a[i];
        }
        break;
      }
      case Op::AddScalar: {
        if (want(0)) {
          Tensor& ga = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        }
        break;
      }
      case Op::MulScalar: {
        if (want(0)) {
          Tensor& ga = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i)
            ga[i] += gy[i] * n.a0;
        }
        break;
      }
      case Op::Relu: {
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          Tensor& gx = touch(n.in[0]);
          kernels::relu_backward(x.data.data(), gy.data.data(), x.numel(),
                                 gx.data.data());
        }
        break;
      }
      case Op::Log: {
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i)
            gx[i] += gy[i] / x[i];
        }
        break;
      }
      case Op::LogFloor: {
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i)
            if (x[i] > n.a0) gx[i] += gy[i] / x[i];
        }
        break;
      }
      case Op::Exp: {
        if (want(0)) {
          const Tensor& y = fwd.at(id);
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t i = 0; i < gy.numel(); ++i)
            gx[i] += gy[i] * y[i];
        }
        break;
      }
      case Op::Sum: {
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          const double s = gy[0];
          for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += s;
        }
        break;
      }
      case Op::Mean: {
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          const double s = gy[0] / static_cast<double>(gx.numel());
          for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += s;
        }
        break;
      }
      case Op::SoftmaxLast: {
        if (want(0)) {
          const Tensor& y = fwd.at(id);
          Tensor& gx = touch(n.in[0]);
          kernels::softmax_lastdim_backward(y.data.data(), gy.data.data(),
                                            rows_of(y.shape),
                                            channels_of(y.shape),
                                            gx.data.data());
        }
        break;
      }
      case Op::Conv2d: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& w = fwd.at(n.in[1]);
        const auto N = x.shape[0], H = x.shape[1], W = x.shape[2],
                   Ci = x.shape[3];
        const auto KH = w.shape[0], KW = w.shape[1], Co = w.shape[3];
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          kernels::conv2d_backward_input(gy.data.data(), w.data.data(), N, H,
                                         W, Ci, KH, KW, Co, n.i0,
                                         gx.data.data());
        }
        if (want(1)) {
          Tensor gw = Tensor::zeros(w.shape);
          kernels::conv2d_backward_weights(x.data.data(), gy.data.data(), N,
                                           H, W, Ci, KH, KW, Co, n.i0,
                                           gw.data.data());
          Tensor& acc = touch(n.in[1]);
          for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += gw[i];
        }
        if (want(2)) {
          Tensor gb = Tensor::zeros({Co});
          kernels::conv2d_backward_bias(gy.data.data(), N * H * W, Co,
                                        gb.data.data());
          Tensor& acc = touch(n.in[2]);
          for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += gb[i];
        }
        break;
      }
      case Op::ChannelMean: {
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          const auto rows = rows_of(gx.shape);
          const auto C = channels_of(gx.shape);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < C; ++c)
              gx[r * C + c] += gy[c] / static_cast<double>(rows);
        }
        break;
      }
      case Op::ChannelVar: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& mu = fwd.at(n.in[1]);
        const auto rows = rows_of(x.shape);
        const auto C = channels_of(x.shape);
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < C; ++c)
              gx[r * C + c] += gy[c] * 2.0 * (x[r * C + c] - mu[c]) /
                               static_cast<double>(rows);
        }
        if (want(1)) {
          Tensor& gm = touch(n.in[1]);
          for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::int64_t r = 0; r < rows; ++r)
              s += x[r * C + c] - mu[c];
            gm[c] += gy[c] * (-2.0) * s / static_cast<double>(rows);
          }
        }
        break;
      }
      case Op::BnApply: {
        const Tensor& x = fwd.at(n.in[0]);
        const Tensor& mu = fwd.at(n.in[1]);
        const Tensor& var = fwd.at(n.in[2]);
        const Tensor& gamma = fwd.at(n.in[3]);
        const auto rows = rows_of(x.shape);
        const auto C = channels_of(x.shape);
        std::vector<double> inv(static_cast<size_t>(C));
        for (std::int64_t c = 0; c < C; ++c)
          inv[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[c] + n.a0);
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < C; ++c)
              gx[r * C + c] +=
                  gy[r * C + c] * gamma[c] * inv[static_cast<size_t>(c)];
        }
        if (want(1) || want(2) || want(3) || want(4)) {
          std::vector<double> sum_g(static_cast<size_t>(C), 0.0);
          std::vector<double> sum_gx(static_cast<size_t>(C), 0.0);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < C; ++c) {
              const double gv = gy[r * C + c];
              sum_g[static_cast<size_t>(c)] += gv;
              sum_gx[static_cast<size_t>(c)] += gv * (x[r * C + c] - mu[c]);
            }
          if (want(1)) {
            Tensor& gm = touch(n.in[1]);
            for (std::int64_t c = 0; c < C; ++c)
              gm[c] -= gamma[c] * inv[static_cast<size_t>(c)] *
                       sum_g[static_cast<size_t>(c)];
          }
          if (want(2)) {
            Tensor& gv = touch(n.in[2]);
            for (std::int64_t c = 0; c < C; ++c) {
              const double iv = inv[static_cast<size_t>(c)];
              gv[c] += gamma[c] * sum_gx[static_cast<size_t>(c)] * (-0.5) *
                       iv * iv * iv;
            }
          }
          if (want(3)) {
            Tensor& gg = touch(n.in[3]);
            for (std::int64_t c = 0; c < C; ++c)
              gg[c] += sum_gx[static_cast<size_t>(c)] *
                       inv[static_cast<size_t>(c)];
          }
          if (want(4)) {
            Tensor& gb = touch(n.in[4]);
            for (std::int64_t c = 0; c < C; ++c)
              gb[c] += sum_g[static_cast<size_t>(c)];
          }
        }
        break;
      }
      case Op::LsePool: {
        if (want(1))
          fail(id, n.op, "gradient w.r.t. r is not supported");
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          const Tensor& r = fwd.at(n.in[1]);
          const auto d = dims4(x.shape);
          std::vector<double> rv;
          spread_r(r, d.C, rv);
          Tensor& gx = touch(n.in[0]);
          for (std::int64_t b = 0; b < d.N; ++b)
            kernels::lse_pool_backward(
                x.data.data() + b * d.H * d.W * d.C, d.H * d.W, d.C,
                rv.data(), gy.data.data() + b * d.C,
                gx.data.data() + b * d.H * d.W * d.C);
        }
        break;
      }
      case Op::AvgPool: {
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          const auto d = dims4(gx.shape);
          const double invn = 1.0 / static_cast<double>(d.H * d.W);
          for (std::int64_t b = 0; b < d.N; ++b)
            for (std::int64_t rc = 0; rc < d.H * d.W; ++rc)
              for (std::int64_t c = 0; c < d.C; ++c)
                gx[(b * d.H * d.W + rc) * d.C + c] += gy[b * d.C + c] * invn;
        }
        break;
      }
      case Op::MaxPool: {
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          const auto d = dims4(x.shape);
          Tensor& gx = touch(n.in[0]);
          std::vector<double> ymax(static_cast<size_t>(d.C));
          std::vector<std::int64_t> arg(static_cast<size_t>(d.C));
          for (std::int64_t b = 0; b < d.N; ++b) {
            kernels::max_pool(x.data.data() + b * d.H * d.W * d.C, d.H * d.W,
                              d.C, ymax.data(), arg.data());
            for (std::int64_t c = 0; c < d.C; ++c)
              gx[(b * d.H * d.W + arg[static_cast<size_t>(c)]) * d.C + c] +=
                  gy[b * d.C + c];
          }
        }
        break;
      }
      case Op::Rearrange: {
        if (want(0)) {
          Tensor& gx = touch(n.in[0]);
          const auto C = channels_of(gx.shape);
          const auto old = n.i0;
          const auto rows = rows_of(gx.shape);
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* gr = gy.data.data() + r * old;
            double* gxr = gx.data.data() + r * C;
            gxr[0] += gr[0];
            for (std::int64_t c = 1; c < old; ++c) gxr[c] += gr[c];
            for (std::int64_t c = old; c < C; ++c) gxr[c] += gr[0];
          }
        }
        break;
      }
      case Op::TvLoss: {
        if (want(0)) {
          const Tensor& x = fwd.at(n.in[0]);
          const auto d = dims4(x.shape);
          Tensor& gx = touch(n.in[0]);
          kernels::tv_backward(x.data.data(), d.N, d.H, d.W, d.C, gy[0],
                               gx.data.data());
        }
        break;
      }
    }
  }
  return bk;
}

std::map<int, Tensor> gradients(const Graph& g, const Bindings& inputs,
                                int seed_output) {
  if (seed_output < 0 || seed_output >= g.size())
    throw Error("gradients: bad seed node id");
  if (shape_numel(g.node(seed_output).shape) != 1)
    throw Error("gradients: seed output must be scalar, got shape " +
                shape_str(g.node(seed_output).shape));
  Forward fwd = run_forward(g, inputs);
  Tensor seed = Tensor::full(g.node(seed_output).shape, 1.0);
  BackwardResult bk = run_backward(g, fwd, seed_output, seed);
  std::map<int, Tensor> out;
  for (int id : g.trainable_inputs()) {
    if (bk.has[static_cast<size_t>(id)])
      out.emplace(id, std::move(bk.grads[static_cast<size_t>(id)]));
    else
      out.emplace(id, Tensor::zeros(g.node(id).shape));
  }
  return out;
}

double grad_check(const Graph& g, const Bindings& inputs, int seed_output,
                  double eps) {
  if (eps <= 0.0) throw Error("grad_check: eps must be positive");
  const auto analytic = gradients(g, inputs, seed_output);

  auto scalar_at = [&](const Forward& f) { return f.at(seed_output)[0]; };

  // nodes whose local nondifferentiability can cross under a probe
  std::vector<int> kinked;
  for (int id = 0; id < g.size(); ++id) {
    const Op op = g.node(id).op;
    if (op == Op::Relu || op == Op::MaxPool || op == Op::LogFloor)
      kinked.push_back(id);
  }

  auto crosses_kink = [&](const Forward& fp, const Forward& fm) {
    for (int id : kinked) {
      const Node& n = g.node(id);
      const Tensor& xp = fp.at(n.in[0]);
      const Tensor& xm = fm.at(n.in[0]);
      if (n.op == Op::Relu) {
        for (std::int64_t i = 0; i < xp.numel(); ++i)
          if ((xp[i] > 0.0) != (xm[i] > 0.0)) return true;
      } else if (n.op == Op::LogFloor) {
        for (std::int64_t i = 0; i < xp.numel(); ++i)
          if ((xp[i] > n.a0) != (xm[i] > n.a0)) return true;
      } else {
        const auto d = dims4(xp.shape);
        std::vector<double> y(static_cast<size_t>(d.C));
        std::vector<std::int64_t> ap(static_cast<size_t>(d.C)),
            am(static_cast<size_t>(d.C));
        for (std::int64_t b = 0; b < d.N; ++b) {
          kernels::max_pool(xp.data.data() + b * d.H * d.W * d.C, d.H * d.W,
                            d.C, y.data(), ap.data());
          kernels::max_pool(xm.data.data() + b * d.H * d.W * d.C, d.H * d.W,
                            d.C, y.data(), am.data());
          if (ap != am) return true;
        }
      }
    }
    return false;
  };

  double worst = 0.0;
  for (int leaf : g.trainable_inputs()) {
    Bindings probe = inputs;
    Tensor& t = probe[leaf];
    const Tensor& ga = analytic.at(leaf);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      Forward fp = run_forward(g, probe);
      t[i] = saved - eps;
      Forward fm = run_forward(g, probe);
      t[i] = saved;
      if (crosses_kink(fp, fm)) continue;
      const double numeric = (scalar_at(fp) - scalar_at(fm)) / (2.0 * eps);
      const double a = ga[i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace hrhf
