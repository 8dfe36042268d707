#include "hrhf/segnet.hpp"

#include <cmath>

namespace hrhf {

LabelMap LabelMap::filled(std::int64_t h, std::int64_t w, int value) {
  LabelMap m;
  m.height = h;
  m.width = w;
  m.idx.assign(static_cast<size_t>(h * w), value);
  return m;
}

Tensor LabelMap::to_onehot(int class_count) const {
  Tensor t = Tensor::zeros({height, width, class_count});
  for (std::int64_t i = 0; i < pixels(); ++i) {
    if (ignored(i)) continue;
    const int c = idx[static_cast<size_t>(i)];
    if (c < 0 || c >= class_count)
      throw Error("label index " + std::to_string(c) + " out of range for " +
                  std::to_string(class_count) + " classes");
    t[i * class_count + c] = 1.0;
  }
  return t;
}

bool operator==(const LabelMap& a, const LabelMap& b) {
  return a.height == b.height && a.width == b.width && a.idx == b.idx &&
         a.ignore == b.ignore;
}

bool operator==(const ArchConfig& a, const ArchConfig& b) {
  return a.blocks == b.blocks && a.channels == b.channels &&
         a.kernel == b.kernel && a.bn_eps == b.bn_eps &&
         a.bn_momentum == b.bn_momentum &&
         a.head_init_sigma == b.head_init_sigma;
}

std::vector<Tensor*> ModelState::params() {
  std::vector<Tensor*> out;
  for (auto& blk : blocks) {
    out.push_back(&blk.w);
    out.push_back(&blk.b);
    out.push_back(&blk.gamma);
    out.push_back(&blk.beta);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Tensor*> ModelState::params() const {
  std::vector<const Tensor*> out;
  for (const auto& blk : blocks) {
    out.push_back(&blk.w);
    out.push_back(&blk.b);
    out.push_back(&blk.gamma);
    out.push_back(&blk.beta);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<std::string> ModelState::param_names() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    out.push_back(p + "w");
    out.push_back(p + "b");
    out.push_back(p + "gamma");
    out.push_back(p + "beta");
  }
  out.push_back("head.w");
  out.push_back("head.b");
  return out;
}

std::int64_t ModelState::param_count() const {
  std::int64_t n = 0;
  for (const Tensor* t : params()) n += t->numel();
  return n;
}

bool bit_equal(const ModelState& a, const ModelState& b) {
  if (!(a.arch == b.arch) || a.class_count != b.class_count ||
      a.step_index != b.step_index || a.blocks.size() != b.blocks.size())
    return false;
  for (size_t i = 0; i < a.blocks.size(); ++i) {
    if (!bit_equal(a.blocks[i].w, b.blocks[i].w)) return false;
    if (!bit_equal(a.blocks[i].b, b.blocks[i].b)) return false;
    if (!bit_equal(a.blocks[i].gamma, b.blocks[i].gamma)) return false;
    if (!bit_equal(a.blocks[i].beta, b.blocks[i].beta)) return false;
    if (!bit_equal(a.blocks[i].run_mean, b.blocks[i].run_mean)) return false;
    if (!bit_equal(a.blocks[i].run_var, b.blocks[i].run_var)) return false;
  }
  return bit_equal(a.head_w, b.head_w) && bit_equal(a.head_b, b.head_b);
}

ModelState init_model(const ArchConfig& arch, int class_count, Rng& rng) {
  if (class_count < 1) throw Error("init_model: class_count must be >= 1");
  ModelState m;
  m.arch = arch;
  m.class_count = class_count;
  const int K = arch.kernel;
  for (int i = 0; i < arch.blocks; ++i) {
    const int ci = i == 0 ? 3 : arch.channels;
    const int co = arch.channels;
    ConvBlock blk;
    blk.w = Tensor::zeros({K, K, ci, co});
    const double sigma = std::sqrt(2.0 / static_cast<double>(K * K * ci));
    for (auto& v : blk.w.data) v = rng.normal(0.0, sigma);
    blk.b = Tensor::zeros({co});
    blk.gamma = Tensor::full({co}, 1.0);
    blk.beta = Tensor::zeros({co});
    blk.run_mean = Tensor::zeros({co});
    blk.run_var = Tensor::full({co}, 1.0);
    m.blocks.push_back(std::move(blk));
  }
  m.head_w = Tensor::zeros({1, 1, arch.channels, class_count});
  const double hs = std::sqrt(2.0 / static_cast<double>(arch.channels));
  for (auto& v : m.head_w.data) v = rng.normal(0.0, hs);
  m.head_b = Tensor::zeros({class_count});
  return m;
}

ModelState head_expand(const ModelState& teacher, int added_classes,
                       Rng& rng) {
  if (added_classes < 0) throw Error("head_expand: negative class count");
  ModelState m = teacher;
  if (added_classes == 0) return m;
  const int old_c = teacher.class_count;
  const int new_c = old_c + added_classes;
  const int ch = teacher.arch.channels;
  m.class_count = new_c;
  m.head_w = Tensor::zeros({1, 1, ch, new_c});
  m.head_b = Tensor::zeros({new_c});
  for (int i = 0; i < ch; ++i)
    for (int c = 0; c < old_c; ++c)
      m.head_w[i * new_c + c] = teacher.head_w[i * old_c + c];
  for (int c = 0; c < old_c; ++c) m.head_b[c] = teacher.head_b[c];
  for (int i = 0; i < ch; ++i)
    for (int c = old_c; c < new_c; ++c)
      m.head_w[i * new_c + c] =
          rng.normal(0.0, teacher.arch.head_init_sigma);
  for (int c = old_c; c < new_c; ++c)
    m.head_b[c] = rng.normal(0.0, teacher.arch.head_init_sigma);
  return m;
}

ForwardGraph build_forward(const ModelState& m, std::int64_t batch,
                           std::int64_t H, std::int64_t W, BnMode mode,
                           bool params_trainable, bool image_trainable,
                           bool collect_stats) {
  ForwardGraph fg;
  Graph& g = fg.g;
  fg.image = g.input("image", {batch, H, W, 3}, image_trainable);
  int x = fg.image;
  const auto names = m.param_names();
  const auto tensors = m.params();
  std::vector<int> pid(tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i)
    pid[i] = g.input(names[i], tensors[i]->shape, params_trainable);
  fg.params = pid;

  const std::int64_t pad = (m.arch.kernel - 1) / 2;
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    const int z = g.conv2d(x, pid[4 * i + 0], pid[4 * i + 1], pad);
    int mu, var;
    if (mode == BnMode::Train) {
      mu = g.channel_mean(z);
      var = g.channel_var(z, mu);
      fg.stat_mean.push_back(mu);
      fg.stat_var.push_back(var);
    } else {
      mu = g.constant(m.blocks[i].run_mean, names[4 * i + 2] + ".run_mean");
      var = g.constant(m.blocks[i].run_var, names[4 * i + 2] + ".run_var");
      if (collect_stats) {
        const int bm = g.channel_mean(z);
        fg.stat_mean.push_back(bm);
        fg.stat_var.push_back(g.channel_var(z, bm));
      }
    }
    const int bn =
        g.bn_apply(z, mu, var, pid[4 * i + 2], pid[4 * i + 3], m.arch.bn_eps);
    x = g.relu(bn);
  }
  const size_t hp = m.blocks.size() * 4;
  fg.logits = g.conv2d(x, pid[hp], pid[hp + 1], 0);
  fg.scores = g.softmax_last(fg.logits);
  return fg;
}

void bind_params(const ModelState& m, const ForwardGraph& fg, Bindings& b) {
  const auto tensors = m.params();
  for (size_t i = 0; i < tensors.size(); ++i)
    b[fg.params[i]] = *tensors[i];
}

namespace {

Tensor as_batched(const Tensor& images) {
  if (images.rank() == 4) return images;
  if (images.rank() == 3) {
    Tensor t = images;
    t.shape = {1, images.shape[0], images.shape[1], images.shape[2]};
    return t;
  }
  throw Error("forward: image must be [H,W,3] or [N,H,W,3], got " +
              shape_str(images.shape));
}

}  // namespace

ForwardOut forward(ModelState& m, const Tensor& images, BnMode mode,
                   bool want_stats) {
  const Tensor x = as_batched(images);
  if (x.shape[3] != 3)
    throw Error("forward: expected 3 input channels, got " +
                std::to_string(x.shape[3]));
  x.require_finite("forward image");
  const bool train = mode == BnMode::Train;
  ForwardGraph fg = build_forward(m, x.shape[0], x.shape[1], x.shape[2], mode,
                                  false, false, want_stats || train);
  Bindings b;
  b[fg.image] = x;
  bind_params(m, fg, b);
  Forward fwd = run_forward(fg.g, b);
  ForwardOut out;
  out.scores = fwd.at(fg.scores);
  for (int id : fg.stat_mean) out.batch_mean.push_back(fwd.at(id));
  for (int id : fg.stat_var) out.batch_var.push_back(fwd.at(id));
  if (train) commit_running_stats(m, out.batch_mean, out.batch_var);
  return out;
}

ForwardOut forward_eval(const ModelState& m, const Tensor& images,
                        bool want_stats) {
  // BnMode::Eval never mutates the model; cast confined here
  return forward(const_cast<ModelState&>(m), images, BnMode::Eval,
                 want_stats);
}

void commit_running_stats(ModelState& m, const std::vector<Tensor>& mean,
                          const std::vector<Tensor>& var) {
  if (mean.size() != m.blocks.size() || var.size() != m.blocks.size())
    throw Error("commit_running_stats: layer count mismatch");
  const double mom = m.arch.bn_momentum;
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    auto& rm = m.blocks[i].run_mean;
    auto& rv = m.blocks[i].run_var;
    for (std::int64_t c = 0; c < rm.numel(); ++c) {
      rm[c] = (1.0 - mom) * rm[c] + mom * mean[i][c];
      rv[c] = (1.0 - mom) * rv[c] + mom * var[i][c];
    }
  }
}

LabelMap argmax_map(const Tensor& scores) {
  Shape s = scores.shape;
  if (s.size() == 4) {
    if (s[0] != 1) throw Error("argmax_map: batch must be 1");
    s = {s[1], s[2], s[3]};
  }
  if (s.size() != 3) throw Error("argmax_map: expected [H,W,C]");
  const auto H = s[0], W = s[1], C = s[2];
  LabelMap lm = LabelMap::filled(H, W, 0);
  for (std::int64_t i = 0; i < H * W; ++i) {
    const double* row = scores.data.data() + i * C;
    int best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    lm.idx[static_cast<size_t>(i)] = best;
  }
  return lm;
}

LabelMap predict(const ModelState& m, const Tensor& image) {
  return argmax_map(forward_eval(m, image).scores);
}

}  // namespace hrhf
