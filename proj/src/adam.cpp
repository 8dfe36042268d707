#include "hrhf/adam.hpp"

#include <cmath>

namespace hrhf {

AdamState AdamState::init(std::span<const Tensor* const> params,
                          AdamConfig cfg) {
  AdamState st;
  st.cfg = cfg;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.emplace_back(p->data.size(), 0.0);
    st.v.emplace_back(p->data.size(), 0.0);
  }
  return st;
}

void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw Error("adam_step: parameter/gradient/state count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i]->data.size() != grads[i]->data.size() ||
        params[i]->data.size() != state.m[i].size())
      throw Error("adam_step: length mismatch at parameter " +
                  std::to_string(i));
    grads[i]->require_finite("adam_step gradient " + std::to_string(i));
  }

  state.step += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = grads[i]->data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

}  // namespace hrhf
