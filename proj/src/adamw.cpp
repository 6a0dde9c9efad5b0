#include "evstereo/adamw.hpp"

#include <cmath>

#include "evstereo/errors.hpp"

namespace evstereo {

void adamw_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                AdamWState& state, const AdamWConfig& cfg) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  double decay = 1.0 - cfg.lr * cfg.weight_decay;

  for (auto& [name, w] : params) {
    auto mi = state.m.find(name);
    if (mi == state.m.end()) {
      mi = state.m.emplace(name, Tensor::zeros(w.shape())).first;
      state.v.emplace(name, Tensor::zeros(w.shape()));
    }
    Tensor& m = mi->second;
    Tensor& v = state.v.at(name);
    contract(m.same_shape(w), "adamw: state shape mismatch for " + name);

    auto gi = grads.find(name);
    const Tensor* g = gi == grads.end() ? nullptr : &gi->second;
    if (g) contract(g->same_shape(w), "adamw: gradient shape mismatch for " + name);

    for (int64_t i = 0; i < w.numel(); ++i) {
      double gv = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gv;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gv * gv;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] = w[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace evstereo
