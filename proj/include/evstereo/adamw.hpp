#pragma once
#include <map>
#include <string>

#include "evstereo/tensor.hpp"

namespace evstereo {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  int64_t step = 0;
  std::map<std::string, Tensor> m, v;
};

// One decoupled-weight-decay Adam step over named parameters. A parameter with
// no entry in grads gets a zero gradient (decay still applies). Decay is
// applied as w *= (1 - lr*wd), so a pure-decay step shrinks weights by exactly
// that factor.
void adamw_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                AdamWState& state, const AdamWConfig& cfg);

}  // namespace evstereo
