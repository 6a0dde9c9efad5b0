#include "evstereo/params.hpp"

#include <cmath>

#include "evstereo/errors.hpp"
#include "evstereo/rng.hpp"

namespace evstereo {

Val BoundParams::at(const std::string& name) const {
  auto it = vals.find(name);
  contract(it != vals.end(), "unknown parameter: " + name);
  return it->second;
}

BoundParams bind_params(Tape& t, const std::map<std::string, Tensor>& tensors, bool trainable) {
  BoundParams bound;
  for (const auto& [name, tensor] : tensors) {
    Tensor copy = tensor;
    copy.requires_grad = trainable;
    bound.vals.emplace(name, t.input(copy));
  }
  return bound;
}

Tensor init_fan_in_uniform(const std::vector<int64_t>& shape, int64_t fan_in, uint64_t seed,
                           const std::string& name) {
  contract(fan_in > 0, "fan_in must be positive");
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / double(fan_in));
  DetRng rng(seed, fnv1a64(name));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

void add_conv_param(std::map<std::string, Tensor>& out, const std::string& name,
                    std::vector<int64_t> w_shape, uint64_t seed) {
  contract(w_shape.size() >= 2, "conv weight needs at least (out, in) dims");
  int64_t fan_in = 1;
  for (size_t i = 1; i < w_shape.size(); ++i) fan_in *= w_shape[i];
  const int64_t out_ch = w_shape[0];
  out[name + ".w"] = init_fan_in_uniform(w_shape, fan_in, seed, name + ".w");
  out[name + ".b"] = Tensor::zeros({out_ch});
}

void add_matmul_param(std::map<std::string, Tensor>& out, const std::string& name,
                      int64_t in_dim, int64_t out_dim, uint64_t seed) {
  out[name + ".w"] = init_fan_in_uniform({in_dim, out_dim}, in_dim, seed, name + ".w");
  out[name + ".b"] = Tensor::zeros({out_dim});
}

}  // namespace evstereo
