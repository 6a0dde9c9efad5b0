#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evstereo/tape.hpp"

namespace evstereo {

// Named parameter tensors bound onto a tape for one forward pass.
struct BoundParams {
  std::map<std::string, Val> vals;

  Val at(const std::string& name) const;
  bool has(const std::string& name) const { return vals.count(name) != 0; }
};

BoundParams bind_params(Tape& t, const std::map<std::string, Tensor>& tensors, bool trainable);

// Fan-in scaled uniform initialization: bound = sqrt(6 / fan_in), giving
// variance 2 / fan_in. The RNG stream is derived from the parameter name, so
// adding or reordering parameters never shifts another tensor's values.
Tensor init_fan_in_uniform(const std::vector<int64_t>& shape, int64_t fan_in, uint64_t seed,
                           const std::string& name);

// Adds `name.w` (fan-in scaled) and `name.b` (zeros) for a conv or linear
// layer. For conv weights (out, in, k...) the fan-in is in * prod(k); for
// matmul weights (in, out) pass the explicit fan_in.
void add_conv_param(std::map<std::string, Tensor>& out, const std::string& name,
                    std::vector<int64_t> w_shape, uint64_t seed);
void add_matmul_param(std::map<std::string, Tensor>& out, const std::string& name,
                      int64_t in_dim, int64_t out_dim, uint64_t seed);

}  // namespace evstereo
