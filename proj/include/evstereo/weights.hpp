#pragma once
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "evstereo/tensor.hpp"

namespace evstereo {

// On-disk weight container: a directory holding manifest.json (per-tensor
// shape, dtype "f64" and byte offset, plus an embedded architecture config)
// and weights.bin (raw little-endian f64, concatenated in manifest offset
// order, which is sorted-name order).
struct WeightDir {
  std::map<std::string, Tensor> tensors;
  nlohmann::json config;
};

void save_weight_dir(const std::string& dir, const std::map<std::string, Tensor>& tensors,
                     const nlohmann::json& config);
WeightDir load_weight_dir(const std::string& dir);

}  // namespace evstereo
