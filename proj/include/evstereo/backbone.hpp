#pragma once

#include <map>
#include <string>

#include "evstereo/params.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

// Shared-trunk extractor: three 3x3 convs with strides 2, 1, 2 (overall
// stride 4) feeding two independent two-layer heads, one for semantic and one
// for geometric features. Both cameras use the same weights.
struct BackboneConfig {
  int bins = 5;
  int mid1 = 16;
  int mid2 = 32;
  int channels = 32;  // output channels C of both heads
};

inline constexpr int kBackboneStride = 4;

// Adds all backbone parameters (prefix "backbone.") to `out`.
void add_backbone_params(std::map<std::string, Tensor>& out, const BackboneConfig& cfg,
                         uint64_t seed);

struct FeaturePair {
  Val semantic;
  Val geometric;
};

// voxel grid (B, H, W) -> two (C, H/4, W/4) feature maps. H and W must be
// divisible by 4 so the two stride-2 layers tile exactly.
FeaturePair extract_features(Tape& t, const BoundParams& p, const BackboneConfig& cfg,
                             Val voxel_grid);

}  // namespace evstereo
