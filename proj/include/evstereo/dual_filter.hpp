#pragma once

#include <utility>
#include <vector>

#include "evstereo/geometry.hpp"
#include "evstereo/params.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

// Pixel offsets (du, dv) used to pool depth hypotheses from nearby pixels.
// Offsets are clamped to the image interior, so border pixels reuse their
// nearest valid neighbor and refined probabilities still sum to 1.
struct NeighborPattern {
  std::vector<std::pair<int, int>> offsets{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};

  static NeighborPattern center_only() { return NeighborPattern{{{0, 0}}}; }
  int count() const { return int(offsets.size()); }
};

struct DualFilterConfig {
  int channels = 32;  // feature channels C; the plane sweep volume carries 2C
  NeighborPattern pattern;
};

// Adds the depth-reduction stack ("filter.reduce*"), the channel attention
// block ("filter.attn.*"), and the voxel fusion conv ("filter.fuse") to `out`.
void add_dual_filter_params(std::map<std::string, Tensor>& out, const DualFilterConfig& cfg,
                            uint64_t seed);

// Gathers x (c,h,w) at pixel (u+du, v+dv), clamped to the image interior.
Val neighbor_shift(Tape& t, Val x, int du, int dv);

// Plane sweep volume (2C, D, H', W') -> per-pixel depth distribution
// (D, H', W'): two 3D convs reduce channels to one, then softmax over depth.
Val depth_probability(Tape& t, const BoundParams& p, const DualFilterConfig& cfg, Val psv);

// Expected depth under a per-pixel distribution: (D,H,W) -> (H,W).
Val expected_depth(Tape& t, Val prob, const DepthGrid& depth);

// Inner product between left features and right features sampled at the
// disparity of the neighbor's expected depth. Output (M, H', W'); entry m uses
// the depth read at offset m.
Val semantic_similarity(Tape& t, Val f_left_sem, Val f_right_sem, Val depth_init,
                        const StereoRig& rig, const NeighborPattern& pattern, int stride);

// Per-neighbor variance of the depth distribution around its expected depth:
// output (M, H', W').
Val depth_confidence(Tape& t, Val prob, Val depth_init, const DepthGrid& depth,
                     const NeighborPattern& pattern);

// Convex recombination of neighboring depth distributions with weights
// softmax_m(similarity * sigmoid(confidence)). Output has the same
// distribution invariants as the input.
Val refine_depth_probability(Tape& t, Val prob, Val similarity, Val confidence,
                             const NeighborPattern& pattern);

// Channel-token attention: queries from the left features, keys/values from
// the warped right features; both residual hops added back. With all block
// weights zero this returns exactly 2 * f_left_sem.
Val enhance_semantic(Tape& t, const BoundParams& p, const DualFilterConfig& cfg, Val f_left_sem,
                     Val f_right_warped);

// Masks the enhanced semantic features by the refined depth distribution and
// projects the masked volume onto the detection grid: output (C, ny, nx, nz).
Val semantic_3d_volume(Tape& t, Val f_sem, Val prob, const DetectionGrid& det,
                       const StereoRig& rig, const DepthGrid& depth, int stride);

// Concatenates the geometric and semantic 3D volumes and mixes them with one
// linear 3D conv: (C,ny,nx,nz) x2 -> (C,ny,nx,nz).
Val fuse_voxels(Tape& t, const BoundParams& p, Val geo_3d, Val sem_3d);

}  // namespace evstereo
