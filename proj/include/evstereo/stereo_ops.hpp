#pragma once

#include "evstereo/geometry.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

// Geometry-driven sampling of feature maps. All functions build coordinate
// tensors from plain camera math and push only the feature sampling through
// the tape, so gradients flow into features and never into geometry.

// Fractional feature-map column of the right-camera correspondence for every
// (depth level, feature pixel): u_feat - disparity(d(w)) / stride.
// Shape (2, levels, h_feat, w_feat); row 0 is u, row 1 is v.
Tensor right_sweep_coords(const StereoRig& rig, const DepthGrid& depth, int stride,
                          int64_t h_feat, int64_t w_feat);

// Left features stacked with disparity-shifted right features per depth level:
// output (2C, D, H', W') where the first C channels repeat f_left over depth
// and the last C channels sample f_right at the sweep coordinates (bilinear,
// zero outside).
Val build_plane_sweep_volume(Tape& t, Val f_left, Val f_right, const StereoRig& rig,
                             const DepthGrid& depth, int stride);

// Projection coordinates of every detection-grid voxel center into
// (u_feat, v_feat, depth index). Shape (3, ny, nx, nz).
Tensor lift_coords(const DetectionGrid& det, const StereoRig& rig, const DepthGrid& depth,
                   int stride);

// Samples a (C, D, H', W') volume at the voxel projections: output
// (C, ny, nx, nz), zero wherever a voxel projects outside the image or the
// depth range.
Val lift_to_3d(Tape& t, Val volume, const DetectionGrid& det, const StereoRig& rig,
               const DepthGrid& depth, int stride);

// Right features pulled to the left view through a per-pixel depth map
// (h_feat, w_feat): output(c,v,u) = f_right(c, v, u - disp(depth(v,u))/stride),
// zero where the source leaves the image. Depth values must be strictly
// positive; gradients flow into both the features and the depth map.
Val warp_right_to_left(Tape& t, Val f_right, Val depth_map, const StereoRig& rig, int stride);

}  // namespace evstereo
