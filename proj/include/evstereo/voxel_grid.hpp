#pragma once

#include <cstdint>

#include "evstereo/events.hpp"
#include "evstereo/tensor.hpp"

namespace evstereo {

// Lookback window for one query instant.
struct BlindWindow {
  int64_t tau_us = 0;
  int64_t dtau_us = 10000;
  int motion_scale = 1;
  int time_slice = 10;
};

// Signed-polarity voxel grid of shape (B, H, W). Each event splats
// max(0, 1-|a|) weights onto the two nearest temporal bins; the bin coordinate
// is (B-1) * (t - t_first) / (t_last - t_first). A stream with one event or a
// zero time span puts all temporal mass at bin 0. The temporal normalization
// is computed from integer microsecond differences, so any positive affine
// remap of timestamps yields a bit-identical grid.
Tensor build_voxel_grid(const EventStream& s, int bins);

// Slices [tau - motion_scale * dtau, tau) and encodes it. The bin
// normalization above stretches the longer support back over the same B bins.
Tensor accumulate_motion_scaled(const EventStream& s, const BlindWindow& w, int bins);

}  // namespace evstereo
