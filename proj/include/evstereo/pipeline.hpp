#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evstereo/adamw.hpp"
#include "evstereo/config.hpp"
#include "evstereo/detector.hpp"
#include "evstereo/evaluation.hpp"
#include "evstereo/events.hpp"
#include "evstereo/losses.hpp"
#include "evstereo/params.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

// Every learnable tensor of the full model (backbone, depth filter, aux 2D
// head, detector), deterministically initialized from cfg.seed.
std::map<std::string, Tensor> init_model_params(const RunConfig& cfg);

// Weight directory I/O with the architecture embedded. load_model checks
// that the stored tensors exactly match the names and shapes cfg prescribes.
void save_model(const std::string& dir, const RunConfig& cfg,
                const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> load_model(const std::string& dir, const RunConfig& cfg);

struct ForwardOut {
  Val depth_init;     // (H', W') expected depth before refinement
  Val depth_refined;  // (H', W') after neighborhood re-weighting
  Val aux_logits;     // (num_classes, H', W') center heatmap logits
  Val cls_logits;     // (A * num_classes, nx, nz)
  Val reg_offsets;    // (A * 7, nx, nz)
  Val bev;            // (channels * ny / 2, nx, nz), input to ROI pooling
};

// The full differentiable pass: voxel grids from both cameras through the
// shared backbone, plane sweep, depth filtering and refinement, semantic
// enhancement with the depth-warped right features, lifting of both feature
// families onto the detection grid, fusion, BEV collapse and the dense head.
ForwardOut run_forward(Tape& t, const BoundParams& p, const RunConfig& cfg,
                       const StereoRig& rig, const Tensor& grid_left,
                       const Tensor& grid_right);

// Per-feature-pixel depth of the nearest box surface along the pixel ray
// (slab intersection in each box's local frame). mask is 1 where a ray hits
// a box inside the depth grid's range.
struct DepthTarget {
  Tensor depth;
  Tensor mask;
};
DepthTarget ray_cast_depth(const std::vector<GtBox>& boxes, const StereoRig& rig,
                           const DepthGrid& depth, int stride, int64_t h_feat,
                           int64_t w_feat);

// Per-class center heatmaps on the feature grid; sigma grows with the
// projected footprint of each box.
Tensor aux_heatmap_target(const std::vector<GtBox>& boxes, const StereoRig& rig, int stride,
                          int64_t h_feat, int64_t w_feat, int num_classes);

// Decode + NMS + ROI alignment on a finished forward pass.
std::vector<Detection> detect(Tape& t, const BoundParams& p, const RunConfig& cfg,
                              const ForwardOut& fwd);

struct TrainSample {
  Tensor grid_left;
  Tensor grid_right;
  std::vector<GtBox> gt;
};

// One optimizer step over all parameters. Returns the loss breakdown read
// from the tape; throws ContractError naming the first non-finite component.
LossBreakdown train_step(std::map<std::string, Tensor>& params, AdamWState& opt,
                         const RunConfig& cfg, const StereoRig& rig,
                         const TrainSample& sample);

// Runs the detector at every blind-time instant of the configured protocol.
// An instant whose lookback window lies entirely outside a non-empty
// stream's recorded span is skipped and reported in skipped_instants; empty
// streams run normally on all-zero voxel grids.
std::vector<DetectionFrame> run_inference(const std::map<std::string, Tensor>& params,
                                          const RunConfig& cfg, const StereoRig& rig,
                                          const EventStream& left, const EventStream& right,
                                          std::vector<int64_t>* skipped_instants);

}  // namespace evstereo
