#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evstereo/boxes.hpp"
#include "evstereo/geometry.hpp"
#include "evstereo/params.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

/// Per-class box templates replicated at every BEV cell center with two
/// orientations. Order: vehicle 0, vehicle pi/2, pedestrian 0, pedestrian
/// pi/2. Centers come from the detection grid; y, extents and yaw from the
/// template.
struct AnchorSet {
  std::vector<Box7> templates;
  std::vector<int> template_class;

  int64_t per_cell() const { return int64_t(templates.size()); }
};

AnchorSet make_anchor_set();

/// The anchor box for template index a at BEV cell (ix, iz).
Box7 anchor_at(const AnchorSet& anchors, const DetectionGrid& grid, int64_t ix, int64_t iz,
               int64_t a);

struct DetectorConfig {
  int64_t channels = 32;   // fused volume channels
  int64_t ny = 20;         // height cells entering the collapse (even)
  int64_t head_mid = 64;   // dense-head trunk width
  int64_t align_mid = 32;  // alignment MLP hidden width
  int64_t k_roi = 3;       // ROI pooling grid
  int64_t num_classes = 2;

  // BEV channels after the height collapse: channels * ny / 2.
  int64_t bev_channels() const { return channels * (ny / 2); }
};

/// Registers det.collapse, det.trunk, det.cls, det.reg, det.align1,
/// det.align2 (each name.w + name.b). det.cls.b and both alignment layers
/// start at zero; det.reg starts at zero so initial boxes sit on the anchors.
void add_detector_params(std::map<std::string, Tensor>& out, const DetectorConfig& cfg,
                         uint64_t seed);

/// Strided conv along the height axis (kernel 2, stride 2) followed by a
/// flatten of the remaining height cells into channels.
/// volume (C, Y, X, Z) -> (C * Y/2, X, Z).
Val bev_collapse(Tape& t, const BoundParams& p, const DetectorConfig& cfg, Val volume);

struct DenseHeadOut {
  Val logits;   // (A * num_classes, X, Z)
  Val offsets;  // (A * 7, X, Z)
};

/// Shared 3x3 trunk then 1x1 classification and regression heads. Channel
/// index a * num_classes + k holds the logit of class k at anchor a; channel
/// a * 7 + j holds offset component j of anchor a.
DenseHeadOut dense_head(Tape& t, const BoundParams& p, const DetectorConfig& cfg, Val bev);

/// One positive anchor with the ground-truth box it regresses to.
struct PositiveMatch {
  int64_t ix = 0;
  int64_t iz = 0;
  int64_t a = 0;
  int gt_index = 0;
};

struct AnchorAssignment {
  // (A * num_classes, X, Z): +1 positive, 0 negative, -1 ignored.
  Tensor cls_labels;
  std::vector<PositiveMatch> positives;
};

struct GtBox;  // evaluation.hpp

/// Matches anchors to ground truth by BEV IoU against boxes of the anchor's
/// template class. Positive at IoU >= 0.6 (vehicle) / 0.5 (pedestrian),
/// ignored from 0.45 / 0.35 up to the positive bar, negative below. Every
/// ground-truth box left unmatched is force-matched to its highest-IoU
/// non-positive anchor (ties by ix, iz, a ascending) when any overlap
/// exists. Positives are listed in scan order, force-matches appended in
/// ground-truth order.
AnchorAssignment assign_anchors(const AnchorSet& anchors, const DetectionGrid& grid,
                                const DetectorConfig& cfg, const std::vector<GtBox>& gt);

double sigmoid_scalar(double logit);

/// One candidate per (cell, anchor, class) whose sigmoid score reaches
/// score_threshold, with the box decoded from that cell's anchor.
/// logits (A * num_classes, X, Z), offsets (A * 7, X, Z).
std::vector<Detection> decode_detections(const Tensor& logits, const Tensor& offsets,
                                         const AnchorSet& anchors, const DetectionGrid& grid,
                                         const DetectorConfig& cfg, double score_threshold);

/// Greedy suppression: scan by descending score (ties by x then z
/// ascending); keep a detection unless a kept detection of the same class
/// overlaps it with rotated BEV IoU above iou_threshold. Detections below
/// score_threshold are dropped first; at most max_out boxes are kept.
std::vector<Detection> nms_bev(std::vector<Detection> detections, double iou_threshold,
                               double score_threshold, int64_t max_out);

/// Splits the box footprint into k x k equal rotated sub-cells and
/// max-pools the BEV cells whose centers fall inside each one. Sub-cells
/// covering no cell center give zeros. bev (C', X, Z) -> (k*k, C').
Val roi_bev_pool(Tape& t, Val bev, const DetectionGrid& grid, const Box7& box, int64_t k);

/// Two-layer MLP on the flattened pooled features predicting a local
/// refinement offset, applied to the global box through the same decode as
/// the dense head. Zero alignment weights return the box unchanged.
Val local_align_offset(Tape& t, const BoundParams& p, Val pooled);
Box7 local_align(Tape& t, const BoundParams& p, Val pooled, const Box7& global_box);

}  // namespace evstereo
