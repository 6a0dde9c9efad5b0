#pragma once

#include <cstdint>
#include <vector>

#include "evstereo/detector.hpp"
#include "evstereo/evaluation.hpp"
#include "evstereo/tape.hpp"
#include "evstereo/tensor.hpp"

namespace evstereo {

/// Mean over all elements of the Huber form: for x = pred - target,
/// 0.5 x^2 / beta when |x| < beta, else |x| - 0.5 beta. beta must be
/// positive. Built from relu compositions, so it stays differentiable on
/// the tape (the kink at |x| = beta is C1).
Val smooth_l1(Tape& t, Val pred, Val target, double beta);

/// Smooth L1 averaged over the entries where mask is nonzero; exact zero
/// when the mask is empty. target and mask are constants of pred's shape.
Val masked_smooth_l1(Tape& t, Val pred, const Tensor& target, const Tensor& mask,
                     double beta);

/// The two depth supervision terms: initial and refined expectation maps
/// against the same masked ground truth, beta = 1.
struct DepthLosses {
  Val init;
  Val refine;
};
DepthLosses depth_losses(Tape& t, Val depth_init, Val depth_refined, const Tensor& depth_gt,
                         const Tensor& mask);

/// Sigmoid focal loss, mean over non-ignored entries. labels holds +1
/// (positive), 0 (negative) or -1 (ignored) per logit entry. gamma must be
/// a small positive integer (built by repeated multiplication, which keeps
/// saturated logits stable).
Val focal_cls_loss(Tape& t, Val logits, const Tensor& labels, double alpha_f, double gamma);

/// One object splatted on the center heatmap, in feature-map pixels.
struct HeatmapObject {
  double u = 0.0;
  double v = 0.0;
  double sigma = 1.0;
};

/// Center-heatmap target: per pixel the max over objects of a Gaussian
/// around the object center, with the peak snapped onto the nearest cell so
/// each object has an exact-1 positive. sigma is floored at one pixel.
Tensor center_heatmap_target(int64_t h, int64_t w, const std::vector<HeatmapObject>& objects);

/// Penalty-reduced focal loss on the center heatmap: positives are the
/// exact-1 cells, negatives are weighted by (1 - Y)^4, normalized by the
/// positive count (at least 1). logits (1, h, w), target from
/// center_heatmap_target.
Val aux_2d_loss(Tape& t, Val heat_logits, const Tensor& target);

/// Smooth L1 between the dense regression map and encoded anchor-to-target
/// offsets, averaged over the 7 * positives supervised entries; zero with
/// no positives. Positives whose yaw gap to the anchor is outside the
/// decodable quarter turn are skipped. offsets (A*7, X, Z) as produced by
/// dense_head.
Val global_regression_loss(Tape& t, Val offsets, const AnchorSet& anchors,
                           const DetectionGrid& grid, const std::vector<GtBox>& gt,
                           const AnchorAssignment& assignment);

/// Smooth L1 between each predicted local offset (7) and the target that
/// encodes its ground truth against the global box. Pairs whose yaw
/// difference is outside the decodable quarter turn are skipped; zero when
/// nothing remains.
Val local_regression_loss(Tape& t, const std::vector<Val>& local_offsets,
                          const std::vector<Box7>& global_boxes,
                          const std::vector<Box7>& gt_boxes);

struct LossTerms {
  Val depth_init;
  Val depth_refine;
  Val aux_2d;
  Val cls;
  Val reg_global;
  Val reg_local;
};

/// Unweighted sum of the six terms, accumulated left to right.
Val total_loss(Tape& t, const LossTerms& terms);

struct LossBreakdown {
  double depth_init = 0.0;
  double depth_refine = 0.0;
  double aux_2d = 0.0;
  double cls = 0.0;
  double reg_global = 0.0;
  double reg_local = 0.0;
  double total = 0.0;
};

/// Reads the scalar values; summing them in the same left-to-right order
/// reproduces total bit for bit.
LossBreakdown read_losses(const Tape& t, const LossTerms& terms, Val total);

}  // namespace evstereo
