#include "evstereo/losses.hpp"

#include <cmath>

#include "evstereo/errors.hpp"

namespace evstereo {

namespace {

Tensor full_like(const Tensor& ref, double v) {
  Tensor t(ref.shape());
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = v;
  return t;
}

Val abs_of(Tape& t, Val x) { return t.add(t.relu(x), t.relu(t.scalar_mul(x, -1.0))); }

// Elementwise Huber: (a^2 - r^2) / (2 beta) with a = |x|, r = relu(a - beta)
// equals 0.5 a^2 / beta on the quadratic branch and a - 0.5 beta beyond it.
Val smooth_l1_elem(Tape& t, Val diff, double beta) {
  Val a = abs_of(t, diff);
  Val r = t.relu(t.add(a, t.constant(full_like(t.value(a), -beta))));
  Val quad = t.sub(t.mul(a, a), t.mul(r, r));
  return t.scalar_mul(quad, 0.5 / beta);
}

// Stable log(1 + exp(-|x|)), shared half of both softplus directions.
Val softplus_tail(Tape& t, Val x) {
  Val absx = abs_of(t, x);
  Val e = t.exp(t.scalar_mul(absx, -1.0));
  return t.log(t.add(e, t.constant(full_like(t.value(e), 1.0))));
}

Val int_pow(Tape& t, Val x, int64_t n) {
  Val acc = x;
  for (int64_t i = 1; i < n; ++i) acc = t.mul(acc, x);
  return acc;
}

}  // namespace

Val smooth_l1(Tape& t, Val pred, Val target, double beta) {
  contract(beta > 0.0, "smooth_l1: beta must be positive");
  const Tensor& pv = t.value(pred);
  contract(pv.same_shape(t.value(target)), "smooth_l1: shapes must match");
  Val elem = smooth_l1_elem(t, t.sub(pred, target), beta);
  return t.scalar_mul(t.sum_all(elem), 1.0 / double(pv.numel()));
}

Val masked_smooth_l1(Tape& t, Val pred, const Tensor& target, const Tensor& mask,
                     double beta) {
  contract(beta > 0.0, "masked_smooth_l1: beta must be positive");
  const Tensor& pv = t.value(pred);
  contract(pv.same_shape(target) && pv.same_shape(mask),
           "masked_smooth_l1: shapes must match");
  double count = 0.0;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    contract(mask[i] == 0.0 || mask[i] == 1.0, "masked_smooth_l1: mask must be 0/1");
    count += mask[i];
  }
  if (count == 0.0) return t.constant(Tensor::zeros({}));
  Val elem = smooth_l1_elem(t, t.sub(pred, t.constant(target)), beta);
  return t.scalar_mul(t.sum_all(t.mul(elem, t.constant(mask))), 1.0 / count);
}

DepthLosses depth_losses(Tape& t, Val depth_init, Val depth_refined, const Tensor& depth_gt,
                         const Tensor& mask) {
  DepthLosses out;
  out.init = masked_smooth_l1(t, depth_init, depth_gt, mask, 1.0);
  out.refine = masked_smooth_l1(t, depth_refined, depth_gt, mask, 1.0);
  return out;
}

Val focal_cls_loss(Tape& t, Val logits, const Tensor& labels, double alpha_f, double gamma) {
  const Tensor& lv = t.value(logits);
  contract(lv.same_shape(labels), "focal_cls_loss: labels must match logits");
  contract(alpha_f > 0.0 && alpha_f < 1.0, "focal_cls_loss: alpha_f must be in (0, 1)");
  int64_t g = int64_t(gamma);
  contract(double(g) == gamma && g >= 1 && g <= 8,
           "focal_cls_loss: gamma must be a small positive integer");

  Tensor pos_w(labels.shape());
  Tensor neg_w(labels.shape());
  double count = 0.0;
  for (int64_t i = 0; i < labels.numel(); ++i) {
    double l = labels[i];
    contract(l == 1.0 || l == 0.0 || l == -1.0, "focal_cls_loss: labels must be +1/0/-1");
    if (l == 1.0) {
      pos_w[i] = alpha_f;
      count += 1.0;
    } else if (l == 0.0) {
      neg_w[i] = 1.0 - alpha_f;
      count += 1.0;
    }
  }
  if (count == 0.0) return t.constant(Tensor::zeros({}));

  Val p = t.sigmoid(logits);
  Val q = t.sigmoid(t.scalar_mul(logits, -1.0));
  Val tail = softplus_tail(t, logits);
  Val sp_pos = t.add(t.relu(logits), tail);                      // -log(1 - p)
  Val sp_neg = t.add(t.relu(t.scalar_mul(logits, -1.0)), tail);  // -log(p)
  Val pos_term = t.mul(t.constant(pos_w), t.mul(int_pow(t, q, g), sp_neg));
  Val neg_term = t.mul(t.constant(neg_w), t.mul(int_pow(t, p, g), sp_pos));
  return t.scalar_mul(t.sum_all(t.add(pos_term, neg_term)), 1.0 / count);
}

Tensor center_heatmap_target(int64_t h, int64_t w, const std::vector<HeatmapObject>& objects) {
  contract(h >= 1 && w >= 1, "center_heatmap_target: empty map");
  Tensor y({1, h, w});
  for (const auto& obj : objects) {
    contract(std::isfinite(obj.u) && std::isfinite(obj.v),
             "center_heatmap_target: center must be finite");
    double sigma = std::max(1.0, obj.sigma);
    double cu = std::min(double(w - 1), std::max(0.0, std::round(obj.u)));
    double cv = std::min(double(h - 1), std::max(0.0, std::round(obj.v)));
    for (int64_t r = 0; r < h; ++r) {
      for (int64_t c = 0; c < w; ++c) {
        double du = double(c) - cu;
        double dv = double(r) - cv;
        double g = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
        double& cell = y[r * w + c];
        cell = std::max(cell, g);
      }
    }
  }
  return y;
}

Val aux_2d_loss(Tape& t, Val heat_logits, const Tensor& target) {
  const Tensor& lv = t.value(heat_logits);
  contract(lv.same_shape(target), "aux_2d_loss: target must match logits");
  Tensor pos_mask(target.shape());
  Tensor neg_w(target.shape());
  double n_pos = 0.0;
  for (int64_t i = 0; i < target.numel(); ++i) {
    double y = target[i];
    contract(y >= 0.0 && y <= 1.0, "aux_2d_loss: target must be in [0, 1]");
    if (y == 1.0) {
      pos_mask[i] = 1.0;
      n_pos += 1.0;
    } else {
      double d = 1.0 - y;
      neg_w[i] = d * d * d * d;
    }
  }
  Val p = t.sigmoid(heat_logits);
  Val q = t.sigmoid(t.scalar_mul(heat_logits, -1.0));
  Val tail = softplus_tail(t, heat_logits);
  Val sp_pos = t.add(t.relu(heat_logits), tail);
  Val sp_neg = t.add(t.relu(t.scalar_mul(heat_logits, -1.0)), tail);
  Val pos_term = t.mul(t.constant(pos_mask), t.mul(t.mul(q, q), sp_neg));
  Val neg_term = t.mul(t.constant(neg_w), t.mul(t.mul(p, p), sp_pos));
  double norm = n_pos > 0.0 ? n_pos : 1.0;
  return t.scalar_mul(t.sum_all(t.add(pos_term, neg_term)), 1.0 / norm);
}

Val global_regression_loss(Tape& t, Val offsets, const AnchorSet& anchors,
                           const DetectionGrid& grid, const std::vector<GtBox>& gt,
                           const AnchorAssignment& assignment) {
  const Tensor& ov = t.value(offsets);
  int64_t nx = grid.nx();
  int64_t nz = grid.nz();
  contract(ov.dim() == 3 && ov.size(0) == anchors.per_cell() * 7 && ov.size(1) == nx &&
               ov.size(2) == nz,
           "global_regression_loss: offsets must be (a*7, x, z) on the grid");
  if (assignment.positives.empty()) return t.constant(Tensor::zeros({}));

  Tensor target(ov.shape());
  Tensor mask(ov.shape());
  for (const auto& p : assignment.positives) {
    contract(p.gt_index >= 0 && size_t(p.gt_index) < gt.size(),
             "global_regression_loss: positive points past the ground truth");
    Box7 anchor = anchor_at(anchors, grid, p.ix, p.iz, p.a);
    const Box7& truth = gt[size_t(p.gt_index)].box;
    // A near-square box can positively match the perpendicular anchor, whose
    // yaw gap falls outside the decodable quarter turn. Such positives still
    // train classification but are left out of regression.
    if (std::fabs(wrap_angle(truth.yaw - anchor.yaw)) >= 0.5 * M_PI) continue;
    BoxOffset enc = encode_box(anchor, truth);
    for (int64_t j = 0; j < 7; ++j) {
      int64_t at = ((p.a * 7 + j) * nx + p.ix) * nz + p.iz;
      target[at] = enc[size_t(j)];
      mask[at] = 1.0;
    }
  }
  return masked_smooth_l1(t, offsets, target, mask, 1.0);
}

Val local_regression_loss(Tape& t, const std::vector<Val>& local_offsets,
                          const std::vector<Box7>& global_boxes,
                          const std::vector<Box7>& gt_boxes) {
  contract(local_offsets.size() == global_boxes.size() &&
               local_offsets.size() == gt_boxes.size(),
           "local_regression_loss: lists must align");
  std::vector<Val> rows;
  std::vector<BoxOffset> targets;
  for (size_t i = 0; i < local_offsets.size(); ++i) {
    double dyaw = wrap_angle(gt_boxes[i].yaw - global_boxes[i].yaw);
    if (std::fabs(dyaw) >= 0.5 * M_PI) continue;  // outside the decodable range
    const Tensor& ov = t.value(local_offsets[i]);
    contract(ov.dim() == 1 && ov.size(0) == 7, "local_regression_loss: offsets must be (7)");
    rows.push_back(t.reshape(local_offsets[i], {1, 7}));
    targets.push_back(encode_box(global_boxes[i], gt_boxes[i]));
  }
  if (rows.empty()) return t.constant(Tensor::zeros({}));
  Val pred = rows.size() == 1 ? rows[0] : t.concat(rows, 0);
  Tensor target({int64_t(rows.size()), 7});
  for (size_t i = 0; i < targets.size(); ++i)
    for (int64_t j = 0; j < 7; ++j) target[int64_t(i) * 7 + j] = targets[i][size_t(j)];
  return smooth_l1(t, pred, t.constant(target), 1.0);
}

Val total_loss(Tape& t, const LossTerms& terms) {
  Val acc = t.add(terms.depth_init, terms.depth_refine);
  acc = t.add(acc, terms.aux_2d);
  acc = t.add(acc, terms.cls);
  acc = t.add(acc, terms.reg_global);
  acc = t.add(acc, terms.reg_local);
  return acc;
}

LossBreakdown read_losses(const Tape& t, const LossTerms& terms, Val total) {
  auto scalar = [&](Val v) {
    const Tensor& tv = t.value(v);
    contract(tv.numel() == 1, "read_losses: loss terms must be scalars");
    return tv[0];
  };
  LossBreakdown b;
  b.depth_init = scalar(terms.depth_init);
  b.depth_refine = scalar(terms.depth_refine);
  b.aux_2d = scalar(terms.aux_2d);
  b.cls = scalar(terms.cls);
  b.reg_global = scalar(terms.reg_global);
  b.reg_local = scalar(terms.reg_local);
  b.total = scalar(total);
  return b;
}

}  // namespace evstereo
