#include "evstereo/detector.hpp"

#include <algorithm>
#include <cmath>

#include "evstereo/errors.hpp"
#include "evstereo/evaluation.hpp"

namespace evstereo {

AnchorSet make_anchor_set() {
  AnchorSet s;
  Box7 vehicle{0.0, 0.47, 0.0, 1.79, 1.86, 4.28, 0.0};
  Box7 pedestrian{0.0, 0.6, 0.0, 1.73, 0.6, 0.8, 0.0};
  for (const auto& [tpl, cls] : {std::pair{vehicle, 0}, std::pair{pedestrian, 1}}) {
    Box7 a = tpl;
    a.yaw = 0.0;
    s.templates.push_back(a);
    s.template_class.push_back(cls);
    a.yaw = 0.5 * M_PI;
    s.templates.push_back(a);
    s.template_class.push_back(cls);
  }
  return s;
}

Box7 anchor_at(const AnchorSet& anchors, const DetectionGrid& grid, int64_t ix, int64_t iz,
               int64_t a) {
  contract(a >= 0 && a < anchors.per_cell(), "anchor_at: template index out of range");
  contract(ix >= 0 && ix < grid.nx() && iz >= 0 && iz < grid.nz(),
           "anchor_at: cell out of range");
  Box7 out = anchors.templates[size_t(a)];
  out.x = grid.center_x(ix);
  out.z = grid.center_z(iz);
  return out;
}

void add_detector_params(std::map<std::string, Tensor>& out, const DetectorConfig& cfg,
                         uint64_t seed) {
  contract(cfg.ny >= 2 && cfg.ny % 2 == 0, "detector: ny must be even and >= 2");
  contract(cfg.channels >= 1 && cfg.head_mid >= 1 && cfg.align_mid >= 1,
           "detector: widths must be positive");
  contract(cfg.k_roi >= 1, "detector: k_roi must be >= 1");
  int64_t c = cfg.channels;
  int64_t cb = cfg.bev_channels();
  int64_t a = make_anchor_set().per_cell();
  add_conv_param(out, "det.collapse", {c, c, 2, 1, 1}, seed);
  add_conv_param(out, "det.trunk", {cfg.head_mid, cb, 3, 3}, seed);
  add_conv_param(out, "det.cls", {a * cfg.num_classes, cfg.head_mid, 1, 1}, seed);
  add_conv_param(out, "det.reg", {a * 7, cfg.head_mid, 1, 1}, seed);
  add_matmul_param(out, "det.align1", cfg.k_roi * cfg.k_roi * cb, cfg.align_mid, seed);
  add_matmul_param(out, "det.align2", cfg.align_mid, 7, seed);

  // Rare-positive classification prior: initial scores near 0.01.
  double prior = -std::log((1.0 - 0.01) / 0.01);
  Tensor& cls_b = out.at("det.cls.b");
  for (int64_t i = 0; i < cls_b.numel(); ++i) cls_b[i] = prior;
  // Boxes start on the anchors and the alignment starts as the identity.
  out.at("det.reg.w") = Tensor(out.at("det.reg.w").shape());
  out.at("det.align2.w") = Tensor(out.at("det.align2.w").shape());
}

Val bev_collapse(Tape& t, const BoundParams& p, const DetectorConfig& cfg, Val volume) {
  const Tensor& v = t.value(volume);
  contract(v.dim() == 4, "bev_collapse: volume must be (c,y,x,z)");
  contract(v.size(0) == cfg.channels && v.size(1) == cfg.ny,
           "bev_collapse: volume extents must match the config");
  Val y = t.conv3d(volume, p.at("det.collapse.w"), p.at("det.collapse.b"), {2, 1, 1},
                   {0, 0, 0});
  const Tensor& yv = t.value(y);
  return t.reshape(y, {yv.size(0) * yv.size(1), yv.size(2), yv.size(3)});
}

DenseHeadOut dense_head(Tape& t, const BoundParams& p, const DetectorConfig& cfg, Val bev) {
  const Tensor& b = t.value(bev);
  contract(b.dim() == 3 && b.size(0) == cfg.bev_channels(),
           "dense_head: bev must be (c',x,z) with c' matching the config");
  Val h = t.relu(t.conv2d(bev, p.at("det.trunk.w"), p.at("det.trunk.b"), {1, 1}, {1, 1}));
  DenseHeadOut out;
  out.logits = t.conv2d(h, p.at("det.cls.w"), p.at("det.cls.b"), {1, 1}, {0, 0});
  out.offsets = t.conv2d(h, p.at("det.reg.w"), p.at("det.reg.b"), {1, 1}, {0, 0});
  return out;
}

AnchorAssignment assign_anchors(const AnchorSet& anchors, const DetectionGrid& grid,
                                const DetectorConfig& cfg, const std::vector<GtBox>& gt) {
  const double pos_thr[2] = {0.6, 0.5};
  const double neg_thr[2] = {0.45, 0.35};
  int64_t a_count = anchors.per_cell();
  int64_t nx = grid.nx();
  int64_t nz = grid.nz();
  for (const auto& g : gt) {
    validate_box(g.box);
    contract(g.class_id == 0 || g.class_id == 1, "assign_anchors: unknown class");
  }

  AnchorAssignment out;
  out.cls_labels = Tensor({a_count * cfg.num_classes, nx, nz});
  auto label_at = [&](int64_t a, int64_t k, int64_t ix, int64_t iz) -> double& {
    return out.cls_labels[((a * cfg.num_classes + k) * nx + ix) * nz + iz];
  };

  std::vector<bool> gt_matched(gt.size(), false);
  std::vector<double> best_iou_for_gt(gt.size(), 0.0);
  struct BestAnchor {
    int64_t ix = 0, iz = 0, a = 0;
    bool taken = false;
  };
  std::vector<BestAnchor> best_anchor_for_gt(gt.size());

  for (int64_t ix = 0; ix < nx; ++ix) {
    for (int64_t iz = 0; iz < nz; ++iz) {
      for (int64_t a = 0; a < a_count; ++a) {
        int cls = anchors.template_class[size_t(a)];
        Box7 anchor = anchor_at(anchors, grid, ix, iz, a);
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gt.size(); ++g) {
          if (gt[g].class_id != cls) continue;
          double v = rotated_iou_bev(anchor, gt[g].box);
          if (v > best) {
            best = v;
            best_g = int(g);
          }
          if (v > best_iou_for_gt[g]) {
            best_iou_for_gt[g] = v;
            best_anchor_for_gt[g] = {ix, iz, a, false};
          }
        }
        if (best_g < 0) continue;
        if (best >= pos_thr[cls]) {
          label_at(a, cls, ix, iz) = 1.0;
          out.positives.push_back({ix, iz, a, best_g});
          gt_matched[size_t(best_g)] = true;
        } else if (best >= neg_thr[cls]) {
          label_at(a, cls, ix, iz) = -1.0;
        }
      }
    }
  }

  // Force-match: every overlapped ground truth gets at least one anchor.
  for (size_t g = 0; g < gt.size(); ++g) {
    if (gt_matched[g] || best_iou_for_gt[g] <= 0.0) continue;
    const BestAnchor& b = best_anchor_for_gt[g];
    bool taken = false;
    for (const auto& p : out.positives)
      if (p.ix == b.ix && p.iz == b.iz && p.a == b.a) taken = true;
    if (taken) continue;
    int cls = anchors.template_class[size_t(b.a)];
    label_at(b.a, cls, b.ix, b.iz) = 1.0;
    out.positives.push_back({b.ix, b.iz, b.a, int(g)});
  }
  return out;
}

double sigmoid_scalar(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  double e = std::exp(logit);
  return e / (1.0 + e);
}

std::vector<Detection> decode_detections(const Tensor& logits, const Tensor& offsets,
                                         const AnchorSet& anchors, const DetectionGrid& grid,
                                         const DetectorConfig& cfg, double score_threshold) {
  int64_t a_count = anchors.per_cell();
  int64_t nx = grid.nx();
  int64_t nz = grid.nz();
  contract(logits.dim() == 3 && logits.size(0) == a_count * cfg.num_classes &&
               logits.size(1) == nx && logits.size(2) == nz,
           "decode_detections: logits must be (a*k, x, z) on the detection grid");
  contract(offsets.dim() == 3 && offsets.size(0) == a_count * 7 && offsets.size(1) == nx &&
               offsets.size(2) == nz,
           "decode_detections: offsets must be (a*7, x, z) on the detection grid");
  std::vector<Detection> out;
  for (int64_t ix = 0; ix < nx; ++ix) {
    for (int64_t iz = 0; iz < nz; ++iz) {
      for (int64_t a = 0; a < a_count; ++a) {
        BoxOffset d;
        for (int64_t j = 0; j < 7; ++j)
          d[size_t(j)] = offsets[((a * 7 + j) * nx + ix) * nz + iz];
        for (int64_t k = 0; k < cfg.num_classes; ++k) {
          double score =
              sigmoid_scalar(logits[((a * cfg.num_classes + k) * nx + ix) * nz + iz]);
          if (score < score_threshold) continue;
          Detection det;
          det.box = decode_box(anchor_at(anchors, grid, ix, iz, a), d);
          det.class_id = int(k);
          det.score = score;
          out.push_back(det);
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms_bev(std::vector<Detection> detections, double iou_threshold,
                               double score_threshold, int64_t max_out) {
  contract(iou_threshold >= 0.0 && iou_threshold <= 1.0,
           "nms_bev: iou_threshold must be in [0, 1]");
  contract(max_out >= 0, "nms_bev: max_out must be non-negative");
  std::vector<Detection> pool;
  for (const auto& d : detections) {
    validate_box(d.box);
    contract(d.score >= 0.0 && d.score <= 1.0, "nms_bev: score must be in [0, 1]");
    if (d.score >= score_threshold) pool.push_back(d);
  }
  std::sort(pool.begin(), pool.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    return a.box.z < b.box.z;
  });
  std::vector<Detection> kept;
  for (const auto& d : pool) {
    if (int64_t(kept.size()) >= max_out) break;
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (rotated_iou_bev(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Val roi_bev_pool(Tape& t, Val bev, const DetectionGrid& grid, const Box7& box, int64_t k) {
  contract(k >= 1, "roi_bev_pool: k must be >= 1");
  validate_box(box);
  const Tensor& b = t.value(bev);
  contract(b.dim() == 3 && b.size(1) == grid.nx() && b.size(2) == grid.nz(),
           "roi_bev_pool: bev must be (c',x,z) on the detection grid");

  // Cells whose centers could fall inside the footprint.
  double r = 0.5 * std::hypot(box.w, box.l);
  auto clampi = [](int64_t v, int64_t lo, int64_t hi) { return std::min(std::max(v, lo), hi); };
  int64_t ix0 = clampi(int64_t(std::floor((box.x - r - grid.x_min_m) / grid.voxel_m)) - 1, 0,
                       grid.nx() - 1);
  int64_t ix1 = clampi(int64_t(std::ceil((box.x + r - grid.x_min_m) / grid.voxel_m)) + 1, 0,
                       grid.nx() - 1);
  int64_t iz0 = clampi(int64_t(std::floor((box.z - r - grid.z_min_m) / grid.voxel_m)) - 1, 0,
                       grid.nz() - 1);
  int64_t iz1 = clampi(int64_t(std::ceil((box.z + r - grid.z_min_m) / grid.voxel_m)) + 1, 0,
                       grid.nz() - 1);

  std::vector<std::vector<int64_t>> regions(size_t(k * k));
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      Box7 sub = box;
      double cx = ((double(i) + 0.5) / double(k) - 0.5) * box.w;
      double cz = ((double(j) + 0.5) / double(k) - 0.5) * box.l;
      double c = std::cos(box.yaw);
      double s = std::sin(box.yaw);
      sub.x = box.x + cx * c + cz * s;
      sub.z = box.z - cx * s + cz * c;
      sub.w = box.w / double(k);
      sub.l = box.l / double(k);
      auto& region = regions[size_t(i * k + j)];
      for (int64_t ix = ix0; ix <= ix1; ++ix)
        for (int64_t iz = iz0; iz <= iz1; ++iz)
          if (box_contains_bev(sub, grid.center_x(ix), grid.center_z(iz)))
            region.push_back(ix * grid.nz() + iz);
    }
  }
  return t.max_pool_region(bev, regions);
}

Val local_align_offset(Tape& t, const BoundParams& p, Val pooled) {
  const Tensor& pv = t.value(pooled);
  contract(pv.dim() == 2, "local_align: pooled must be (k*k, c')");
  Val flat = t.reshape(pooled, {1, pv.size(0) * pv.size(1)});
  Val h1 = t.matmul(flat, p.at("det.align1.w"));
  const Tensor& b1 = t.value(p.at("det.align1.b"));
  Val h = t.relu(t.add(h1, t.reshape(p.at("det.align1.b"), {1, b1.size(0)})));
  Val o = t.add(t.matmul(h, p.at("det.align2.w")), t.reshape(p.at("det.align2.b"), {1, 7}));
  return t.reshape(o, {7});
}

Box7 local_align(Tape& t, const BoundParams& p, Val pooled, const Box7& global_box) {
  Val off = local_align_offset(t, p, pooled);
  const Tensor& o = t.value(off);
  BoxOffset d;
  for (int i = 0; i < 7; ++i) d[size_t(i)] = o[i];
  return decode_box(global_box, d);
}

}  // namespace evstereo
