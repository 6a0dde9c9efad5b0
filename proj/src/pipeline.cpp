#include "evstereo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evstereo/backbone.hpp"
#include "evstereo/dual_filter.hpp"
#include "evstereo/errors.hpp"
#include "evstereo/stereo_ops.hpp"
#include "evstereo/voxel_grid.hpp"
#include "evstereo/weights.hpp"
#include "json.hpp"

namespace evstereo {

namespace {

DualFilterConfig filter_config(const RunConfig& cfg) {
  DualFilterConfig f;
  f.channels = cfg.backbone.channels;
  return f;
}

constexpr double kFocalAlpha = 0.25;
constexpr double kFocalGamma = 2.0;

}  // namespace

std::map<std::string, Tensor> init_model_params(const RunConfig& cfg) {
  validate_config(cfg);
  std::map<std::string, Tensor> out;
  add_backbone_params(out, cfg.backbone, cfg.seed);
  add_dual_filter_params(out, filter_config(cfg), cfg.seed);
  add_detector_params(out, cfg.detector, cfg.seed);
  add_conv_param(out, "aux.head",
                 {int64_t(cfg.detector.num_classes), int64_t(cfg.backbone.channels), 3, 3},
                 cfg.seed);
  return out;
}

void save_model(const std::string& dir, const RunConfig& cfg,
                const std::map<std::string, Tensor>& params) {
  save_weight_dir(dir, params, nlohmann::json::parse(config_to_json(cfg)));
}

std::map<std::string, Tensor> load_model(const std::string& dir, const RunConfig& cfg) {
  WeightDir loaded = load_weight_dir(dir);
  std::map<std::string, Tensor> expected = init_model_params(cfg);
  for (const auto& [name, want] : expected) {
    auto it = loaded.tensors.find(name);
    contract(it != loaded.tensors.end(), "weights: missing tensor " + name);
    contract(it->second.shape() == want.shape(), "weights: shape mismatch for " + name);
  }
  contract(loaded.tensors.size() == expected.size(),
           "weights: tensor set does not match the configured model");
  return loaded.tensors;
}

ForwardOut run_forward(Tape& t, const BoundParams& p, const RunConfig& cfg,
                       const StereoRig& rig, const Tensor& grid_left,
                       const Tensor& grid_right) {
  contract(grid_left.dim() == 3 && grid_left.shape() == grid_right.shape(),
           "run_forward: voxel grids must share a (B, H, W) shape");
  contract(grid_left.size(0) == cfg.backbone.bins,
           "run_forward: voxel grid bin count does not match the backbone");
  contract(grid_left.size(1) == rig.height && grid_left.size(2) == rig.width,
           "run_forward: voxel grid does not match the sensor size");

  DualFilterConfig fcfg = filter_config(cfg);
  const int stride = kBackboneStride;

  FeaturePair left = extract_features(t, p, cfg.backbone, t.constant(grid_left));
  FeaturePair right = extract_features(t, p, cfg.backbone, t.constant(grid_right));

  Val psv = build_plane_sweep_volume(t, left.geometric, right.geometric, rig, cfg.depth,
                                     stride);
  Val prob = depth_probability(t, p, fcfg, psv);
  Val depth_init = expected_depth(t, prob, cfg.depth);

  Val sim = semantic_similarity(t, left.semantic, right.semantic, depth_init, rig,
                                fcfg.pattern, stride);
  Val conf = depth_confidence(t, prob, depth_init, cfg.depth, fcfg.pattern);
  Val prob_refined = refine_depth_probability(t, prob, sim, conf, fcfg.pattern);
  Val depth_refined = expected_depth(t, prob_refined, cfg.depth);

  Val warped = warp_right_to_left(t, right.semantic, depth_refined, rig, stride);
  Val enhanced = enhance_semantic(t, p, fcfg, left.semantic, warped);

  Val sem3d = semantic_3d_volume(t, enhanced, prob_refined, cfg.detection, rig, cfg.depth,
                                 stride);
  Val geo3d = semantic_3d_volume(t, left.geometric, prob_refined, cfg.detection, rig,
                                 cfg.depth, stride);
  Val fused = fuse_voxels(t, p, geo3d, sem3d);

  Val bev = bev_collapse(t, p, cfg.detector, fused);
  DenseHeadOut head = dense_head(t, p, cfg.detector, bev);

  Val aux = t.conv2d(left.semantic, p.at("aux.head.w"), p.at("aux.head.b"), {1, 1}, {1, 1});

  return {depth_init, depth_refined, aux, head.logits, head.offsets, bev};
}

DepthTarget ray_cast_depth(const std::vector<GtBox>& boxes, const StereoRig& rig,
                           const DepthGrid& depth, int stride, int64_t h_feat,
                           int64_t w_feat) {
  validate_rig(rig);
  validate_depth_grid(depth);
  contract(h_feat > 0 && w_feat > 0, "ray_cast_depth: empty feature grid");
  DepthTarget out;
  out.depth = Tensor({h_feat, w_feat});
  out.mask = Tensor({h_feat, w_feat});

  for (int64_t vf = 0; vf < h_feat; ++vf)
    for (int64_t uf = 0; uf < w_feat; ++uf) {
      double u = feature_to_pixel(double(uf), stride);
      double v = feature_to_pixel(double(vf), stride);
      // Unnormalized ray with dz = 1, so the hit parameter is camera depth.
      double dx = (u - rig.cx) / rig.fx;
      double dy = (v - rig.cy) / rig.fy;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& g : boxes) {
        const Box7& b = g.box;
        double c = std::cos(b.yaw), s = std::sin(b.yaw);
        // Ray origin and direction in the box's local frame.
        double ox = (0.0 - b.x) * c - (0.0 - b.z) * s;
        double oz = (0.0 - b.x) * s + (0.0 - b.z) * c;
        double oy = -b.y;
        double rx = dx * c - 1.0 * s;
        double rz = dx * s + 1.0 * c;
        double ry = dy;
        double t_in = 0.0, t_out = std::numeric_limits<double>::infinity();
        const double half[3] = {0.5 * b.w, 0.5 * b.h, 0.5 * b.l};
        const double o[3] = {ox, oy, oz};
        const double r[3] = {rx, ry, rz};
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
          if (r[a] == 0.0) {
            if (std::fabs(o[a]) > half[a]) miss = true;
            continue;
          }
          double t0 = (-half[a] - o[a]) / r[a];
          double t1 = (half[a] - o[a]) / r[a];
          if (t0 > t1) std::swap(t0, t1);
          t_in = std::max(t_in, t0);
          t_out = std::min(t_out, t1);
        }
        if (miss || t_out < t_in || t_out <= 0.0) continue;
        double hit = t_in > 0.0 ? t_in : t_out;
        best = std::min(best, hit);
      }
      if (std::isfinite(best) && best >= depth.z_min_m && best <= depth.z_max_m()) {
        out.depth[vf * w_feat + uf] = best;
        out.mask[vf * w_feat + uf] = 1.0;
      }
    }
  return out;
}

Tensor aux_heatmap_target(const std::vector<GtBox>& boxes, const StereoRig& rig, int stride,
                          int64_t h_feat, int64_t w_feat, int num_classes) {
  contract(num_classes > 0, "aux_heatmap_target: need at least one class");
  Tensor out({int64_t(num_classes), h_feat, w_feat});
  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<HeatmapObject> objs;
    for (const auto& g : boxes) {
      if (g.class_id != cls) continue;
      contract(g.box.z > 0.0, "aux_heatmap_target: box behind the camera");
      double u = pixel_to_feature(rig.fx * g.box.x / g.box.z + rig.cx, stride);
      double v = pixel_to_feature(rig.fy * g.box.y / g.box.z + rig.cy, stride);
      double sigma =
          std::max(1.0, 0.25 * rig.fx * std::hypot(g.box.w, g.box.l) / g.box.z / stride);
      objs.push_back({u, v, sigma});
    }
    Tensor map = center_heatmap_target(h_feat, w_feat, objs);
    for (int64_t i = 0; i < h_feat * w_feat; ++i) out[cls * h_feat * w_feat + i] = map[i];
  }
  return out;
}

std::vector<Detection> detect(Tape& t, const BoundParams& p, const RunConfig& cfg,
                              const ForwardOut& fwd) {
  AnchorSet anchors = make_anchor_set();
  std::vector<Detection> candidates =
      decode_detections(t.value(fwd.cls_logits), t.value(fwd.reg_offsets), anchors,
                        cfg.detection, cfg.detector, cfg.nms_score_threshold);
  std::vector<Detection> kept = nms_bev(std::move(candidates), cfg.nms_iou_threshold,
                                        cfg.nms_score_threshold, cfg.nms_max_out);
  for (auto& d : kept) {
    Val pooled = roi_bev_pool(t, fwd.bev, cfg.detection, d.box, cfg.detector.k_roi);
    d.box = local_align(t, p, pooled, d.box);
  }
  return kept;
}

LossBreakdown train_step(std::map<std::string, Tensor>& params, AdamWState& opt,
                         const RunConfig& cfg, const StereoRig& rig,
                         const TrainSample& sample) {
  validate_config(cfg);
  Tape t;
  BoundParams p = bind_params(t, params, true);
  ForwardOut fwd = run_forward(t, p, cfg, rig, sample.grid_left, sample.grid_right);

  const int64_t h_feat = sample.grid_left.size(1) / kBackboneStride;
  const int64_t w_feat = sample.grid_left.size(2) / kBackboneStride;

  DepthTarget dt = ray_cast_depth(sample.gt, rig, cfg.depth, kBackboneStride, h_feat, w_feat);
  DepthLosses dl = depth_losses(t, fwd.depth_init, fwd.depth_refined, dt.depth, dt.mask);

  Tensor heat = aux_heatmap_target(sample.gt, rig, kBackboneStride, h_feat, w_feat,
                                   cfg.detector.num_classes);
  Val aux = aux_2d_loss(t, fwd.aux_logits, heat);

  AnchorSet anchors = make_anchor_set();
  AnchorAssignment assignment = assign_anchors(anchors, cfg.detection, cfg.detector, sample.gt);
  Val cls = focal_cls_loss(t, fwd.cls_logits, assignment.cls_labels, kFocalAlpha, kFocalGamma);
  Val reg_global =
      global_regression_loss(t, fwd.reg_offsets, anchors, cfg.detection, sample.gt, assignment);

  // The alignment head trains against the boxes the dense head currently
  // decodes at each positive anchor; the proposal itself is read as a value,
  // so no gradient flows back through the decode.
  const Tensor& off = t.value(fwd.reg_offsets);
  int64_t nx = cfg.detection.nx(), nz = cfg.detection.nz();
  std::vector<Val> local_offsets;
  std::vector<Box7> proposals, targets;
  for (const auto& m : assignment.positives) {
    BoxOffset delta{};
    for (int64_t j = 0; j < 7; ++j)
      delta[size_t(j)] = off[((m.a * 7 + j) * nx + m.ix) * nz + m.iz];
    Box7 proposal = decode_box(anchor_at(anchors, cfg.detection, m.ix, m.iz, m.a), delta);
    Val pooled = roi_bev_pool(t, fwd.bev, cfg.detection, proposal, cfg.detector.k_roi);
    local_offsets.push_back(local_align_offset(t, p, pooled));
    proposals.push_back(proposal);
    targets.push_back(sample.gt[size_t(m.gt_index)].box);
  }
  Val reg_local = local_regression_loss(t, local_offsets, proposals, targets);

  LossTerms terms{dl.init, dl.refine, aux, cls, reg_global, reg_local};
  Val total = total_loss(t, terms);
  LossBreakdown out = read_losses(t, terms, total);

  const std::pair<const char*, double> named[] = {
      {"depth_init", out.depth_init}, {"depth_refine", out.depth_refine},
      {"aux_2d", out.aux_2d},         {"cls", out.cls},
      {"reg_global", out.reg_global}, {"reg_local", out.reg_local},
      {"total", out.total}};
  for (const auto& [name, value] : named)
    contract(std::isfinite(value), std::string("training diverged: ") + name +
                                       " is not finite");

  t.backward(total);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, val] : p.vals) grads[name] = t.grad(val);

  AdamWConfig acfg;
  acfg.lr = cfg.learning_rate;
  adamw_step(params, grads, opt, acfg);
  return out;
}

std::vector<DetectionFrame> run_inference(const std::map<std::string, Tensor>& params,
                                          const RunConfig& cfg, const StereoRig& rig,
                                          const EventStream& left, const EventStream& right,
                                          std::vector<int64_t>* skipped_instants) {
  validate_config(cfg);
  std::vector<int64_t> instants =
      blind_time_instants(cfg.t_start_us, cfg.t_end_us, cfg.time_slice);

  auto outside_span = [&](const EventStream& s, int64_t tau) {
    if (s.empty()) return false;  // empty recordings run on empty windows
    int64_t start = tau - int64_t(cfg.motion_scale) * cfg.dtau_us;
    return tau <= s.t_first() || start > s.t_last();
  };

  std::vector<DetectionFrame> frames;
  for (int64_t tau : instants) {
    if (outside_span(left, tau) || outside_span(right, tau)) {
      if (skipped_instants) skipped_instants->push_back(tau);
      continue;
    }
    BlindWindow w{tau, cfg.dtau_us, cfg.motion_scale, cfg.time_slice};
    Tensor grid_left = accumulate_motion_scaled(left, w, cfg.backbone.bins);
    Tensor grid_right = accumulate_motion_scaled(right, w, cfg.backbone.bins);
    Tape t;
    BoundParams p = bind_params(t, params, false);
    ForwardOut fwd = run_forward(t, p, cfg, rig, grid_left, grid_right);
    DetectionFrame frame;
    frame.t_us = tau;
    frame.detections = detect(t, p, cfg, fwd);
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace evstereo
