#include "evstereo/dual_filter.hpp"

#include <algorithm>
#include <cmath>

#include "evstereo/errors.hpp"
#include "evstereo/stereo_ops.hpp"

namespace evstereo {

void add_dual_filter_params(std::map<std::string, Tensor>& out, const DualFilterConfig& cfg,
                            uint64_t seed) {
  const int64_t c = cfg.channels;
  contract(c >= 2 && c % 2 == 0, "filter channel count must be even and at least 2");
  contract(cfg.pattern.count() >= 1, "neighbor pattern must not be empty");
  add_conv_param(out, "filter.reduce1", {c / 2, 2 * c, 3, 3, 3}, seed);
  add_conv_param(out, "filter.reduce2", {1, c / 2, 3, 3, 3}, seed);
  add_conv_param(out, "filter.attn.q", {c, c, 1, 1}, seed);
  add_conv_param(out, "filter.attn.k", {c, c, 1, 1}, seed);
  add_conv_param(out, "filter.attn.v", {c, c, 1, 1}, seed);
  add_conv_param(out, "filter.attn.a", {c, c, 1, 1}, seed);
  out["filter.attn.alpha"] = Tensor::full({1}, std::sqrt(double(c)));
  add_conv_param(out, "filter.attn.mlp1", {2 * c, c, 1, 1}, seed);
  add_conv_param(out, "filter.attn.mlp2", {c, 2 * c, 1, 1}, seed);
  add_conv_param(out, "filter.fuse", {c, 2 * c, 3, 3, 3}, seed);
}

namespace {

Val conv1x1(Tape& t, const BoundParams& p, const std::string& name, Val x) {
  return t.conv2d(x, p.at(name + ".w"), p.at(name + ".b"), {1, 1}, {0, 0});
}

// (1, h, w) constant grids of pixel u and v indices.
std::pair<Tensor, Tensor> index_grids(int64_t h, int64_t w) {
  Tensor u({1, h, w});
  Tensor v({1, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      u[y * w + x] = double(x);
      v[y * w + x] = double(y);
    }
  return {u, v};
}

}  // namespace

Val neighbor_shift(Tape& t, Val x, int du, int dv) {
  const Tensor& xv = t.value(x);
  contract(xv.dim() == 3, "neighbor_shift expects (c,h,w)");
  const int64_t h = xv.size(1), w = xv.size(2);
  Tensor coords({2, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx) {
      coords[y * w + xx] = double(std::clamp<int64_t>(xx + du, 0, w - 1));
      coords[h * w + y * w + xx] = double(std::clamp<int64_t>(y + dv, 0, h - 1));
    }
  return t.bilinear_sample_2d(x, t.constant(coords));
}

Val depth_probability(Tape& t, const BoundParams& p, const DualFilterConfig& cfg, Val psv) {
  const Tensor& v = t.value(psv);
  contract(v.dim() == 4 && v.size(0) == 2 * cfg.channels,
           "depth probability input must be (2C, D, H, W)");
  Val x = t.conv3d(psv, p.at("filter.reduce1.w"), p.at("filter.reduce1.b"), {1, 1, 1}, {1, 1, 1});
  x = t.relu(x);
  x = t.conv3d(x, p.at("filter.reduce2.w"), p.at("filter.reduce2.b"), {1, 1, 1}, {1, 1, 1});
  x = t.reshape(x, {v.size(1), v.size(2), v.size(3)});
  return t.softmax(x, 0);
}

Val expected_depth(Tape& t, Val prob, const DepthGrid& depth) {
  const Tensor& pv = t.value(prob);
  contract(pv.dim() == 3 && pv.size(0) == depth.levels,
           "expected_depth input must be (D, H, W) matching the depth grid");
  Tensor levels({depth.levels, 1, 1});
  for (int64_t w = 0; w < depth.levels; ++w) levels[w] = depth.depth_of_index(double(w));
  Val lv = t.broadcast_to(t.constant(levels), pv.shape());
  return t.sum(t.mul(prob, lv), 0);
}

Val semantic_similarity(Tape& t, Val f_left_sem, Val f_right_sem, Val depth_init,
                        const StereoRig& rig, const NeighborPattern& pattern, int stride) {
  const Tensor& fl = t.value(f_left_sem);
  contract(fl.dim() == 3 && fl.same_shape(t.value(f_right_sem)),
           "similarity needs equal (C,H,W) feature maps");
  const int64_t h = fl.size(1), w = fl.size(2);
  const Tensor& dv = t.value(depth_init);
  contract(dv.dim() == 2 && dv.size(0) == h && dv.size(1) == w,
           "depth map shape must match the feature maps");

  auto [u_base, v_base] = index_grids(h, w);
  Val d3 = t.reshape(depth_init, {1, h, w});
  const double disp_scale = rig.fx * rig.baseline_m / stride;

  std::vector<Val> rows;
  for (auto [du_off, dv_off] : pattern.offsets) {
    Val dm = neighbor_shift(t, d3, du_off, dv_off);
    Val disp = t.scalar_mul(t.reciprocal(dm), disp_scale);
    Val cu = t.sub(t.constant(u_base), disp);
    Val coords = t.concat({cu, t.constant(v_base)}, 0);
    Val sampled = t.bilinear_sample_2d(f_right_sem, coords);
    Val sm = t.sum(t.mul(f_left_sem, sampled), 0);
    rows.push_back(t.reshape(sm, {1, h, w}));
  }
  return t.concat(rows, 0);
}

Val depth_confidence(Tape& t, Val prob, Val depth_init, const DepthGrid& depth,
                     const NeighborPattern& pattern) {
  const Tensor& pv = t.value(prob);
  contract(pv.dim() == 3 && pv.size(0) == depth.levels, "probability volume must be (D, H, W)");
  const int64_t h = pv.size(1), w = pv.size(2);

  Tensor levels({depth.levels, 1, 1});
  for (int64_t i = 0; i < depth.levels; ++i) levels[i] = depth.depth_of_index(double(i));
  Val lv = t.broadcast_to(t.constant(levels), pv.shape());

  Val d3 = t.reshape(depth_init, {1, h, w});
  std::vector<Val> rows;
  for (auto [du_off, dv_off] : pattern.offsets) {
    Val pm = neighbor_shift(t, prob, du_off, dv_off);
    Val dm = neighbor_shift(t, d3, du_off, dv_off);
    Val diff = t.sub(lv, t.broadcast_to(dm, pv.shape()));
    Val cm = t.sum(t.mul(pm, t.mul(diff, diff)), 0);
    rows.push_back(t.reshape(cm, {1, h, w}));
  }
  return t.concat(rows, 0);
}

Val refine_depth_probability(Tape& t, Val prob, Val similarity, Val confidence,
                             const NeighborPattern& pattern) {
  const Tensor& pv = t.value(prob);
  const Tensor& sv = t.value(similarity);
  const int64_t m = pattern.count();
  contract(m >= 1, "neighbor pattern must not be empty");
  contract(sv.dim() == 3 && sv.size(0) == m && sv.same_shape(t.value(confidence)),
           "similarity and confidence must be (M, H, W)");
  const int64_t d = pv.size(0), h = pv.size(1), w = pv.size(2);

  Val weights = t.softmax(t.mul(similarity, t.sigmoid(confidence)), 0);

  Val acc;
  for (int64_t i = 0; i < m; ++i) {
    auto [du_off, dv_off] = pattern.offsets[size_t(i)];
    Val pm = neighbor_shift(t, prob, du_off, dv_off);
    Val wm = t.slice(weights, {i, 0, 0}, {1, h, w});
    Val term = t.mul(pm, t.broadcast_to(wm, {d, h, w}));
    acc = i == 0 ? term : t.add(acc, term);
  }
  return acc;
}

Val enhance_semantic(Tape& t, const BoundParams& p, const DualFilterConfig& cfg, Val f_left_sem,
                     Val f_right_warped) {
  const Tensor& fl = t.value(f_left_sem);
  contract(fl.dim() == 3 && fl.same_shape(t.value(f_right_warped)),
           "attention needs equal (C,H,W) feature maps");
  const int64_t c = fl.size(0), h = fl.size(1), w = fl.size(2);
  contract(c == cfg.channels, "feature channels do not match the filter config");

  Val q = t.reshape(conv1x1(t, p, "filter.attn.q", f_left_sem), {c, h * w});
  Val k = t.reshape(conv1x1(t, p, "filter.attn.k", f_right_warped), {c, h * w});
  Val v = t.reshape(conv1x1(t, p, "filter.attn.v", f_right_warped), {c, h * w});

  Val logits = t.matmul(q, t.transpose(k, {1, 0}));
  Val inv_alpha = t.reshape(t.reciprocal(p.at("filter.attn.alpha")), {1, 1});
  Val attn = t.softmax(t.mul(logits, t.broadcast_to(inv_alpha, {c, c})), 1);

  Val mixed = t.reshape(t.matmul(attn, v), {c, h, w});
  Val a = t.add(f_left_sem, conv1x1(t, p, "filter.attn.a", mixed));

  Val hidden = t.relu(conv1x1(t, p, "filter.attn.mlp1", a));
  Val mlp = conv1x1(t, p, "filter.attn.mlp2", hidden);
  return t.add(t.add(f_left_sem, mlp), a);
}

Val semantic_3d_volume(Tape& t, Val f_sem, Val prob, const DetectionGrid& det,
                       const StereoRig& rig, const DepthGrid& depth, int stride) {
  const Tensor& fv = t.value(f_sem);
  const Tensor& pv = t.value(prob);
  contract(fv.dim() == 3 && pv.dim() == 3, "semantic projection expects (C,H,W) and (D,H,W)");
  contract(fv.size(1) == pv.size(1) && fv.size(2) == pv.size(2),
           "feature and probability spatial extents must match");
  contract(pv.size(0) == depth.levels, "probability depth extent must match the depth grid");
  const int64_t c = fv.size(0), d = pv.size(0), h = fv.size(1), w = fv.size(2);

  Val fb = t.broadcast_to(t.reshape(f_sem, {c, 1, h, w}), {c, d, h, w});
  Val pb = t.broadcast_to(t.reshape(prob, {1, d, h, w}), {c, d, h, w});
  Val masked = t.mul(fb, pb);
  return lift_to_3d(t, masked, det, rig, depth, stride);
}

Val fuse_voxels(Tape& t, const BoundParams& p, Val geo_3d, Val sem_3d) {
  const Tensor& g = t.value(geo_3d);
  contract(g.dim() == 4 && g.same_shape(t.value(sem_3d)),
           "fusion inputs must be equal-shaped (C, ny, nx, nz) volumes");
  Val cat = t.concat({geo_3d, sem_3d}, 0);
  return t.conv3d(cat, p.at("filter.fuse.w"), p.at("filter.fuse.b"), {1, 1, 1}, {1, 1, 1});
}

}  // namespace evstereo
