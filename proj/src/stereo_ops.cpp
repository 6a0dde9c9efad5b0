#include "evstereo/stereo_ops.hpp"

#include <cmath>

#include "evstereo/errors.hpp"

namespace evstereo {

Tensor right_sweep_coords(const StereoRig& rig, const DepthGrid& depth, int stride,
                          int64_t h_feat, int64_t w_feat) {
  validate_rig(rig);
  validate_depth_grid(depth);
  contract(stride >= 1, "feature stride must be at least 1");
  const int64_t d = depth.levels;
  Tensor coords({2, d, h_feat, w_feat});
  double* cu = coords.data();
  double* cv = coords.data() + d * h_feat * w_feat;
  for (int64_t w = 0; w < d; ++w) {
    const double disp_feat = disparity_for_depth(rig, depth.depth_of_index(double(w))) / stride;
    for (int64_t v = 0; v < h_feat; ++v)
      for (int64_t u = 0; u < w_feat; ++u) {
        const int64_t i = (w * h_feat + v) * w_feat + u;
        cu[i] = double(u) - disp_feat;
        cv[i] = double(v);
      }
  }
  return coords;
}

Val build_plane_sweep_volume(Tape& t, Val f_left, Val f_right, const StereoRig& rig,
                             const DepthGrid& depth, int stride) {
  const Tensor& fl = t.value(f_left);
  const Tensor& fr = t.value(f_right);
  contract(fl.dim() == 3 && fl.same_shape(fr),
           "plane sweep needs two (c,h,w) feature maps of equal shape");
  const int64_t c = fl.size(0), h = fl.size(1), w = fl.size(2);
  const int64_t d = depth.levels;

  Tensor coords = right_sweep_coords(rig, depth, stride, h, w);
  Val right = t.bilinear_sample_2d(f_right, t.constant(coords));  // (c, d, h, w)

  Val left = t.reshape(f_left, {c, 1, h, w});
  left = t.broadcast_to(left, {c, d, h, w});
  return t.concat({left, right}, 0);
}

Tensor lift_coords(const DetectionGrid& det, const StereoRig& rig, const DepthGrid& depth,
                   int stride) {
  validate_detection_grid(det);
  validate_rig(rig);
  validate_depth_grid(depth);
  const int64_t ny = det.ny(), nx = det.nx(), nz = det.nz();
  const int64_t n = ny * nx * nz;
  Tensor coords({3, ny, nx, nz});
  double* cu = coords.data();
  double* cv = coords.data() + n;
  double* cw = coords.data() + 2 * n;
  for (int64_t iy = 0; iy < ny; ++iy) {
    const double y = det.center_y(iy);
    for (int64_t ix = 0; ix < nx; ++ix) {
      const double x = det.center_x(ix);
      for (int64_t iz = 0; iz < nz; ++iz) {
        const double z = det.center_z(iz);
        const int64_t i = (iy * nx + ix) * nz + iz;
        cu[i] = pixel_to_feature(rig.fx * x / z + rig.cx, stride);
        cv[i] = pixel_to_feature(rig.fy * y / z + rig.cy, stride);
        cw[i] = depth.index_of_depth(z);
      }
    }
  }
  return coords;
}

Val lift_to_3d(Tape& t, Val volume, const DetectionGrid& det, const StereoRig& rig,
               const DepthGrid& depth, int stride) {
  const Tensor& vol = t.value(volume);
  contract(vol.dim() == 4, "lift expects a (c,d,h,w) volume");
  contract(vol.size(1) == depth.levels, "volume depth extent must match the depth grid");
  Tensor coords = lift_coords(det, rig, depth, stride);
  // sampler coord order is (u, v, d); build (3, ...) as rows u, v, w already
  return t.trilinear_sample_3d(volume, t.constant(coords));
}

Val warp_right_to_left(Tape& t, Val f_right, Val depth_map, const StereoRig& rig, int stride) {
  const Tensor& fr = t.value(f_right);
  contract(fr.dim() == 3, "warp expects a (c,h,w) feature map");
  const int64_t h = fr.size(1), w = fr.size(2);
  const Tensor& z = t.value(depth_map);
  contract(z.dim() == 2 && z.size(0) == h && z.size(1) == w,
           "depth map shape must match the feature map");
  for (int64_t i = 0; i < z.numel(); ++i)
    contract(z[i] > 0.0 && std::isfinite(z[i]), "warp depth values must be positive and finite");

  Tensor u_base({1, h, w});
  Tensor v_base({1, h, w});
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      u_base[v * w + u] = double(u);
      v_base[v * w + u] = double(v);
    }
  Val disp = t.scalar_mul(t.reciprocal(depth_map), rig.fx * rig.baseline_m / stride);
  Val cu = t.sub(t.constant(u_base), t.reshape(disp, {1, h, w}));
  Val coords = t.concat({cu, t.constant(v_base)}, 0);
  return t.bilinear_sample_2d(f_right, coords);
}

}  // namespace evstereo
