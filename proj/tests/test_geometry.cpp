#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "evstereo/errors.hpp"
#include "evstereo/geometry.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/stereo_ops.hpp"

using namespace evstereo;

namespace {

StereoRig test_rig() {
  StereoRig r;
  r.fx = 500.0;
  r.fy = 500.0;
  r.cx = 31.5;
  r.cy = 23.5;
  r.baseline_m = 0.6;
  r.width = 64;
  r.height = 48;
  return r;
}

Tensor random_tensor(std::vector<int64_t> shape, DetRng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// scalar zero-padded bilinear read of img (c,h,w) at fractional (u,v)
double bilerp(const Tensor& img, int64_t ch, double u, double v) {
  const int64_t h = img.size(1), w = img.size(2);
  double fx0 = std::floor(u), fy0 = std::floor(v);
  int64_t x0 = int64_t(fx0), y0 = int64_t(fy0);
  double ax = u - fx0, ay = v - fy0;
  auto px = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return img.at({ch, y, x});
  };
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
         ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
}

}  // namespace

TEST_CASE("depth index maps round trip") {
  DepthGrid g;
  g.z_min_m = 2.0;
  g.step_m = 0.5;
  g.levels = 12;
  CHECK(g.depth_of_index(0) == 2.0);
  CHECK(g.depth_of_index(10) == 7.0);
  CHECK(g.index_of_depth(2.0) == 0.0);
  DetRng rng(51);
  for (int i = 0; i < 100; ++i) {
    double z = rng.uniform(g.z_min_m, g.z_max_m());
    CHECK(std::abs(g.depth_of_index(g.index_of_depth(z)) - z) < 1e-12);
  }
}

TEST_CASE("disparity formula and monotonicity") {
  StereoRig r = test_rig();
  CHECK(disparity_for_depth(r, 30.0) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(disparity_for_depth(r, 1e9) < 1e-6);
  CHECK_THROWS_AS(disparity_for_depth(r, 0.0), ContractError);
  CHECK_THROWS_AS(disparity_for_depth(r, -3.0), ContractError);

  DepthGrid g;
  g.levels = 24;
  double prev = disparity_for_depth(r, g.depth_of_index(0));
  for (int w = 1; w < g.levels; ++w) {
    double cur = disparity_for_depth(r, g.depth_of_index(w));
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("calibration json round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "evstereo_calib_test";
  fs::create_directories(dir);
  StereoRig r = test_rig();
  save_calibration((dir / "calib.json").string(), r);
  StereoRig l = load_calibration((dir / "calib.json").string());
  CHECK(l.fx == r.fx);
  CHECK(l.cy == r.cy);
  CHECK(l.baseline_m == r.baseline_m);
  CHECK(l.width == 64);

  {
    std::ofstream bad((dir / "partial.json").string());
    bad << R"({"fx": 500.0})";
  }
  CHECK_THROWS_AS(load_calibration((dir / "partial.json").string()), ContractError);
  {
    std::ofstream bad((dir / "garbage.json").string());
    bad << "not json";
  }
  CHECK_THROWS_AS(load_calibration((dir / "garbage.json").string()), IoError);
  CHECK_THROWS_AS(load_calibration((dir / "missing.json").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("detection grid extents and centers") {
  DetectionGrid g;  // defaults: x +-30.4, y [-1,3], z [2,56.9], voxel 0.2
  CHECK(g.nx() == 304);
  CHECK(g.ny() == 20);
  CHECK(g.nz() == 275);
  CHECK(g.center_x(0) == doctest::Approx(-30.3).epsilon(1e-12));
  CHECK(g.center_y(0) == doctest::Approx(-0.9).epsilon(1e-12));
  CHECK(g.center_z(0) == doctest::Approx(2.1).epsilon(1e-12));
  CHECK_NOTHROW(validate_detection_grid(g));

  DetectionGrid bad = g;
  bad.voxel_m = -1;
  CHECK_THROWS_AS(validate_detection_grid(bad), ContractError);
}

TEST_CASE("plane sweep recovers a constructed correspondence") {
  DetRng rng(52);
  StereoRig r = test_rig();
  const int stride = 4;
  const int64_t c = 3, h = 12, w = 16;

  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 1.0;
  depth.levels = 8;

  // choose the level whose disparity is an exact integer in feature pixels
  // disp_feat(w*) = fx*L/(z*stride); pick z* = fx*L/(stride*delta)
  const int64_t delta = 3;
  const double z_star = r.fx * r.baseline_m / (stride * double(delta));  // 25.0
  depth.z_min_m = z_star - 2.0;
  const int64_t w_star = 2;

  Tensor fl = random_tensor({c, h, w}, rng);
  Tensor fr = Tensor::zeros({c, h, w});
  // right view sees the scene shifted left by delta: fr(u) = fl(u + delta)
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x + delta < w; ++x) fr.at({ch, y, x}) = fl.at({ch, y, x + delta});

  Tape t;
  Val psv = build_plane_sweep_volume(t, t.input(fl), t.input(fr), r, depth, stride);
  const Tensor& v = t.value(psv);
  REQUIRE(v.shape() == std::vector<int64_t>{2 * c, depth.levels, h, w});

  // left half repeats the left features at every level
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t lvl = 0; lvl < depth.levels; ++lvl)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          CHECK(v.at({ch, lvl, y, x}) == fl.at({ch, y, x}));

  // at w_star both halves agree wherever the shifted read stays in bounds
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = delta; x + delta < w; ++x)
        CHECK(v.at({c + ch, w_star, y, x}) ==
              doctest::Approx(fl.at({ch, y, x})).epsilon(1e-12));
}

TEST_CASE("plane sweep matches a per-pixel gather oracle") {
  DetRng rng(53);
  StereoRig r = test_rig();
  const int stride = 4;
  const int64_t c = 2, h = 8, w = 12;
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 3.0;
  depth.levels = 6;

  Tensor fl = random_tensor({c, h, w}, rng);
  Tensor fr = random_tensor({c, h, w}, rng);
  Tape t;
  Val psv = build_plane_sweep_volume(t, t.input(fl), t.input(fr), r, depth, stride);
  const Tensor& v = t.value(psv);

  for (int64_t lvl = 0; lvl < depth.levels; ++lvl) {
    double disp = disparity_for_depth(r, depth.depth_of_index(double(lvl))) / stride;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          double want = bilerp(fr, ch, double(x) - disp, double(y));
          CHECK(std::abs(v.at({c + ch, lvl, y, x}) - want) < 1e-12);
        }
  }

  // a depth level closer than fx*L/(stride*(W+1)) pushes every sample out of
  // bounds: right half all zeros
  DepthGrid tiny;
  tiny.z_min_m = 0.5;  // disparity 600 px = 150 feature px >> 12
  tiny.step_m = 0.1;
  tiny.levels = 2;
  Tape t2;
  Val psv2 = build_plane_sweep_volume(t2, t2.input(fl), t2.input(fr), r, tiny, stride);
  const Tensor& v2 = t2.value(psv2);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) CHECK(v2.at({c + ch, 0, y, x}) == 0.0);
}

TEST_CASE("lift projects voxel centers with shared sampling rules") {
  DetRng rng(54);
  StereoRig r = test_rig();
  const int stride = 4;
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 1.0;
  depth.levels = 10;
  DetectionGrid det;
  det.x_min_m = -2.0;
  det.x_max_m = 2.0;
  det.y_min_m = -0.8;
  det.y_max_m = 0.8;
  det.z_min_m = 3.0;
  det.z_max_m = 9.0;
  det.voxel_m = 0.4;

  const int64_t c = 2, h = 12, w = 16;
  Tensor vol = random_tensor({c, depth.levels, h, w}, rng);

  Tape t;
  Val lifted = lift_to_3d(t, t.input(vol), det, r, depth, stride);
  const Tensor& lv = t.value(lifted);
  REQUIRE(lv.shape() == std::vector<int64_t>{c, det.ny(), det.nx(), det.nz()});

  // per-voxel brute-force projection oracle
  for (int64_t iy = 0; iy < det.ny(); ++iy)
    for (int64_t ix = 0; ix < det.nx(); ++ix)
      for (int64_t iz = 0; iz < det.nz(); ++iz) {
        double x = det.center_x(ix), y = det.center_y(iy), z = det.center_z(iz);
        double uf = pixel_to_feature(r.fx * x / z + r.cx, stride);
        double vf = pixel_to_feature(r.fy * y / z + r.cy, stride);
        double wf = depth.index_of_depth(z);
        int64_t w0 = int64_t(std::floor(wf));
        double ad = wf - double(w0);
        for (int64_t ch = 0; ch < c; ++ch) {
          double lo = 0.0, hi = 0.0;
          if (w0 >= 0 && w0 < depth.levels) {
            Tensor plane({1, h, w});
            for (int64_t i = 0; i < h * w; ++i) plane[i] = vol[(ch * depth.levels + w0) * h * w + i];
            lo = bilerp(plane, 0, uf, vf);
          }
          if (w0 + 1 >= 0 && w0 + 1 < depth.levels) {
            Tensor plane({1, h, w});
            for (int64_t i = 0; i < h * w; ++i)
              plane[i] = vol[(ch * depth.levels + w0 + 1) * h * w + i];
            hi = bilerp(plane, 0, uf, vf);
          }
          double want = (w0 + 1 < 0 || w0 >= depth.levels) ? 0.0 : (1.0 - ad) * lo + ad * hi;
          CHECK(std::abs(lv.at({ch, iy, ix, iz}) - want) < 1e-12);
        }
      }

  // constant source -> constant wherever strictly inside, zero outside range
  Tensor ones = Tensor::full({c, depth.levels, h, w}, 1.0);
  DetectionGrid far = det;
  far.z_min_m = 50.0;
  far.z_max_m = 58.0;  // beyond d(D-1) = 11 m: all zero
  Tape t2;
  Val outside = lift_to_3d(t2, t2.input(ones), far, r, depth, stride);
  const Tensor& ov = t2.value(outside);
  for (int64_t i = 0; i < ov.numel(); ++i) CHECK(ov[i] == 0.0);
}

TEST_CASE("warp shifts by the uniform depth disparity") {
  DetRng rng(55);
  StereoRig r = test_rig();
  const int stride = 4;
  const int64_t c = 2, h = 8, w = 12;
  Tensor fr = random_tensor({c, h, w}, rng);

  // uniform depth whose feature-space disparity is exactly 2 px
  double z = r.fx * r.baseline_m / (stride * 2.0);
  Tensor depth_map = Tensor::full({h, w}, z);
  Tape t;
  Val warped = warp_right_to_left(t, t.input(fr), t.input(depth_map), r, stride);
  const Tensor& wv = t.value(warped);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double want = x >= 2 ? fr.at({ch, y, x - 2}) : 0.0;
        CHECK(wv.at({ch, y, x}) == doctest::Approx(want).epsilon(1e-12));
      }

  // huge depth: zero disparity limit
  Tensor deep = Tensor::full({h, w}, 1e12);
  Tape t2;
  Val near_id = warp_right_to_left(t2, t2.input(fr), t2.input(deep), r, stride);
  for (int64_t i = 0; i < fr.numel(); ++i)
    CHECK(t2.value(near_id)[i] == doctest::Approx(fr[i]).epsilon(1e-6));

  // random depth map vs scalar oracle
  Tensor zmap({h, w});
  for (int64_t i = 0; i < zmap.numel(); ++i) zmap[i] = rng.uniform(2.0, 40.0);
  Tape t3;
  Val out = warp_right_to_left(t3, t3.input(fr), t3.input(zmap), r, stride);
  const Tensor& o = t3.value(out);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double disp = disparity_for_depth(r, zmap.at({y, x})) / stride;
        double want = bilerp(fr, ch, double(x) - disp, double(y));
        CHECK(std::abs(o.at({ch, y, x}) - want) < 1e-12);
      }

  CHECK_THROWS_AS(
      [&] {
        Tape t4;
        Tensor badz = Tensor::full({h, w}, -1.0);
        warp_right_to_left(t4, t4.input(fr), t4.input(badz), r, stride);
      }(),
      ContractError);
}
