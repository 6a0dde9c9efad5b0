#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evstereo/dual_filter.hpp"
#include "evstereo/errors.hpp"
#include "evstereo/gradcheck.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/stereo_ops.hpp"

using namespace evstereo;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, DetRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// random per-pixel distribution over depth, shaped (d, h, w)
Tensor random_prob(int64_t d, int64_t h, int64_t w, DetRng& rng) {
  Tensor p({d, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double total = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        double e = std::exp(rng.uniform(-2.0, 2.0));
        p.at({i, y, x}) = e;
        total += e;
      }
      for (int64_t i = 0; i < d; ++i) p.at({i, y, x}) /= total;
    }
  return p;
}

StereoRig small_rig() {
  StereoRig r;
  r.fx = 100.0;
  r.fy = 100.0;
  r.cx = 15.5;
  r.cy = 11.5;
  r.baseline_m = 0.5;
  r.width = 32;
  r.height = 24;
  return r;
}

int64_t clampi(int64_t v, int64_t lo, int64_t hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

TEST_CASE("depth probability is a valid distribution") {
  DetRng rng(61);
  DualFilterConfig cfg;
  cfg.channels = 4;
  std::map<std::string, Tensor> params;
  add_dual_filter_params(params, cfg, 9);

  const int64_t d = 6, h = 5, w = 7;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor psv = random_tensor({2 * cfg.channels, d, h, w}, rng, -3.0, 3.0);
    Tape t;
    BoundParams bp = bind_params(t, params, false);
    Val p = depth_probability(t, bp, cfg, t.input(psv));
    const Tensor& pv = t.value(p);
    REQUIRE(pv.shape() == std::vector<int64_t>{d, h, w});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double total = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          CHECK(pv.at({i, y, x}) >= 0.0);
          total += pv.at({i, y, x});
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
  }

  // zero weights give constant logits, so the distribution is uniform
  std::map<std::string, Tensor> zeros = params;
  for (auto& [name, tensor] : zeros)
    if (name.rfind("filter.reduce", 0) == 0)
      for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] = 0.0;
  Tape t;
  BoundParams bp = bind_params(t, zeros, false);
  Val p = depth_probability(t, bp, cfg, t.input(random_tensor({8, d, h, w}, rng)));
  for (int64_t i = 0; i < t.value(p).numel(); ++i)
    CHECK(t.value(p)[i] == doctest::Approx(1.0 / double(d)).epsilon(1e-12));
}

TEST_CASE("expected depth reduces the distribution") {
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 0.5;
  depth.levels = 8;
  const int64_t h = 4, w = 5;

  // one-hot at level 3 -> exactly d(3)
  Tensor onehot = Tensor::zeros({depth.levels, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) onehot.at({3, y, x}) = 1.0;
  Tape t;
  Val d = expected_depth(t, t.input(onehot), depth);
  for (int64_t i = 0; i < h * w; ++i) CHECK(t.value(d)[i] == depth.depth_of_index(3));

  // uniform -> midpoint of the level range
  Tensor uni = Tensor::full({depth.levels, h, w}, 1.0 / double(depth.levels));
  Tape t2;
  Val du = expected_depth(t2, t2.input(uni), depth);
  double mid = depth.z_min_m + depth.step_m * double(depth.levels - 1) / 2.0;
  for (int64_t i = 0; i < h * w; ++i)
    CHECK(t2.value(du)[i] == doctest::Approx(mid).epsilon(1e-14));

  // random distribution vs dot-product oracle
  DetRng rng(62);
  Tensor p = random_prob(depth.levels, h, w, rng);
  Tape t3;
  Val dr = expected_depth(t3, t3.input(p), depth);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double want = 0.0;
      for (int64_t i = 0; i < depth.levels; ++i)
        want += p.at({i, y, x}) * depth.depth_of_index(double(i));
      CHECK(std::abs(t3.value(dr).at({y, x}) - want) < 1e-12);
    }
}

TEST_CASE("semantic similarity matches a scalar loop oracle") {
  DetRng rng(63);
  StereoRig rig = small_rig();
  const int stride = 4;
  const int64_t c = 3, h = 6, w = 8;
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 2.0;
  depth.levels = 6;

  Tensor fl = random_tensor({c, h, w}, rng);
  Tensor fr = random_tensor({c, h, w}, rng);
  Tensor dinit({h, w});
  for (int64_t i = 0; i < dinit.numel(); ++i) dinit[i] = rng.uniform(2.5, 11.0);

  NeighborPattern pat;  // default cross of 5
  Tape t;
  Val s = semantic_similarity(t, t.input(fl), t.input(fr), t.input(dinit), rig, pat, stride);
  const Tensor& sv = t.value(s);
  REQUIRE(sv.shape() == std::vector<int64_t>{pat.count(), h, w});

  auto bilerp = [&](const Tensor& img, int64_t ch, double u, double v) {
    double fx0 = std::floor(u), fy0 = std::floor(v);
    int64_t x0 = int64_t(fx0), y0 = int64_t(fy0);
    double ax = u - fx0, ay = v - fy0;
    auto px = [&](int64_t y, int64_t x) {
      if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
      return img.at({ch, y, x});
    };
    return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
           ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
  };

  for (int m = 0; m < pat.count(); ++m) {
    auto [du, dv] = pat.offsets[size_t(m)];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double zm = dinit.at({clampi(y + dv, 0, h - 1), clampi(x + du, 0, w - 1)});
        double uu = double(x) - rig.fx * rig.baseline_m / zm / stride;
        double want = 0.0;
        for (int64_t ch = 0; ch < c; ++ch)
          want += fl.at({ch, y, x}) * bilerp(fr, ch, uu, double(y));
        CHECK(std::abs(sv.at({m, y, x}) - want) < 1e-12);
      }
  }

  // zero features give zero similarity
  Tape t0;
  Val s0 = semantic_similarity(t0, t0.input(Tensor::zeros({c, h, w})), t0.input(fr),
                               t0.input(dinit), rig, pat, stride);
  for (int64_t i = 0; i < t0.value(s0).numel(); ++i) CHECK(t0.value(s0)[i] == 0.0);
}

TEST_CASE("confidence is the per-neighbor depth variance") {
  const int64_t h = 3, w = 4;
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 2.0;
  depth.levels = 2;  // levels at 2 m and 4 m

  // uniform over the two levels: mean 3, variance 1
  Tensor p = Tensor::full({2, h, w}, 0.5);
  Tape t;
  Val dinit = expected_depth(t, t.input(p), depth);
  for (int64_t i = 0; i < h * w; ++i) CHECK(t.value(dinit)[i] == 3.0);
  Val c = depth_confidence(t, t.input(p), dinit, depth, NeighborPattern::center_only());
  for (int64_t i = 0; i < t.value(c).numel(); ++i)
    CHECK(t.value(c)[i] == doctest::Approx(1.0).epsilon(1e-14));

  // one-hot distribution: zero variance
  Tensor onehot = Tensor::zeros({2, h, w});
  for (int64_t i = 0; i < h * w; ++i) onehot[i] = 1.0;  // level 0 everywhere
  Tape t2;
  Val d2 = expected_depth(t2, t2.input(onehot), depth);
  Val c2 = depth_confidence(t2, t2.input(onehot), d2, depth, NeighborPattern::center_only());
  for (int64_t i = 0; i < t2.value(c2).numel(); ++i)
    CHECK(std::abs(t2.value(c2)[i]) < 1e-14);

  // random case with the full pattern vs loop oracle
  DetRng rng(64);
  DepthGrid dg;
  dg.z_min_m = 3.0;
  dg.step_m = 1.5;
  dg.levels = 7;
  Tensor pr = random_prob(dg.levels, h, w, rng);
  NeighborPattern pat;
  Tape t3;
  Val d3 = expected_depth(t3, t3.input(pr), dg);
  Val c3 = depth_confidence(t3, t3.input(pr), d3, dg, pat);
  const Tensor& cv = t3.value(c3);
  const Tensor& dv = t3.value(d3);
  for (int m = 0; m < pat.count(); ++m) {
    auto [du, dvo] = pat.offsets[size_t(m)];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t ym = clampi(y + dvo, 0, h - 1), xm = clampi(x + du, 0, w - 1);
        double mean = dv.at({ym, xm});
        double want = 0.0;
        for (int64_t i = 0; i < dg.levels; ++i) {
          double diff = dg.depth_of_index(double(i)) - mean;
          want += pr.at({i, ym, xm}) * diff * diff;
        }
        CHECK(std::abs(cv.at({m, y, x}) - want) < 1e-12);
      }
  }
}

TEST_CASE("refinement is a convex recombination") {
  DetRng rng(65);
  const int64_t d = 6, h = 5, w = 6;
  Tensor p = random_prob(d, h, w, rng);

  // center-only pattern: exact identity
  {
    NeighborPattern pat = NeighborPattern::center_only();
    Tape t;
    Val pin = t.input(p);
    Tensor s = random_tensor({1, h, w}, rng);
    Tensor c = random_tensor({1, h, w}, rng, 0.0, 2.0);
    Val pr = refine_depth_probability(t, pin, t.input(s), t.input(c), pat);
    const Tensor& rv = t.value(pr);
    for (int64_t i = 0; i < rv.numel(); ++i) CHECK(rv[i] == p[i]);
  }

  // constant weights: unweighted neighborhood mean
  {
    NeighborPattern pat;
    Tape t;
    Tensor s = Tensor::full({pat.count(), h, w}, 0.7);
    Tensor c = Tensor::full({pat.count(), h, w}, 0.3);
    Val pr = refine_depth_probability(t, t.input(p), t.input(s), t.input(c), pat);
    const Tensor& rv = t.value(pr);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t i = 0; i < d; ++i) {
          double want = 0.0;
          for (auto [du, dv] : pat.offsets)
            want += p.at({i, clampi(y + dv, 0, h - 1), clampi(x + du, 0, w - 1)});
          want /= double(pat.count());
          CHECK(std::abs(rv.at({i, y, x}) - want) < 1e-12);
        }
  }

  // random case: distribution invariants + loop oracle
  {
    NeighborPattern pat;
    Tensor s = random_tensor({pat.count(), h, w}, rng, -2.0, 2.0);
    Tensor c = random_tensor({pat.count(), h, w}, rng, 0.0, 4.0);
    Tape t;
    Val pr = refine_depth_probability(t, t.input(p), t.input(s), t.input(c), pat);
    const Tensor& rv = t.value(pr);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double total = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          CHECK(rv.at({i, y, x}) >= 0.0);
          total += rv.at({i, y, x});
        }
        CHECK(std::abs(total - 1.0) < 1e-10);

        // softmax weights over m, then convex combination of neighbor rows
        double mx = -1e300;
        std::vector<double> wts(size_t(pat.count()));
        for (int m = 0; m < pat.count(); ++m) {
          double logit = s.at({m, y, x}) * (1.0 / (1.0 + std::exp(-c.at({m, y, x}))));
          wts[size_t(m)] = logit;
          mx = std::max(mx, logit);
        }
        double zsum = 0.0;
        for (double& v : wts) {
          v = std::exp(v - mx);
          zsum += v;
        }
        for (double& v : wts) v /= zsum;
        for (int64_t i = 0; i < d; ++i) {
          double want = 0.0;
          for (int m = 0; m < pat.count(); ++m) {
            auto [du, dv] = pat.offsets[size_t(m)];
            want += wts[size_t(m)] *
                    p.at({i, clampi(y + dv, 0, h - 1), clampi(x + du, 0, w - 1)});
          }
          CHECK(std::abs(rv.at({i, y, x}) - want) < 1e-10);
        }
      }
  }
}

TEST_CASE("attention block: zero weights double the input exactly") {
  DetRng rng(66);
  DualFilterConfig cfg;
  cfg.channels = 4;
  std::map<std::string, Tensor> params;
  add_dual_filter_params(params, cfg, 11);
  for (auto& [name, tensor] : params)
    if (name.rfind("filter.attn.", 0) == 0 && name != "filter.attn.alpha")
      for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] = 0.0;

  const int64_t h = 5, w = 6;
  Tensor fl = random_tensor({cfg.channels, h, w}, rng);
  Tensor frw = random_tensor({cfg.channels, h, w}, rng);
  Tape t;
  BoundParams bp = bind_params(t, params, false);
  Val out = enhance_semantic(t, bp, cfg, t.input(fl), t.input(frw));
  const Tensor& ov = t.value(out);
  REQUIRE(ov.same_shape(fl));
  for (int64_t i = 0; i < ov.numel(); ++i) CHECK(ov[i] == 2.0 * fl[i]);
}

TEST_CASE("attention block: alpha zero is rejected and gradients check out") {
  DetRng rng(67);
  DualFilterConfig cfg;
  cfg.channels = 4;
  std::map<std::string, Tensor> params;
  add_dual_filter_params(params, cfg, 12);

  const int64_t h = 4, w = 5;
  Tensor fl = random_tensor({cfg.channels, h, w}, rng);
  Tensor frw = random_tensor({cfg.channels, h, w}, rng);

  {
    std::map<std::string, Tensor> bad = params;
    bad["filter.attn.alpha"] = Tensor::zeros({1});
    Tape t;
    BoundParams bp = bind_params(t, bad, false);
    CHECK_THROWS_AS(enhance_semantic(t, bp, cfg, t.input(fl), t.input(frw)), ContractError);
  }

  // finite differences over each attention parameter
  DetRng wrng(5, 5);
  Tensor readout_w = random_tensor({cfg.channels, h, w}, wrng, 0.1, 1.0);
  for (const std::string& pname :
       {std::string("filter.attn.q.w"), std::string("filter.attn.alpha"),
        std::string("filter.attn.mlp1.w"), std::string("filter.attn.a.b")}) {
    auto loss_of = [&](const Tensor& probe, Tensor* grad) {
      std::map<std::string, Tensor> ps = params;
      ps[pname] = probe;
      Tape t;
      BoundParams bp = bind_params(t, ps, grad != nullptr);
      Val out = enhance_semantic(t, bp, cfg, t.input(fl), t.input(frw));
      Val readout = t.sum_all(t.mul(out, t.constant(readout_w)));
      double v = t.value(readout)[0];
      if (grad) {
        t.backward(readout);
        *grad = t.grad(bp.at(pname));
      }
      return v;
    };
    Tensor at = params.at(pname);
    Tensor analytic;
    loss_of(at, &analytic);
    auto f = [&](const Tensor& probe) { return loss_of(probe, nullptr); };
    GradCheckResult res = finite_difference_check(f, at, analytic, 1e-6);
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("semantic 3d volume masks features by depth probability") {
  DetRng rng(68);
  StereoRig rig = small_rig();
  const int stride = 4;
  DepthGrid depth;
  depth.z_min_m = 2.0;
  depth.step_m = 1.0;
  depth.levels = 8;
  DetectionGrid det;
  det.x_min_m = -1.2;
  det.x_max_m = 1.2;
  det.y_min_m = -0.8;
  det.y_max_m = 0.8;
  det.z_min_m = 2.4;
  det.z_max_m = 7.2;
  det.voxel_m = 0.4;

  const int64_t c = 2, h = 6, w = 8;
  Tensor f = random_tensor({c, h, w}, rng);
  Tensor p = random_prob(depth.levels, h, w, rng);

  Tape t;
  Val out = semantic_3d_volume(t, t.input(f), t.input(p), det, rig, depth, stride);
  const Tensor& ov = t.value(out);
  REQUIRE(ov.shape() == std::vector<int64_t>{c, det.ny(), det.nx(), det.nz()});

  // oracle: lift the explicit masked volume through the shared projection
  Tensor masked({c, depth.levels, h, w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < depth.levels; ++i)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          masked.at({ch, i, y, x}) = f.at({ch, y, x}) * p.at({i, y, x});
  Tape t2;
  Val lifted = lift_to_3d(t2, t2.input(masked), det, rig, depth, stride);
  const Tensor& lv = t2.value(lifted);
  for (int64_t i = 0; i < ov.numel(); ++i) CHECK(ov[i] == lv[i]);
}

TEST_CASE("voxel fusion mixes both volumes linearly") {
  DetRng rng(69);
  DualFilterConfig cfg;
  cfg.channels = 4;
  std::map<std::string, Tensor> params;
  add_dual_filter_params(params, cfg, 13);

  const int64_t ny = 4, nx = 5, nz = 6;
  Tensor geo = random_tensor({cfg.channels, ny, nx, nz}, rng);
  Tensor sem = random_tensor({cfg.channels, ny, nx, nz}, rng);

  // delta kernel on the geo half reproduces the geo volume
  Tensor& fw = params.at("filter.fuse.w");
  for (int64_t i = 0; i < fw.numel(); ++i) fw[i] = 0.0;
  for (int64_t ch = 0; ch < cfg.channels; ++ch) fw.at({ch, ch, 1, 1, 1}) = 1.0;
  Tape t;
  BoundParams bp = bind_params(t, params, false);
  Val fused = fuse_voxels(t, bp, t.input(geo), t.input(Tensor::zeros({cfg.channels, ny, nx, nz})));
  const Tensor& fv = t.value(fused);
  REQUIRE(fv.same_shape(geo));
  for (int64_t i = 0; i < fv.numel(); ++i) CHECK(fv[i] == doctest::Approx(geo[i]).epsilon(1e-12));

  // gradient flows into both inputs under random weights
  std::map<std::string, Tensor> full;
  add_dual_filter_params(full, cfg, 14);
  Tensor gg = geo;
  gg.requires_grad = true;
  Tensor sg = sem;
  sg.requires_grad = true;
  Tape t2;
  BoundParams bp2 = bind_params(t2, full, false);
  Val vg = t2.input(gg), vs = t2.input(sg);
  Val out = fuse_voxels(t2, bp2, vg, vs);
  t2.backward(t2.sum_all(out));
  bool geo_nonzero = false, sem_nonzero = false;
  Tensor gvg = t2.grad(vg), gvs = t2.grad(vs);
  for (int64_t i = 0; i < gvg.numel(); ++i) geo_nonzero |= gvg[i] != 0.0;
  for (int64_t i = 0; i < gvs.numel(); ++i) sem_nonzero |= gvs[i] != 0.0;
  CHECK(geo_nonzero);
  CHECK(sem_nonzero);
}
