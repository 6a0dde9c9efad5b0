#include "evstereo/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>

#include "evstereo/detector.hpp"
#include "evstereo/dual_filter.hpp"
#include "evstereo/errors.hpp"
#include "evstereo/gradcheck.hpp"
#include "evstereo/losses.hpp"
#include "evstereo/params.hpp"
#include "evstereo/rng.hpp"
#include "evstereo/tape.hpp"

namespace evstereo {

const GradCase& GradReport::worst() const {
  contract(!cases.empty(), "empty gradient report");
  size_t w = 0;
  for (size_t i = 1; i < cases.size(); ++i)
    if (cases[i].rel_err > cases[w].rel_err) w = i;
  return cases[w];
}

namespace {

Tensor rand_t(std::vector<int64_t> shape, DetRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Random magnitudes in [lo, hi] with random signs: keeps relu and smooth-L1
// probes away from their kinks.
Tensor rand_signed(std::vector<int64_t> shape, DetRng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

// Weighted scalar readout so every output element carries distinct signal.
Val readout(Tape& t, Val y, uint64_t wseed) {
  if (t.value(y).dim() == 0) return y;
  DetRng rng(wseed, 1);
  Tensor w(t.value(y).shape());
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.1, 1.0);
  return t.sum_all(t.mul(y, t.constant(w)));
}

struct Suite {
  uint64_t seed;
  double tol;
  std::optional<Op> fault;
  double fault_scale;
  GradReport rep;

  DetRng data_rng(const std::string& name) { return DetRng(seed, fnv1a64("data/" + name)); }

  // build must return a scalar; it is re-invoked on fresh tapes for the
  // central differences, so the fault (backward only) never touches them.
  void run(const std::string& name, const Tensor& probe,
           const std::function<Val(Tape&, Val)>& build, int64_t samples = 0,
           double step = 1e-6) {
    Tensor xg = probe;
    xg.requires_grad = true;
    Tape tape;
    if (fault) tape.set_backward_fault(*fault, fault_scale);
    Val x = tape.input(xg);
    Val root = build(tape, x);
    contract(tape.value(root).dim() == 0, "gradient case must end in a scalar: " + name);
    tape.backward(root);
    Tensor analytic = tape.grad(x);

    auto f = [&build](const Tensor& q) {
      Tape fresh;
      Val qx = fresh.input(q);
      return fresh.value(build(fresh, qx))[0];
    };
    DetRng pick(seed, fnv1a64("sample/" + name));
    GradCheckResult r = finite_difference_check(f, probe, analytic, step, samples, &pick);
    bool ok = r.max_rel_err < tol;
    rep.cases.push_back({name, r.max_rel_err, ok});
    rep.all_ok = rep.all_ok && ok;
  }
};

void add_primitive_cases(Suite& s) {
  uint64_t seed = s.seed;
  {
    DetRng rng = s.data_rng("add");
    Tensor c = rand_t({2, 3}, rng);
    s.run("primitive/add", rand_t({2, 3}, rng), [c, seed](Tape& t, Val x) {
      return readout(t, t.add(x, t.constant(c)), seed + 1);
    });
  }
  {
    DetRng rng = s.data_rng("sub");
    Tensor c = rand_t({2, 3}, rng);
    s.run("primitive/sub", rand_t({2, 3}, rng), [c, seed](Tape& t, Val x) {
      return readout(t, t.sub(t.constant(c), x), seed + 2);
    });
  }
  {
    DetRng rng = s.data_rng("mul");
    Tensor c = rand_t({2, 3}, rng);
    s.run("primitive/mul", rand_t({2, 3}, rng), [c, seed](Tape& t, Val x) {
      return readout(t, t.mul(x, t.constant(c)), seed + 3);
    });
  }
  {
    DetRng rng = s.data_rng("scalar_mul");
    s.run("primitive/scalar_mul", rand_t({2, 3}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.scalar_mul(x, -1.7), seed + 4);
    });
  }
  {
    DetRng rng = s.data_rng("reciprocal");
    s.run("primitive/reciprocal", rand_t({2, 3}, rng, 0.6, 1.6), [seed](Tape& t, Val x) {
      return readout(t, t.reciprocal(x), seed + 5);
    });
  }
  {
    DetRng rng = s.data_rng("matmul");
    Tensor r = rand_t({3, 4}, rng);
    Tensor l = rand_t({4, 2}, rng);
    s.run("primitive/matmul_lhs", rand_t({2, 3}, rng), [r, seed](Tape& t, Val x) {
      return readout(t, t.matmul(x, t.constant(r)), seed + 6);
    });
    s.run("primitive/matmul_rhs", rand_t({2, 3}, rng), [l, seed](Tape& t, Val x) {
      return readout(t, t.matmul(t.constant(l), x), seed + 7);
    });
  }
  {
    DetRng rng = s.data_rng("conv2d");
    Tensor x = rand_t({2, 5, 6}, rng);
    Tensor w = rand_t({3, 2, 3, 3}, rng);
    Tensor b = rand_t({3}, rng);
    auto conv = [](Tape& t, Val xx, Val ww, Val bb) {
      return t.conv2d(xx, ww, bb, {1, 2}, {1, 1});
    };
    s.run("primitive/conv2d_input", x, [=](Tape& t, Val p) {
      return readout(t, conv(t, p, t.constant(w), t.constant(b)), seed + 8);
    });
    s.run("primitive/conv2d_weight", w, [=](Tape& t, Val p) {
      return readout(t, conv(t, t.constant(x), p, t.constant(b)), seed + 9);
    });
    s.run("primitive/conv2d_bias", b, [=](Tape& t, Val p) {
      return readout(t, conv(t, t.constant(x), t.constant(w), p), seed + 10);
    });
  }
  {
    DetRng rng = s.data_rng("conv3d");
    Tensor x = rand_t({2, 3, 4, 5}, rng);
    Tensor w = rand_t({2, 2, 2, 3, 3}, rng);
    Tensor b = rand_t({2}, rng);
    auto conv = [](Tape& t, Val xx, Val ww, Val bb) {
      return t.conv3d(xx, ww, bb, {1, 1, 2}, {1, 1, 1});
    };
    s.run("primitive/conv3d_input", x, [=](Tape& t, Val p) {
      return readout(t, conv(t, p, t.constant(w), t.constant(b)), seed + 11);
    });
    s.run("primitive/conv3d_weight", w, [=](Tape& t, Val p) {
      return readout(t, conv(t, t.constant(x), p, t.constant(b)), seed + 12);
    });
    s.run("primitive/conv3d_bias", b, [=](Tape& t, Val p) {
      return readout(t, conv(t, t.constant(x), t.constant(w), p), seed + 13);
    });
  }
  {
    DetRng rng = s.data_rng("relu");
    s.run("primitive/relu", rand_signed({3, 4}, rng, 0.2, 1.2), [seed](Tape& t, Val x) {
      return readout(t, t.relu(x), seed + 14);
    });
  }
  {
    DetRng rng = s.data_rng("sigmoid");
    s.run("primitive/sigmoid", rand_t({3, 4}, rng, -3.0, 3.0), [seed](Tape& t, Val x) {
      return readout(t, t.sigmoid(x), seed + 15);
    });
  }
  {
    DetRng rng = s.data_rng("tanh");
    s.run("primitive/tanh", rand_t({3, 4}, rng, -2.0, 2.0), [seed](Tape& t, Val x) {
      return readout(t, t.tanh(x), seed + 16);
    });
  }
  {
    DetRng rng = s.data_rng("exp");
    s.run("primitive/exp", rand_t({3, 4}, rng, -1.5, 1.5), [seed](Tape& t, Val x) {
      return readout(t, t.exp(x), seed + 17);
    });
  }
  {
    DetRng rng = s.data_rng("log");
    s.run("primitive/log", rand_t({3, 4}, rng, 0.5, 2.5), [seed](Tape& t, Val x) {
      return readout(t, t.log(x), seed + 18);
    });
  }
  {
    DetRng rng = s.data_rng("softmax");
    s.run("primitive/softmax", rand_t({2, 5, 3}, rng, -3.0, 3.0), [seed](Tape& t, Val x) {
      return readout(t, t.softmax(x, 1), seed + 19);
    });
  }
  {
    DetRng rng = s.data_rng("sum_axis");
    s.run("primitive/sum_axis", rand_t({2, 4, 3}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.sum(x, 1), seed + 20);
    });
  }
  {
    DetRng rng = s.data_rng("mean_axis");
    s.run("primitive/mean_axis", rand_t({2, 4, 3}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.mean(x, 2), seed + 21);
    });
  }
  {
    DetRng rng = s.data_rng("sum_all");
    Tensor c = rand_t({3, 5}, rng);
    s.run("primitive/sum_all", rand_t({3, 5}, rng), [c](Tape& t, Val x) {
      return t.sum_all(t.mul(x, t.constant(c)));
    });
  }
  {
    DetRng rng = s.data_rng("concat");
    Tensor c = rand_t({2, 2}, rng);
    s.run("primitive/concat", rand_t({2, 3}, rng), [c, seed](Tape& t, Val x) {
      return readout(t, t.concat({x, t.constant(c)}, 1), seed + 22);
    });
  }
  {
    DetRng rng = s.data_rng("slice");
    s.run("primitive/slice", rand_t({4, 5}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.slice(x, {1, 2}, {2, 3}), seed + 23);
    });
  }
  {
    DetRng rng = s.data_rng("transpose");
    s.run("primitive/transpose", rand_t({2, 3, 4}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.transpose(x, {2, 0, 1}), seed + 24);
    });
  }
  {
    DetRng rng = s.data_rng("reshape");
    s.run("primitive/reshape", rand_t({2, 6}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.reshape(x, {3, 4}), seed + 25);
    });
  }
  {
    DetRng rng = s.data_rng("broadcast_to");
    s.run("primitive/broadcast_to", rand_t({2, 1, 3}, rng), [seed](Tape& t, Val x) {
      return readout(t, t.broadcast_to(x, {2, 4, 3}), seed + 26);
    });
  }
  {
    // Non-integer sample points keep the interpolation off its cell-border
    // kinks for both the image and the coordinate gradients.
    DetRng rng = s.data_rng("bilinear");
    Tensor img = rand_t({2, 5, 6}, rng);
    Tensor coords({2, 7});
    for (int64_t i = 0; i < 7; ++i) {
      coords.at({0, i}) = rng.uniform(0.3, 4.6);
      coords.at({1, i}) = rng.uniform(0.3, 3.6);
    }
    s.run("primitive/bilinear_img", img, [coords, seed](Tape& t, Val x) {
      return readout(t, t.bilinear_sample_2d(x, t.constant(coords)), seed + 27);
    });
    s.run("primitive/bilinear_coords", coords, [img, seed](Tape& t, Val x) {
      return readout(t, t.bilinear_sample_2d(t.constant(img), x), seed + 28);
    });
  }
  {
    DetRng rng = s.data_rng("trilinear");
    Tensor vol = rand_t({2, 3, 4, 5}, rng);
    Tensor coords({3, 6});
    for (int64_t i = 0; i < 6; ++i) {
      coords.at({0, i}) = rng.uniform(0.3, 3.6);
      coords.at({1, i}) = rng.uniform(0.3, 2.6);
      coords.at({2, i}) = rng.uniform(0.3, 1.6);
    }
    s.run("primitive/trilinear_vol", vol, [coords, seed](Tape& t, Val x) {
      return readout(t, t.trilinear_sample_3d(x, t.constant(coords)), seed + 29);
    });
    s.run("primitive/trilinear_coords", coords, [vol, seed](Tape& t, Val x) {
      return readout(t, t.trilinear_sample_3d(t.constant(vol), x), seed + 30);
    });
  }
  {
    // Distinct random values keep the per-region argmax unique.
    DetRng rng = s.data_rng("max_pool_region");
    std::vector<std::vector<int64_t>> regions = {{0, 1, 6, 7}, {13, 14}, {5, 10, 15}, {19}};
    s.run("primitive/max_pool_region", rand_t({2, 4, 5}, rng), [regions, seed](Tape& t, Val x) {
      return readout(t, t.max_pool_region(x, regions), seed + 31);
    });
  }
}

// Probes one named parameter while the rest stay constants.
BoundParams bind_with_probe(Tape& t, const std::map<std::string, Tensor>& m,
                            const std::string& probe_name, Val probe) {
  BoundParams p;
  for (const auto& [n, ten] : m) p.vals[n] = (n == probe_name) ? probe : t.constant(ten);
  return p;
}

void add_module_cases(Suite& s) {
  uint64_t seed = s.seed;
  const int64_t kSamples = 24;

  {
    DualFilterConfig fc;
    fc.channels = 4;
    std::map<std::string, Tensor> m;
    add_dual_filter_params(m, fc, seed + 40);
    DetRng rng = s.data_rng("enhance");
    Tensor f_left = rand_t({4, 5, 6}, rng);
    Tensor f_right = rand_t({4, 5, 6}, rng);
    s.run(
        "module/enhance_semantic/input", f_left,
        [=](Tape& t, Val x) {
          BoundParams p = bind_with_probe(t, m, "", Val{});
          return readout(t, enhance_semantic(t, p, fc, x, t.constant(f_right)), seed + 41);
        },
        kSamples);
    for (const auto& [name, tensor] : m) {
      if (name.rfind("filter.attn.", 0) != 0) continue;
      s.run(
          "module/enhance_semantic/" + name, tensor,
          [=, pname = name](Tape& t, Val x) {
            BoundParams p = bind_with_probe(t, m, pname, x);
            return readout(t, enhance_semantic(t, p, fc, t.constant(f_left), t.constant(f_right)),
                           seed + 42);
          },
          kSamples);
    }

    DetRng rng2 = s.data_rng("fuse");
    Tensor geo = rand_t({4, 3, 4, 5}, rng2);
    Tensor sem = rand_t({4, 3, 4, 5}, rng2);
    s.run(
        "module/fuse_voxels/geo", geo,
        [=](Tape& t, Val x) {
          BoundParams p = bind_with_probe(t, m, "", Val{});
          return readout(t, fuse_voxels(t, p, x, t.constant(sem)), seed + 43);
        },
        kSamples);
    s.run(
        "module/fuse_voxels/sem", sem,
        [=](Tape& t, Val x) {
          BoundParams p = bind_with_probe(t, m, "", Val{});
          return readout(t, fuse_voxels(t, p, t.constant(geo), x), seed + 44);
        },
        kSamples);
    for (const std::string pname : {"filter.fuse.w", "filter.fuse.b"}) {
      s.run(
          "module/fuse_voxels/" + pname, m.at(pname),
          [=](Tape& t, Val x) {
            BoundParams p = bind_with_probe(t, m, pname, x);
            return readout(t, fuse_voxels(t, p, t.constant(geo), t.constant(sem)), seed + 45);
          },
          kSamples);
    }
  }

  {
    DetectorConfig dc;
    dc.channels = 4;
    dc.ny = 4;
    dc.head_mid = 6;
    dc.align_mid = 5;
    std::map<std::string, Tensor> m;
    add_detector_params(m, dc, seed + 50);
    // Zero-initialized heads would hide weight gradients; randomize them.
    DetRng wrng = s.data_rng("head_weights");
    for (const char* n : {"det.cls.w", "det.cls.b", "det.reg.w", "det.reg.b", "det.align1.w",
                          "det.align1.b", "det.align2.w", "det.align2.b"})
      m[n] = rand_t(m.at(n).shape(), wrng, -0.4, 0.4);

    DetRng rng = s.data_rng("dense_head");
    Tensor bev = rand_t({dc.bev_channels(), 5, 4}, rng);
    auto head_readout = [=](Tape& t, BoundParams& p, Val b) {
      DenseHeadOut out = dense_head(t, p, dc, b);
      return t.add(readout(t, out.logits, seed + 51), readout(t, out.offsets, seed + 52));
    };
    s.run(
        "module/dense_head/input", bev,
        [=](Tape& t, Val x) {
          BoundParams p = bind_with_probe(t, m, "", Val{});
          return head_readout(t, p, x);
        },
        kSamples);
    for (const std::string pname :
         {"det.trunk.w", "det.trunk.b", "det.cls.w", "det.cls.b", "det.reg.w", "det.reg.b"}) {
      s.run(
          "module/dense_head/" + pname, m.at(pname),
          [=](Tape& t, Val x) {
            BoundParams p = bind_with_probe(t, m, pname, x);
            return head_readout(t, p, t.constant(bev));
          },
          kSamples);
    }

    DetRng rng2 = s.data_rng("local_align");
    Tensor pooled = rand_t({dc.k_roi * dc.k_roi, dc.bev_channels()}, rng2);
    s.run(
        "module/local_align/input", pooled,
        [=](Tape& t, Val x) {
          BoundParams p = bind_with_probe(t, m, "", Val{});
          return readout(t, local_align_offset(t, p, x), seed + 53);
        },
        kSamples);
    for (const std::string pname :
         {"det.align1.w", "det.align1.b", "det.align2.w", "det.align2.b"}) {
      s.run(
          "module/local_align/" + pname, m.at(pname),
          [=](Tape& t, Val x) {
            BoundParams p = bind_with_probe(t, m, pname, x);
            return readout(t, local_align_offset(t, p, t.constant(pooled)), seed + 54);
          },
          kSamples);
    }
  }
}

void add_loss_cases(Suite& s) {
  {
    // Residuals land in the quadratic and linear branches but never on the
    // |x| = beta kink or at zero.
    DetRng rng = s.data_rng("depth");
    Tensor gt = rand_t({6, 8}, rng, 3.0, 7.0);
    Tensor mask({6, 8});
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    auto offset = [&rng](const Tensor& base) {
      Tensor out = base;
      for (int64_t i = 0; i < out.numel(); ++i) {
        double mag = rng.uniform() < 0.5 ? rng.uniform(0.2, 0.7) : rng.uniform(1.3, 1.8);
        out[i] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * mag;
      }
      return out;
    };
    Tensor init_pred = offset(gt);
    Tensor refined_pred = offset(gt);
    s.run("loss/depth_init", init_pred, [=](Tape& t, Val x) {
      return depth_losses(t, x, t.constant(refined_pred), gt, mask).init;
    });
    s.run("loss/depth_refine", refined_pred, [=](Tape& t, Val x) {
      return depth_losses(t, t.constant(init_pred), x, gt, mask).refine;
    });
  }
  {
    DetRng rng = s.data_rng("aux");
    Tensor target = center_heatmap_target(6, 8, {{2.3, 3.1, 1.2}, {6.2, 1.4, 1.0}});
    s.run("loss/aux_2d", rand_t({1, 6, 8}, rng, -2.0, 2.0),
          [=](Tape& t, Val x) { return aux_2d_loss(t, x, target); });
  }
  {
    DetRng rng = s.data_rng("focal");
    Tensor labels({4, 5, 3});
    for (int64_t i = 0; i < labels.numel(); ++i) {
      double u = rng.uniform();
      labels[i] = u < 0.2 ? 1.0 : (u < 0.85 ? 0.0 : -1.0);
    }
    s.run("loss/cls_focal", rand_t({4, 5, 3}, rng, -2.5, 2.5),
          [=](Tape& t, Val x) { return focal_cls_loss(t, x, labels, 0.25, 2.0); });
  }
  {
    DetectionGrid dg;
    dg.x_min_m = -1.6;
    dg.x_max_m = 1.6;
    dg.z_min_m = 2.0;
    dg.z_max_m = 4.4;
    dg.voxel_m = 0.4;
    AnchorSet anchors = make_anchor_set();
    DetectorConfig dc;
    std::vector<GtBox> gt = {{{0.2, 0.47, 3.4, 1.79, 1.86, 4.28, 0.15}, 0, Difficulty::easy},
                             {{-0.6, 0.6, 3.0, 1.73, 0.6, 0.8, -0.2}, 1, Difficulty::easy}};
    AnchorAssignment assignment = assign_anchors(anchors, dg, dc, gt);
    DetRng rng = s.data_rng("reg_global");
    Tensor offsets = rand_t({anchors.per_cell() * 7, dg.nx(), dg.nz()}, rng, -0.5, 0.5);
    s.run(
        "loss/reg_global", offsets,
        [=](Tape& t, Val x) { return global_regression_loss(t, x, anchors, dg, gt, assignment); },
        48);
  }
  {
    DetRng rng = s.data_rng("reg_local");
    std::vector<Box7> global_boxes = {{0.3, 0.5, 3.2, 1.7, 1.8, 4.1, 0.2},
                                      {-0.5, 0.6, 2.8, 1.7, 0.65, 0.85, -0.1}};
    std::vector<Box7> gt_boxes = {{0.45, 0.42, 3.05, 1.82, 1.9, 4.3, 0.35},
                                  {-0.38, 0.55, 2.95, 1.66, 0.6, 0.8, 0.08}};
    Tensor probe = rand_t({7}, rng, -0.4, 0.4);
    Tensor other = rand_t({7}, rng, -0.4, 0.4);
    s.run("loss/reg_local", probe, [=](Tape& t, Val x) {
      return local_regression_loss(t, {x, t.input(other)}, global_boxes, gt_boxes);
    });
  }
}

}  // namespace

GradReport run_gradient_suite(uint64_t seed, double tolerance, const std::string& fault_op,
                              double fault_scale) {
  Suite s;
  s.seed = seed;
  s.tol = tolerance;
  s.fault_scale = fault_scale;
  if (!fault_op.empty()) {
    std::optional<Op> op = op_from_name(fault_op);
    contract(op.has_value(), "unknown op for fault injection: " + fault_op);
    s.fault = op;
  }
  add_primitive_cases(s);
  add_module_cases(s);
  add_loss_cases(s);
  return s.rep;
}

}  // namespace evstereo
