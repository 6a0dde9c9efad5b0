#include "evstereo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "evstereo/errors.hpp"
#include "evstereo/kernels.hpp"

namespace evstereo {

namespace {

const std::map<Op, const char*>& op_names() {
  static const std::map<Op, const char*> m = {
      {Op::leaf, "leaf"},
      {Op::add, "add"},
      {Op::sub, "sub"},
      {Op::mul, "mul"},
      {Op::scalar_mul, "scalar_mul"},
      {Op::reciprocal, "reciprocal"},
      {Op::matmul, "matmul"},
      {Op::conv2d, "conv2d"},
      {Op::conv3d, "conv3d"},
      {Op::relu, "relu"},
      {Op::sigmoid, "sigmoid"},
      {Op::tanh_op, "tanh"},
      {Op::exp_op, "exp"},
      {Op::log_op, "log"},
      {Op::softmax_axis, "softmax_axis"},
      {Op::sum_axis, "sum_axis"},
      {Op::mean_axis, "mean_axis"},
      {Op::concat_axis, "concat_axis"},
      {Op::slice, "slice"},
      {Op::transpose, "transpose"},
      {Op::reshape, "reshape"},
      {Op::broadcast_to, "broadcast_to"},
      {Op::bilinear_sample_2d, "bilinear_sample_2d"},
      {Op::trilinear_sample_3d, "trilinear_sample_3d"},
      {Op::max_pool_region, "max_pool_region"},
  };
  return m;
}

// logical (outer, axis, inner) view of a row-major tensor
struct AxisView {
  int64_t outer = 1, axis = 1, inner = 1;
};

AxisView axis_view(const std::vector<int64_t>& shape, int64_t axis) {
  contract(axis >= 0 && axis < int64_t(shape.size()), "axis out of range for shape " + shape_str(shape));
  AxisView v;
  for (int64_t i = 0; i < axis; ++i) v.outer *= shape[size_t(i)];
  v.axis = shape[size_t(axis)];
  for (int64_t i = axis + 1; i < int64_t(shape.size()); ++i) v.inner *= shape[size_t(i)];
  return v;
}

Tensor transpose_tensor(const Tensor& t, const std::vector<int64_t>& perm) {
  std::vector<int64_t> out_shape(perm.size());
  for (size_t j = 0; j < perm.size(); ++j) out_shape[j] = t.shape()[size_t(perm[j])];
  Tensor out(out_shape);
  auto in_st = strides_of(t.shape());
  auto out_shape_v = out.shape();
  int64_t rank = t.dim();
  std::vector<int64_t> idx(size_t(rank), 0);
  const double* src = t.data();
  double* dst = out.data();
  for (int64_t o = 0; o < out.numel(); ++o) {
    int64_t in_off = 0;
    for (int64_t j = 0; j < rank; ++j) in_off += idx[size_t(j)] * in_st[size_t(perm[size_t(j)])];
    dst[o] = src[in_off];
    for (int64_t j = rank - 1; j >= 0; --j) {
      if (++idx[size_t(j)] < out_shape_v[size_t(j)]) break;
      idx[size_t(j)] = 0;
    }
  }
  return out;
}

Tensor slice_tensor(const Tensor& t, const std::vector<int64_t>& starts,
                    const std::vector<int64_t>& sizes) {
  Tensor out(sizes);
  if (out.numel() == 0) return out;
  auto in_st = strides_of(t.shape());
  int64_t rank = t.dim();
  int64_t row = rank == 0 ? 1 : sizes.back();
  int64_t nrows = out.numel() / std::max<int64_t>(row, 1);
  std::vector<int64_t> idx(size_t(rank), 0);
  for (int64_t r = 0; r < nrows; ++r) {
    int64_t in_off = 0;
    for (int64_t j = 0; j < rank; ++j) in_off += (starts[size_t(j)] + idx[size_t(j)]) * in_st[size_t(j)];
    std::memcpy(out.data() + r * row, t.data() + in_off, size_t(row) * sizeof(double));
    for (int64_t j = rank - 2; j >= 0; --j) {
      if (++idx[size_t(j)] < sizes[size_t(j)]) break;
      idx[size_t(j)] = 0;
    }
  }
  return out;
}

// scatter-add src into dst at the given region (dst is the larger tensor)
void paste_add(Tensor& dst, const Tensor& src, const std::vector<int64_t>& starts) {
  if (src.numel() == 0) return;
  auto dst_st = strides_of(dst.shape());
  int64_t rank = dst.dim();
  const auto& sizes = src.shape();
  int64_t row = rank == 0 ? 1 : sizes.back();
  int64_t nrows = src.numel() / std::max<int64_t>(row, 1);
  std::vector<int64_t> idx(size_t(rank), 0);
  for (int64_t r = 0; r < nrows; ++r) {
    int64_t off = 0;
    for (int64_t j = 0; j < rank; ++j) off += (starts[size_t(j)] + idx[size_t(j)]) * dst_st[size_t(j)];
    const double* s = src.data() + r * row;
    double* d = dst.data() + off;
    for (int64_t i = 0; i < row; ++i) d[i] += s[i];
    for (int64_t j = rank - 2; j >= 0; --j) {
      if (++idx[size_t(j)] < sizes[size_t(j)]) break;
      idx[size_t(j)] = 0;
    }
  }
}

kernels::Conv2Dims conv2_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws,
                              const std::array<int64_t, 2>& stride, const std::array<int64_t, 2>& pad) {
  contract(xs.size() == 3, "conv2d: input must be (cin,h,w), got " + shape_str(xs));
  contract(ws.size() == 4, "conv2d: weight must be (cout,cin,kh,kw), got " + shape_str(ws));
  contract(ws[1] == xs[0], "conv2d: weight cin " + std::to_string(ws[1]) +
                               " does not match input cin " + std::to_string(xs[0]));
  contract(stride[0] >= 1 && stride[1] >= 1, "conv2d: stride must be >= 1");
  contract(pad[0] >= 0 && pad[1] >= 0, "conv2d: padding must be >= 0");
  kernels::Conv2Dims d{};
  d.cin = xs[0];
  d.h = xs[1];
  d.w = xs[2];
  d.cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.sy = stride[0];
  d.sx = stride[1];
  d.py = pad[0];
  d.px = pad[1];
  d.oh = (d.h + 2 * d.py - d.kh) / d.sy + 1;
  d.ow = (d.w + 2 * d.px - d.kw) / d.sx + 1;
  contract(d.h + 2 * d.py >= d.kh && d.w + 2 * d.px >= d.kw,
           "conv2d: kernel larger than padded input");
  return d;
}

kernels::Conv3Dims conv3_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws,
                              const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad) {
  contract(xs.size() == 4, "conv3d: input must be (cin,d0,d1,d2), got " + shape_str(xs));
  contract(ws.size() == 5, "conv3d: weight must be (cout,cin,k0,k1,k2), got " + shape_str(ws));
  contract(ws[1] == xs[0], "conv3d: weight cin " + std::to_string(ws[1]) +
                               " does not match input cin " + std::to_string(xs[0]));
  for (int i = 0; i < 3; ++i) {
    contract(stride[size_t(i)] >= 1, "conv3d: stride must be >= 1");
    contract(pad[size_t(i)] >= 0, "conv3d: padding must be >= 0");
  }
  kernels::Conv3Dims d{};
  d.cin = xs[0];
  d.d0 = xs[1];
  d.d1 = xs[2];
  d.d2 = xs[3];
  d.cout = ws[0];
  d.k0 = ws[2];
  d.k1 = ws[3];
  d.k2 = ws[4];
  d.s0 = stride[0];
  d.s1 = stride[1];
  d.s2 = stride[2];
  d.p0 = pad[0];
  d.p1 = pad[1];
  d.p2 = pad[2];
  d.o0 = (d.d0 + 2 * d.p0 - d.k0) / d.s0 + 1;
  d.o1 = (d.d1 + 2 * d.p1 - d.k1) / d.s1 + 1;
  d.o2 = (d.d2 + 2 * d.p2 - d.k2) / d.s2 + 1;
  contract(d.d0 + 2 * d.p0 >= d.k0 && d.d1 + 2 * d.p1 >= d.k1 && d.d2 + 2 * d.p2 >= d.k2,
           "conv3d: kernel larger than padded input");
  return d;
}

}  // namespace

const char* op_name(Op op) { return op_names().at(op); }

std::optional<Op> op_from_name(const std::string& name) {
  for (const auto& [op, n] : op_names())
    if (name == n) return op;
  return std::nullopt;
}

const std::vector<Op>& all_primitive_ops() {
  static const std::vector<Op> ops = [] {
    std::vector<Op> v;
    for (const auto& [op, n] : op_names())
      if (op != Op::leaf) v.push_back(op);
    return v;
  }();
  return ops;
}

Val Tape::input(Tensor t) {
  bool rg = t.requires_grad;
  Val v = record(Op::leaf, {}, {}, std::move(t));
  nodes_.back().requires_grad = rg;
  return v;
}

Val Tape::constant(Tensor t) {
  t.requires_grad = false;
  return record(Op::leaf, {}, {}, std::move(t));
}

Val Tape::record(Op op, std::vector<int32_t> inputs, OpAttrs attrs, Tensor value) {
  bool rg = false;
  for (int32_t i : inputs) rg = rg || nodes_[size_t(i)].requires_grad;
  // coords / region inputs of samplers are not differentiable
  if (op == Op::bilinear_sample_2d || op == Op::trilinear_sample_3d)
    rg = nodes_[size_t(inputs[0])].requires_grad;
  TapeNode n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  n.value = std::move(value);
  n.requires_grad = rg;
  nodes_.push_back(std::move(n));
  contract(nodes_.size() < size_t(INT32_MAX), "tape: node count overflow");
  return Val{int32_t(nodes_.size() - 1)};
}

const Tensor& Tape::value(Val v) const { return node(v).value; }

const TapeNode& Tape::node(Val v) const {
  contract(v.id >= 0 && v.id < int64_t(nodes_.size()), "tape: invalid node handle");
  return nodes_[size_t(v.id)];
}

Tensor Tape::grad(Val v) const {
  const TapeNode& n = node(v);
  if (size_t(v.id) < grads_.size() && grads_[size_t(v.id)].numel() > 0) return grads_[size_t(v.id)];
  return Tensor::zeros(n.value.shape());
}

Val Tape::apply(Op op, const std::vector<Val>& inputs, const OpAttrs& attrs) {
  contract(op != Op::leaf, "apply: leaf is not a primitive");
  std::vector<int32_t> ids;
  ids.reserve(inputs.size());
  for (Val v : inputs) {
    contract(v.id >= 0 && v.id < int64_t(nodes_.size()), "apply: invalid input handle");
    ids.push_back(v.id);
  }
  Tensor out = forward_compute(op, ids, attrs);
  return record(op, std::move(ids), attrs, std::move(out));
}

Tensor Tape::forward_compute(Op op, const std::vector<int32_t>& inputs, const OpAttrs& attrs) const {
  auto in = [&](size_t i) -> const Tensor& { return nodes_[size_t(inputs[i])].value; };
  auto expect_inputs = [&](size_t n) {
    contract(inputs.size() == n, std::string(op_name(op)) + ": expects " + std::to_string(n) +
                                     " inputs, got " + std::to_string(inputs.size()));
  };

  switch (op) {
    case Op::leaf:
      contract(false, "leaf has no forward");
      return {};

    case Op::add:
    case Op::sub:
    case Op::mul: {
      expect_inputs(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      contract(a.same_shape(b), std::string(op_name(op)) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      Tensor out(a.shape());
      const double* pa = a.data();
      const double* pb = b.data();
      double* po = out.data();
      int64_t n = a.numel();
      if (op == Op::add)
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      else if (op == Op::sub)
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      else
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      return out;
    }

    case Op::scalar_mul: {
      expect_inputs(1);
      Tensor out(in(0).shape());
      const double* pa = in(0).data();
      double* po = out.data();
      for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * attrs.scalar;
      return out;
    }

    case Op::reciprocal: {
      expect_inputs(1);
      Tensor out(in(0).shape());
      const double* pa = in(0).data();
      double* po = out.data();
      for (int64_t i = 0; i < out.numel(); ++i) {
        contract(pa[i] != 0.0, "reciprocal: division by zero");
        po[i] = 1.0 / pa[i];
      }
      return out;
    }

    case Op::matmul: {
      expect_inputs(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      contract(a.dim() == 2 && b.dim() == 2, "matmul: operands must be rank 2");
      contract(a.size(1) == b.size(0), "matmul: inner dims " + shape_str(a.shape()) + " vs " +
                                           shape_str(b.shape()));
      Tensor out({a.size(0), b.size(1)});
      kernels::matmul_fwd(a.data(), b.data(), out.data(), a.size(0), a.size(1), b.size(1));
      return out;
    }

    case Op::conv2d: {
      expect_inputs(3);
      auto d = conv2_dims(in(0).shape(), in(1).shape(), attrs.stride2, attrs.pad2);
      contract(in(2).dim() == 1 && in(2).size(0) == d.cout,
               "conv2d: bias must be (cout), got " + shape_str(in(2).shape()));
      Tensor out({d.cout, d.oh, d.ow});
      kernels::conv2d_fwd(in(0).data(), in(1).data(), in(2).data(), out.data(), d);
      return out;
    }

    case Op::conv3d: {
      expect_inputs(3);
      auto d = conv3_dims(in(0).shape(), in(1).shape(), attrs.stride3, attrs.pad3);
      contract(in(2).dim() == 1 && in(2).size(0) == d.cout,
               "conv3d: bias must be (cout), got " + shape_str(in(2).shape()));
      Tensor out({d.cout, d.o0, d.o1, d.o2});
      kernels::conv3d_fwd(in(0).data(), in(1).data(), in(2).data(), out.data(), d);
      return out;
    }

    case Op::relu:
    case Op::sigmoid:
    case Op::tanh_op:
    case Op::exp_op:
    case Op::log_op: {
      expect_inputs(1);
      Tensor out(in(0).shape());
      const double* pa = in(0).data();
      double* po = out.data();
      int64_t n = out.numel();
      switch (op) {
        case Op::relu:
          for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
          break;
        case Op::sigmoid:
          for (int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pa[i]));
          break;
        case Op::tanh_op:
          for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
          break;
        case Op::exp_op:
          for (int64_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
          break;
        default:
          for (int64_t i = 0; i < n; ++i) {
            contract(pa[i] > 0.0, "log: argument must be positive");
            po[i] = std::log(pa[i]);
          }
      }
      return out;
    }

    case Op::softmax_axis: {
      expect_inputs(1);
      auto v = axis_view(in(0).shape(), attrs.axis);
      Tensor out(in(0).shape());
      kernels::softmax_mid(in(0).data(), out.data(), v.outer, v.axis, v.inner);
      return out;
    }

    case Op::sum_axis:
    case Op::mean_axis: {
      expect_inputs(1);
      const Tensor& a = in(0);
      auto v = axis_view(a.shape(), attrs.axis);
      contract(op != Op::mean_axis || v.axis > 0, "mean_axis: empty axis");
      std::vector<int64_t> out_shape;
      for (int64_t i = 0; i < a.dim(); ++i)
        if (i != attrs.axis) out_shape.push_back(a.size(i));
      Tensor out(out_shape);
      const double* pa = a.data();
      double* po = out.data();
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
          double acc = 0.0;
          for (int64_t k = 0; k < v.axis; ++k) acc += pa[(o * v.axis + k) * v.inner + i];
          po[o * v.inner + i] = op == Op::mean_axis ? acc / double(v.axis) : acc;
        }
      return out;
    }

    case Op::concat_axis: {
      contract(!inputs.empty(), "concat_axis: needs at least one input");
      const Tensor& first = in(0);
      int64_t rank = first.dim();
      contract(attrs.axis >= 0 && attrs.axis < rank, "concat_axis: axis out of range");
      int64_t total = 0;
      for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        contract(t.dim() == rank, "concat_axis: rank mismatch");
        for (int64_t j = 0; j < rank; ++j)
          contract(j == attrs.axis || t.size(j) == first.size(j),
                   "concat_axis: shape mismatch " + shape_str(t.shape()) + " vs " +
                       shape_str(first.shape()));
        total += t.size(attrs.axis);
      }
      std::vector<int64_t> out_shape = first.shape();
      out_shape[size_t(attrs.axis)] = total;
      Tensor out(out_shape);
      auto vo = axis_view(out_shape, attrs.axis);
      int64_t off = 0;
      for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        auto vi = axis_view(t.shape(), attrs.axis);
        for (int64_t o = 0; o < vi.outer; ++o)
          std::memcpy(out.data() + (o * vo.axis + off) * vo.inner,
                      t.data() + o * vi.axis * vi.inner,
                      size_t(vi.axis * vi.inner) * sizeof(double));
        off += vi.axis;
      }
      return out;
    }

    case Op::slice: {
      expect_inputs(1);
      const Tensor& a = in(0);
      contract(int64_t(attrs.starts.size()) == a.dim() && int64_t(attrs.sizes.size()) == a.dim(),
               "slice: starts/sizes rank mismatch");
      for (int64_t j = 0; j < a.dim(); ++j) {
        int64_t s = attrs.starts[size_t(j)], n = attrs.sizes[size_t(j)];
        contract(s >= 0 && n >= 0 && s + n <= a.size(j),
                 "slice: out of bounds on axis " + std::to_string(j));
      }
      return slice_tensor(a, attrs.starts, attrs.sizes);
    }

    case Op::transpose: {
      expect_inputs(1);
      const Tensor& a = in(0);
      contract(int64_t(attrs.perm.size()) == a.dim(), "transpose: perm rank mismatch");
      std::vector<bool> seen(size_t(a.dim()), false);
      for (int64_t p : attrs.perm) {
        contract(p >= 0 && p < a.dim() && !seen[size_t(p)], "transpose: invalid permutation");
        seen[size_t(p)] = true;
      }
      return transpose_tensor(a, attrs.perm);
    }

    case Op::reshape: {
      expect_inputs(1);
      const Tensor& a = in(0);
      contract(numel_of(attrs.target_shape) == a.numel(),
               "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                   shape_str(attrs.target_shape));
      Tensor out(attrs.target_shape);
      std::memcpy(out.data(), a.data(), size_t(a.numel()) * sizeof(double));
      return out;
    }

    case Op::broadcast_to: {
      expect_inputs(1);
      const Tensor& a = in(0);
      contract(int64_t(attrs.target_shape.size()) == a.dim(),
               "broadcast_to: rank must match (reshape first)");
      for (int64_t j = 0; j < a.dim(); ++j)
        contract(a.size(j) == attrs.target_shape[size_t(j)] || a.size(j) == 1,
                 "broadcast_to: dim " + std::to_string(j) + " of " + shape_str(a.shape()) +
                     " cannot broadcast to " + shape_str(attrs.target_shape));
      Tensor out(attrs.target_shape);
      auto in_st = strides_of(a.shape());
      auto out_shape = out.shape();
      int64_t rank = a.dim();
      std::vector<int64_t> idx(size_t(rank), 0);
      double* po = out.data();
      const double* pa = a.data();
      for (int64_t o = 0; o < out.numel(); ++o) {
        int64_t off = 0;
        for (int64_t j = 0; j < rank; ++j)
          if (a.size(j) != 1) off += idx[size_t(j)] * in_st[size_t(j)];
        po[o] = pa[off];
        for (int64_t j = rank - 1; j >= 0; --j) {
          if (++idx[size_t(j)] < out_shape[size_t(j)]) break;
          idx[size_t(j)] = 0;
        }
      }
      return out;
    }

    case Op::bilinear_sample_2d: {
      expect_inputs(2);
      const Tensor& img = in(0);
      const Tensor& coords = in(1);
      contract(img.dim() == 3, "bilinear_sample_2d: image must be (c,h,w)");
      contract(coords.dim() >= 1 && coords.size(0) == 2,
               "bilinear_sample_2d: coords must be (2,...)");
      int64_t npts = coords.numel() / 2;
      std::vector<int64_t> out_shape{img.size(0)};
      for (int64_t j = 1; j < coords.dim(); ++j) out_shape.push_back(coords.size(j));
      Tensor out(out_shape);
      kernels::bilinear_gather(img.data(), img.size(0), img.size(1), img.size(2), coords.data(),
                               npts, out.data());
      return out;
    }

    case Op::trilinear_sample_3d: {
      expect_inputs(2);
      const Tensor& vol = in(0);
      const Tensor& coords = in(1);
      contract(vol.dim() == 4, "trilinear_sample_3d: volume must be (c,d,h,w)");
      contract(coords.dim() >= 1 && coords.size(0) == 3,
               "trilinear_sample_3d: coords must be (3,...)");
      int64_t npts = coords.numel() / 3;
      std::vector<int64_t> out_shape{vol.size(0)};
      for (int64_t j = 1; j < coords.dim(); ++j) out_shape.push_back(coords.size(j));
      Tensor out(out_shape);
      kernels::trilinear_gather(vol.data(), vol.size(0), vol.size(1), vol.size(2), vol.size(3),
                                coords.data(), npts, out.data());
      return out;
    }

    case Op::max_pool_region: {
      expect_inputs(1);
      const Tensor& g = in(0);
      contract(g.dim() == 3, "max_pool_region: grid must be (c,h,w)");
      int64_t cells = g.size(1) * g.size(2);
      for (const auto& region : attrs.regions)
        for (int64_t ix : region)
          contract(ix >= 0 && ix < cells, "max_pool_region: cell index out of range");
      int64_t nr = int64_t(attrs.regions.size());
      int64_t c = g.size(0);
      Tensor out({nr, c});
      for (int64_t r = 0; r < nr; ++r) {
        const auto& region = attrs.regions[size_t(r)];
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* p = g.data() + ch * cells;
          double best = 0.0;
          bool first = true;
          for (int64_t ix : region) {
            if (first || p[ix] > best) best = p[ix];
            first = false;
          }
          out[r * c + ch] = region.empty() ? 0.0 : best;
        }
      }
      return out;
    }
  }
  contract(false, "unknown op");
  return {};
}

void Tape::accumulate(int32_t id, Tensor g, Op source_op) {
  if (!nodes_[size_t(id)].requires_grad) return;
  if (fault_op_ && *fault_op_ == source_op)
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= fault_scale_;
  Tensor& acc = grads_[size_t(id)];
  if (acc.numel() == 0 && g.numel() > 0) {
    acc = std::move(g);
    return;
  }
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

void Tape::backward(Val root) {
  const TapeNode& r = node(root);
  contract(r.value.numel() == 1, "backward: root must be a scalar");
  contract(r.requires_grad, "backward: root does not depend on any differentiable input");
  grads_.assign(nodes_.size(), Tensor());
  grads_[size_t(root.id)] = Tensor::full(r.value.shape(), 1.0);
  for (int32_t i = root.id; i >= 0; --i) {
    const TapeNode& n = nodes_[size_t(i)];
    if (n.op == Op::leaf || !n.requires_grad) continue;
    if (grads_[size_t(i)].numel() == 0) continue;
    backward_node(i);
  }
}

void Tape::backward_node(int32_t id) {
  const TapeNode& n = nodes_[size_t(id)];
  const Tensor& g = grads_[size_t(id)];
  auto in_val = [&](size_t i) -> const Tensor& { return nodes_[size_t(n.inputs[i])].value; };
  auto in_id = [&](size_t i) { return n.inputs[i]; };

  switch (n.op) {
    case Op::leaf:
      return;

    case Op::add: {
      accumulate(in_id(0), g, n.op);
      accumulate(in_id(1), g, n.op);
      return;
    }

    case Op::sub: {
      accumulate(in_id(0), g, n.op);
      Tensor gb(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] = -g[i];
      accumulate(in_id(1), std::move(gb), n.op);
      return;
    }

    case Op::mul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      Tensor ga(g.shape()), gb(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) {
        ga[i] = g[i] * b[i];
        gb[i] = g[i] * a[i];
      }
      accumulate(in_id(0), std::move(ga), n.op);
      accumulate(in_id(1), std::move(gb), n.op);
      return;
    }

    case Op::scalar_mul: {
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * n.attrs.scalar;
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::reciprocal: {
      const Tensor& y = n.value;
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = -g[i] * y[i] * y[i];
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::matmul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      int64_t nn = a.size(0), kk = a.size(1), mm = b.size(1);
      Tensor ga(a.shape()), gb(b.shape());
      kernels::matmul_bwd_a(g.data(), b.data(), ga.data(), nn, kk, mm);
      kernels::matmul_bwd_b(g.data(), a.data(), gb.data(), nn, kk, mm);
      accumulate(in_id(0), std::move(ga), n.op);
      accumulate(in_id(1), std::move(gb), n.op);
      return;
    }

    case Op::conv2d: {
      auto d = conv2_dims(in_val(0).shape(), in_val(1).shape(), n.attrs.stride2, n.attrs.pad2);
      Tensor gx(in_val(0).shape()), gw(in_val(1).shape()), gb(in_val(2).shape());
      kernels::conv2d_bwd_input(g.data(), in_val(1).data(), gx.data(), d);
      kernels::conv2d_bwd_weight(g.data(), in_val(0).data(), gw.data(), d);
      kernels::conv2d_bwd_bias(g.data(), gb.data(), d);
      accumulate(in_id(0), std::move(gx), n.op);
      accumulate(in_id(1), std::move(gw), n.op);
      accumulate(in_id(2), std::move(gb), n.op);
      return;
    }

    case Op::conv3d: {
      auto d = conv3_dims(in_val(0).shape(), in_val(1).shape(), n.attrs.stride3, n.attrs.pad3);
      Tensor gx(in_val(0).shape()), gw(in_val(1).shape()), gb(in_val(2).shape());
      kernels::conv3d_bwd_input(g.data(), in_val(1).data(), gx.data(), d);
      kernels::conv3d_bwd_weight(g.data(), in_val(0).data(), gw.data(), d);
      kernels::conv3d_bwd_bias(g.data(), gb.data(), d);
      accumulate(in_id(0), std::move(gx), n.op);
      accumulate(in_id(1), std::move(gw), n.op);
      accumulate(in_id(2), std::move(gb), n.op);
      return;
    }

    case Op::relu: {
      const Tensor& x = in_val(0);
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::sigmoid: {
      const Tensor& y = n.value;
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::tanh_op: {
      const Tensor& y = n.value;
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::exp_op: {
      const Tensor& y = n.value;
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * y[i];
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::log_op: {
      const Tensor& x = in_val(0);
      Tensor ga(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] / x[i];
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::softmax_axis: {
      const Tensor& y = n.value;
      auto v = axis_view(y.shape(), n.attrs.axis);
      Tensor ga(y.shape());
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
          double dot = 0.0;
          for (int64_t k = 0; k < v.axis; ++k) {
            int64_t ix = (o * v.axis + k) * v.inner + i;
            dot += g[ix] * y[ix];
          }
          for (int64_t k = 0; k < v.axis; ++k) {
            int64_t ix = (o * v.axis + k) * v.inner + i;
            ga[ix] = y[ix] * (g[ix] - dot);
          }
        }
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::sum_axis:
    case Op::mean_axis: {
      const Tensor& x = in_val(0);
      auto v = axis_view(x.shape(), n.attrs.axis);
      double scale = n.op == Op::mean_axis ? 1.0 / double(v.axis) : 1.0;
      Tensor ga(x.shape());
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t k = 0; k < v.axis; ++k)
          for (int64_t i = 0; i < v.inner; ++i)
            ga[(o * v.axis + k) * v.inner + i] = g[o * v.inner + i] * scale;
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::concat_axis: {
      auto vo = axis_view(n.value.shape(), n.attrs.axis);
      int64_t off = 0;
      for (size_t part = 0; part < n.inputs.size(); ++part) {
        const Tensor& x = nodes_[size_t(n.inputs[part])].value;
        auto vi = axis_view(x.shape(), n.attrs.axis);
        Tensor gp(x.shape());
        for (int64_t o = 0; o < vi.outer; ++o)
          std::memcpy(gp.data() + o * vi.axis * vi.inner,
                      g.data() + (o * vo.axis + off) * vo.inner,
                      size_t(vi.axis * vi.inner) * sizeof(double));
        off += vi.axis;
        accumulate(n.inputs[part], std::move(gp), n.op);
      }
      return;
    }

    case Op::slice: {
      Tensor ga(in_val(0).shape());
      paste_add(ga, g, n.attrs.starts);
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::transpose: {
      std::vector<int64_t> inv(n.attrs.perm.size());
      for (size_t j = 0; j < n.attrs.perm.size(); ++j) inv[size_t(n.attrs.perm[j])] = int64_t(j);
      accumulate(in_id(0), transpose_tensor(g, inv), n.op);
      return;
    }

    case Op::reshape: {
      Tensor ga(in_val(0).shape());
      std::memcpy(ga.data(), g.data(), size_t(g.numel()) * sizeof(double));
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::broadcast_to: {
      const Tensor& x = in_val(0);
      Tensor ga(x.shape());
      auto in_st = strides_of(x.shape());
      auto out_shape = n.value.shape();
      int64_t rank = x.dim();
      std::vector<int64_t> idx(size_t(rank), 0);
      for (int64_t o = 0; o < g.numel(); ++o) {
        int64_t off = 0;
        for (int64_t j = 0; j < rank; ++j)
          if (x.size(j) != 1) off += idx[size_t(j)] * in_st[size_t(j)];
        ga[off] += g[o];
        for (int64_t j = rank - 1; j >= 0; --j) {
          if (++idx[size_t(j)] < out_shape[size_t(j)]) break;
          idx[size_t(j)] = 0;
        }
      }
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }

    case Op::bilinear_sample_2d: {
      const Tensor& img = in_val(0);
      const Tensor& coords = in_val(1);
      const int64_t npts = coords.numel() / 2;
      Tensor ga(img.shape());
      kernels::bilinear_scatter(g.data(), img.size(0), img.size(1), img.size(2), coords.data(),
                                npts, ga.data());
      accumulate(in_id(0), std::move(ga), n.op);
      if (nodes_[size_t(in_id(1))].requires_grad) {
        Tensor gc(coords.shape());
        kernels::bilinear_scatter_coords(g.data(), img.data(), img.size(0), img.size(1),
                                         img.size(2), coords.data(), npts, gc.data());
        accumulate(in_id(1), std::move(gc), n.op);
      }
      return;
    }

    case Op::trilinear_sample_3d: {
      const Tensor& vol = in_val(0);
      const Tensor& coords = in_val(1);
      const int64_t npts = coords.numel() / 3;
      Tensor ga(vol.shape());
      kernels::trilinear_scatter(g.data(), vol.size(0), vol.size(1), vol.size(2), vol.size(3),
                                 coords.data(), npts, ga.data());
      accumulate(in_id(0), std::move(ga), n.op);
      if (nodes_[size_t(in_id(1))].requires_grad) {
        Tensor gc(coords.shape());
        kernels::trilinear_scatter_coords(g.data(), vol.data(), vol.size(0), vol.size(1),
                                          vol.size(2), vol.size(3), coords.data(), npts,
                                          gc.data());
        accumulate(in_id(1), std::move(gc), n.op);
      }
      return;
    }

    case Op::max_pool_region: {
      const Tensor& x = in_val(0);
      int64_t cells = x.size(1) * x.size(2);
      int64_t c = x.size(0);
      Tensor ga(x.shape());
      for (int64_t r = 0; r < int64_t(n.attrs.regions.size()); ++r) {
        const auto& region = n.attrs.regions[size_t(r)];
        if (region.empty()) continue;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* p = x.data() + ch * cells;
          int64_t arg = region[0];
          for (int64_t ix : region)
            if (p[ix] > p[arg]) arg = ix;
          ga[ch * cells + arg] += g[r * c + ch];
        }
      }
      accumulate(in_id(0), std::move(ga), n.op);
      return;
    }
  }
}

// ---- thin wrappers ----

Val Tape::add(Val a, Val b) { return apply(Op::add, {a, b}, {}); }
Val Tape::sub(Val a, Val b) { return apply(Op::sub, {a, b}, {}); }
Val Tape::mul(Val a, Val b) { return apply(Op::mul, {a, b}, {}); }

Val Tape::scalar_mul(Val a, double s) {
  OpAttrs at;
  at.scalar = s;
  return apply(Op::scalar_mul, {a}, at);
}

Val Tape::reciprocal(Val a) { return apply(Op::reciprocal, {a}, {}); }
Val Tape::matmul(Val a, Val b) { return apply(Op::matmul, {a, b}, {}); }

Val Tape::conv2d(Val x, Val w, Val b, std::array<int64_t, 2> stride, std::array<int64_t, 2> pad) {
  OpAttrs at;
  at.stride2 = stride;
  at.pad2 = pad;
  return apply(Op::conv2d, {x, w, b}, at);
}

Val Tape::conv3d(Val x, Val w, Val b, std::array<int64_t, 3> stride, std::array<int64_t, 3> pad) {
  OpAttrs at;
  at.stride3 = stride;
  at.pad3 = pad;
  return apply(Op::conv3d, {x, w, b}, at);
}

Val Tape::relu(Val a) { return apply(Op::relu, {a}, {}); }
Val Tape::sigmoid(Val a) { return apply(Op::sigmoid, {a}, {}); }
Val Tape::tanh(Val a) { return apply(Op::tanh_op, {a}, {}); }
Val Tape::exp(Val a) { return apply(Op::exp_op, {a}, {}); }
Val Tape::log(Val a) { return apply(Op::log_op, {a}, {}); }

Val Tape::softmax(Val a, int64_t axis) {
  OpAttrs at;
  at.axis = axis;
  return apply(Op::softmax_axis, {a}, at);
}

Val Tape::sum(Val a, int64_t axis) {
  OpAttrs at;
  at.axis = axis;
  return apply(Op::sum_axis, {a}, at);
}

Val Tape::mean(Val a, int64_t axis) {
  OpAttrs at;
  at.axis = axis;
  return apply(Op::mean_axis, {a}, at);
}

Val Tape::sum_all(Val a) {
  if (value(a).dim() == 0) return a;
  Val flat = reshape(a, {value(a).numel()});
  return sum(flat, 0);
}

Val Tape::concat(const std::vector<Val>& parts, int64_t axis) {
  OpAttrs at;
  at.axis = axis;
  return apply(Op::concat_axis, parts, at);
}

Val Tape::slice(Val a, std::vector<int64_t> starts, std::vector<int64_t> sizes) {
  OpAttrs at;
  at.starts = std::move(starts);
  at.sizes = std::move(sizes);
  return apply(Op::slice, {a}, at);
}

Val Tape::transpose(Val a, std::vector<int64_t> perm) {
  OpAttrs at;
  at.perm = std::move(perm);
  return apply(Op::transpose, {a}, at);
}

Val Tape::reshape(Val a, std::vector<int64_t> target_shape) {
  OpAttrs at;
  at.target_shape = std::move(target_shape);
  return apply(Op::reshape, {a}, at);
}

Val Tape::broadcast_to(Val a, std::vector<int64_t> target_shape) {
  OpAttrs at;
  at.target_shape = std::move(target_shape);
  return apply(Op::broadcast_to, {a}, at);
}

Val Tape::bilinear_sample_2d(Val img, Val coords) {
  return apply(Op::bilinear_sample_2d, {img, coords}, {});
}

Val Tape::trilinear_sample_3d(Val vol, Val coords) {
  return apply(Op::trilinear_sample_3d, {vol, coords}, {});
}

Val Tape::max_pool_region(Val grid, std::vector<std::vector<int64_t>> regions) {
  OpAttrs at;
  at.regions = std::move(regions);
  return apply(Op::max_pool_region, {grid}, at);
}

}  // namespace evstereo
