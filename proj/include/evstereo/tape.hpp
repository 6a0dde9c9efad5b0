#pragma once
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "evstereo/tensor.hpp"

namespace evstereo {

enum class Op {
  leaf,
  add,
  sub,
  mul,
  scalar_mul,
  reciprocal,
  matmul,
  conv2d,
  conv3d,
  relu,
  sigmoid,
  tanh_op,
  exp_op,
  log_op,
  softmax_axis,
  sum_axis,
  mean_axis,
  concat_axis,
  slice,
  transpose,
  reshape,
  broadcast_to,
  bilinear_sample_2d,
  trilinear_sample_3d,
  max_pool_region,
};

const char* op_name(Op op);
std::optional<Op> op_from_name(const std::string& name);

// All ops that have a differentiable input, i.e. everything except leaf.
const std::vector<Op>& all_primitive_ops();

struct OpAttrs {
  int64_t axis = 0;
  double scalar = 0.0;
  std::vector<int64_t> starts, sizes, perm, target_shape;
  std::array<int64_t, 2> stride2{1, 1}, pad2{0, 0};
  std::array<int64_t, 3> stride3{1, 1, 1}, pad3{0, 0, 0};
  std::vector<std::vector<int64_t>> regions;  // max_pool_region: flat spatial indices
};

// Handle to a node on a Tape. Only meaningful together with the tape that
// produced it.
struct Val {
  int32_t id = -1;
};

struct TapeNode {
  Op op = Op::leaf;
  std::vector<int32_t> inputs;
  OpAttrs attrs;
  Tensor value;  // saved activation (forward is eager)
  bool requires_grad = false;
};

// Reverse-mode autodiff over an eagerly evaluated DAG of primitive
// applications. Nodes are appended in creation order, which is a topological
// order, so backward is a single reverse sweep. A tape is single-writer;
// finished tapes may be read from any thread.
class Tape {
 public:
  // Leaves. input() honors t.requires_grad; constant() never tracks.
  Val input(Tensor t);
  Val constant(Tensor t);

  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val scalar_mul(Val a, double s);
  Val reciprocal(Val a);
  Val matmul(Val a, Val b);
  // x (cin,h,w), w (cout,cin,kh,kw), b (cout)
  Val conv2d(Val x, Val w, Val b, std::array<int64_t, 2> stride, std::array<int64_t, 2> pad);
  // x (cin,d0,d1,d2), w (cout,cin,k0,k1,k2), b (cout)
  Val conv3d(Val x, Val w, Val b, std::array<int64_t, 3> stride, std::array<int64_t, 3> pad);
  Val relu(Val a);
  Val sigmoid(Val a);
  Val tanh(Val a);
  Val exp(Val a);
  Val log(Val a);
  Val softmax(Val a, int64_t axis);
  Val sum(Val a, int64_t axis);   // drops the axis
  Val mean(Val a, int64_t axis);  // drops the axis
  Val sum_all(Val a);             // convenience: scalar sum via repeated sum()
  Val concat(const std::vector<Val>& parts, int64_t axis);
  Val slice(Val a, std::vector<int64_t> starts, std::vector<int64_t> sizes);
  Val transpose(Val a, std::vector<int64_t> perm);
  Val reshape(Val a, std::vector<int64_t> target_shape);
  Val broadcast_to(Val a, std::vector<int64_t> target_shape);  // rank-equal, 1 -> n expansion
  // img (c,h,w), coords (2,...); differentiable in both img and coords.
  Val bilinear_sample_2d(Val img, Val coords);
  // vol (c,d,h,w), coords (3,...); differentiable in both vol and coords.
  Val trilinear_sample_3d(Val vol, Val coords);
  // grid (c,h,w), regions = lists of flat h*w indices; output (nregions, c),
  // empty region rows are zero.
  Val max_pool_region(Val grid, std::vector<std::vector<int64_t>> regions);

  // Generic dispatch; the named methods above are thin wrappers over this.
  Val apply(Op op, const std::vector<Val>& inputs, const OpAttrs& attrs);

  // Reverse sweep from a scalar root. Accumulators reset on each call.
  void backward(Val root);

  const Tensor& value(Val v) const;
  // Gradient accumulated by the last backward(); zeros if the node was never
  // reached.
  Tensor grad(Val v) const;

  int64_t size() const { return int64_t(nodes_.size()); }
  const TapeNode& node(Val v) const;

  // Test hook: scales the input gradients produced by every node of the given
  // op during backward. Used by the gradcheck fault-injection fixture.
  void set_backward_fault(Op op, double scale) {
    fault_op_ = op;
    fault_scale_ = scale;
  }

 private:
  Val record(Op op, std::vector<int32_t> inputs, OpAttrs attrs, Tensor value);
  void backward_node(int32_t id);
  void accumulate(int32_t id, Tensor g, Op source_op);
  Tensor forward_compute(Op op, const std::vector<int32_t>& inputs, const OpAttrs& attrs) const;

  // deque keeps references from value() stable while later ops append nodes
  std::deque<TapeNode> nodes_;
  std::vector<Tensor> grads_;
  std::optional<Op> fault_op_;
  double fault_scale_ = 1.0;
};

}  // namespace evstereo
