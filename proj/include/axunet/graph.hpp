#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "axunet/tensor.hpp"

namespace axunet {

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  sigmoid,
  leaky_relu,
  log,
  exp,
  matmul,
  reduce_sum,
  reduce_mean,
  reshape,
  permute,
  concat,
  softmax,
  bce_with_logits_mean,
  conv3d,
  transpose_conv3d,
  group_norm,
  batch_norm,
};

const char* op_kind_name(OpKind k);

// Handle into a Graph's node list.
struct Val {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Multiply-accumulate instrumentation. Counts contractions performed by the
// matmul kernel while enabled; used by the attention cost cross-checks.
namespace macs {
void reset();
void enable(bool on);
bool enabled();
std::int64_t count();
void add(std::int64_t n);
}  // namespace macs

// Reverse-mode computation record. Nodes are appended in topological order;
// each stores its operation, input node ids, and the saved output value.
// Backward walks the record in reverse accumulating gradients; replay
// recomputes every node from the leaves with the same kernels.
template <class T>
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor<T> value;
    bool tracked = false;
    // Accumulates input gradients given this node's output gradient.
    std::function<void(Graph&, const Node&, const Tensor<T>&)> backward;
    // Pure recomputation of the node value from its input values.
    std::function<Tensor<T>(const std::vector<Tensor<T>>&)> replay;
  };

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor<T>& value(Val v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool tracked(Val v) const { return nodes_[static_cast<std::size_t>(v.id)].tracked; }

  // ---- leaves ----
  Val leaf(Tensor<T> value, bool tracked = true);
  Val constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Val scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  // ---- elementwise (trailing-dimension broadcast for binaries) ----
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val div(Val a, Val b);
  Val sigmoid(Val x);
  Val leaky_relu(Val x, double slope = 0.01);
  Val log(Val x);
  Val exp(Val x);

  // Dispatcher over the elementwise kinds above.
  Val elementwise(OpKind kind, const std::vector<Val>& inputs, double slope = 0.01);

  // ---- contraction / reduction ----
  Val matmul(Val a, Val b);
  Val reduce_sum(Val x, std::vector<int> axes, bool keepdims = false);
  Val reduce_mean(Val x, std::vector<int> axes, bool keepdims = false);
  Val reduce(OpKind kind, Val x, std::vector<int> axes, bool keepdims = false);

  // ---- shape ----
  Val reshape(Val x, Shape shape);
  Val permute(Val x, std::vector<int> perm);
  Val concat(Val a, Val b, int axis);

  // ---- fused ----
  Val softmax_lastaxis(Val x);
  Val bce_with_logits_mean(Val logits, Val targets);

  // ---- backward / replay ----
  // Seeds the given output with `seed` (shape must match) and accumulates
  // gradients through every tracked node. Untracked leaves get no gradient.
  void backward(Val output, const Tensor<T>& seed);
  void backward_scalar(Val output) { backward(output, Tensor<T>::scalar(T(1))); }

  bool has_grad(Val v) const;
  const Tensor<T>& grad(Val v) const;

  // Recomputes all node values from the leaves; returns false on the first
  // node whose recomputed value is not bit-identical to the stored one.
  bool replay_matches() const;

  // Internal: used by backward closures.
  void accum_grad(int id, const Tensor<T>& g);
  int push_node(Node n);

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

// Finite-difference gradient verification.
struct FdOptions {
  double step = 1e-5;
  // Check at most this many coordinates (-1 = all), sampled deterministically.
  std::int64_t max_coords = -1;
  std::uint64_t seed = 0x5eedULL;
};

struct FdResult {
  double max_rel_error = 0.0;
  std::int64_t worst_coord = -1;
  std::int64_t coords_checked = 0;
};

// `build` must construct a scalar output from the given leaf. The analytic
// gradient comes from one backward pass; each checked coordinate is compared
// against a central difference, relative to max(|analytic|, |central|, 1e-8).
template <class T>
FdResult finite_difference_check(const std::function<Val(Graph<T>&, Val)>& build,
                                 const Tensor<T>& point, const FdOptions& opts = {});

}  // namespace axunet
