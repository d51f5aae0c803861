#include "axunet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "axunet/rng.hpp"

namespace axunet {

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::matmul: return "matmul";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::concat: return "concat";
    case OpKind::softmax: return "softmax";
    case OpKind::bce_with_logits_mean: return "bce_with_logits_mean";
    case OpKind::conv3d: return "conv3d";
    case OpKind::transpose_conv3d: return "transpose_conv3d";
    case OpKind::group_norm: return "group_norm";
    case OpKind::batch_norm: return "batch_norm";
  }
  return "?";
}

namespace macs {
namespace {
thread_local std::int64_t g_count = 0;
thread_local bool g_enabled = false;
}  // namespace
void reset() { g_count = 0; }
void enable(bool on) { g_enabled = on; }
bool enabled() { return g_enabled; }
std::int64_t count() { return g_count; }
void add(std::int64_t n) {
  if (g_enabled) g_count += n;
}
}  // namespace macs

namespace {

// ---- broadcast iteration helpers ----

// Right-aligned effective strides of `shape` against broadcast shape `out`:
// stride 0 where the input extent is 1.
Shape effective_strides(const Shape& shape, const Shape& out) {
  const Shape st = shape_strides(shape);
  Shape eff(out.size(), 0);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t oi = out.size() - shape.size() + i;
    eff[oi] = (shape[i] == 1) ? 0 : st[i];
  }
  return eff;
}

template <class T, class F>
Tensor<T> binary_kernel(const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape os = broadcast_shapes(a.shape(), b.shape());
  const Shape ea = effective_strides(a.shape(), os);
  const Shape eb = effective_strides(b.shape(), os);
  Tensor<T> out(os);
  const std::int64_t n = shape_numel(os);
  std::vector<std::int64_t> coord(os.size(), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = f(a[ia], b[ib]);
    for (int ax = static_cast<int>(os.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      ia += ea[axi];
      ib += eb[axi];
      if (coord[axi] < os[axi]) break;
      coord[axi] = 0;
      ia -= ea[axi] * os[axi];
      ib -= eb[axi] * os[axi];
    }
  }
  return out;
}

// Sums `t` down to `target` (right-aligned), for broadcast gradients.
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& t, const Shape& target) {
  if (t.shape() == target) return t;
  Tensor<T> out(target, T(0));
  const Shape eff = effective_strides(target, t.shape());
  const std::int64_t n = t.size();
  std::vector<std::int64_t> coord(t.shape().size(), 0);
  std::int64_t oi = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[oi] += t[i];
    const Shape& ts = t.shape();
    for (int ax = static_cast<int>(ts.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      oi += eff[axi];
      if (coord[axi] < ts[axi]) break;
      coord[axi] = 0;
      oi -= eff[axi] * ts[axi];
    }
  }
  return out;
}

template <class T, class F>
Tensor<T> unary_kernel(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(x[i]);
  return out;
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& t) {
  const Shape& s = t.shape();
  const int r = t.rank();
  Shape os = s;
  std::swap(os[static_cast<std::size_t>(r - 2)], os[static_cast<std::size_t>(r - 1)]);
  Tensor<T> out(os);
  const std::int64_t m = s[static_cast<std::size_t>(r - 2)];
  const std::int64_t n = s[static_cast<std::size_t>(r - 1)];
  const std::int64_t batch = t.size() / (m * n);
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* src = t.data() + b * m * n;
    T* dst = out.data() + b * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return out;
}

template <class T>
Tensor<T> matmul_kernel(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::invalid_argument("matmul requires rank >= 2, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const std::int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (ka != kb)
    throw std::invalid_argument("matmul inner extents differ: " + shape_str(sa) + " x " +
                                shape_str(sb));
  const Shape abatch(sa.begin(), sa.end() - 2);
  const Shape bbatch(sb.begin(), sb.end() - 2);
  const Shape batch = broadcast_shapes(abatch.empty() ? Shape{1} : abatch,
                                       bbatch.empty() ? Shape{1} : bbatch);
  Shape os = batch;
  if (abatch.empty() && bbatch.empty()) os.clear();
  os.push_back(m);
  os.push_back(n);
  Tensor<T> out(os, T(0));

  const std::int64_t bn = shape_numel(batch);
  const Shape ea = effective_strides(abatch.empty() ? Shape{1} : abatch, batch);
  const Shape eb = effective_strides(bbatch.empty() ? Shape{1} : bbatch, batch);
  std::vector<std::int64_t> coord(batch.size(), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t bi = 0; bi < bn; ++bi) {
    const T* A = a.data() + ia * m * ka;
    const T* B = b.data() + ib * ka * n;
    T* C = out.data() + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const T* Ar = A + i * ka;
      T* Cr = C + i * n;
      for (std::int64_t kk = 0; kk < ka; ++kk) {
        const T av = Ar[kk];
        const T* Br = B + kk * n;
        for (std::int64_t j = 0; j < n; ++j) Cr[j] += av * Br[j];
      }
    }
    for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      ia += ea[axi];
      ib += eb[axi];
      if (coord[axi] < batch[axi]) break;
      coord[axi] = 0;
      ia -= ea[axi] * batch[axi];
      ib -= eb[axi] * batch[axi];
    }
  }
  macs::add(bn * m * ka * n);
  return out;
}

void validate_axes(const std::vector<int>& axes, int rank) {
  std::set<int> seen;
  for (int ax : axes) {
    if (ax < 0 || ax >= rank)
      throw std::invalid_argument("reduce axis " + std::to_string(ax) +
                                  " out of range for rank " + std::to_string(rank));
    if (!seen.insert(ax).second)
      throw std::invalid_argument("duplicate reduce axis " + std::to_string(ax));
  }
}

Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  std::vector<bool> is_red(in.size(), false);
  for (int ax : axes) is_red[static_cast<std::size_t>(ax)] = true;
  Shape out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (is_red[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Output flat-index strides addressed by input coordinates (0 on reduced axes).
Shape reduce_out_strides(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  std::vector<bool> is_red(in.size(), false);
  for (int ax : axes) is_red[static_cast<std::size_t>(ax)] = true;
  const Shape os = reduced_shape(in, axes, keepdims);
  const Shape ost = shape_strides(os);
  Shape eff(in.size(), 0);
  std::size_t oi = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (is_red[i]) {
      if (keepdims) ++oi;
      continue;
    }
    eff[i] = ost[oi];
    ++oi;
  }
  return eff;
}

template <class T>
Tensor<T> reduce_kernel(const Tensor<T>& x, const std::vector<int>& axes, bool keepdims,
                        bool mean) {
  validate_axes(axes, x.rank());
  const Shape os = reduced_shape(x.shape(), axes, keepdims);
  const Shape eff = reduce_out_strides(x.shape(), axes, keepdims);
  Tensor<T> out(os, T(0));
  const Shape& is = x.shape();
  std::vector<std::int64_t> coord(is.size(), 0);
  std::int64_t oi = 0;
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    out[oi] += x[i];
    for (int ax = static_cast<int>(is.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      oi += eff[axi];
      if (coord[axi] < is[axi]) break;
      coord[axi] = 0;
      oi -= eff[axi] * is[axi];
    }
  }
  if (mean) {
    const std::int64_t cnt = x.size() / shape_numel(os);
    const T inv = T(1) / static_cast<T>(cnt);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  }
  return out;
}

// Broadcasts a reduced gradient back over the reduced axes (scaled for mean).
template <class T>
Tensor<T> reduce_backward_kernel(const Tensor<T>& gout, const Shape& in_shape,
                                 const std::vector<int>& axes, bool keepdims, bool mean) {
  const Shape eff = reduce_out_strides(in_shape, axes, keepdims);
  Tensor<T> gin(in_shape);
  T scale = T(1);
  if (mean) {
    const std::int64_t cnt = shape_numel(in_shape) / gout.size();
    scale = T(1) / static_cast<T>(cnt);
  }
  std::vector<std::int64_t> coord(in_shape.size(), 0);
  std::int64_t oi = 0;
  const std::int64_t n = shape_numel(in_shape);
  for (std::int64_t i = 0; i < n; ++i) {
    gin[i] = gout[oi] * scale;
    for (int ax = static_cast<int>(in_shape.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      oi += eff[axi];
      if (coord[axi] < in_shape[axi]) break;
      coord[axi] = 0;
      oi -= eff[axi] * in_shape[axi];
    }
  }
  return gin;
}

template <class T>
Tensor<T> permute_kernel(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw std::invalid_argument("permute order size " + std::to_string(perm.size()) +
                                " != rank " + std::to_string(r));
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
      throw std::invalid_argument("permute order is not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape os(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    os[i] = x.shape()[static_cast<std::size_t>(perm[i])];
  Tensor<T> out(os);
  const Shape ist = shape_strides(x.shape());
  // Stride of the output walk expressed in input flat offsets.
  Shape walk(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) walk[i] = ist[static_cast<std::size_t>(perm[i])];
  std::vector<std::int64_t> coord(os.size(), 0);
  std::int64_t ii = 0;
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = x[ii];
    for (int ax = static_cast<int>(os.size()) - 1; ax >= 0; --ax) {
      const auto axi = static_cast<std::size_t>(ax);
      ++coord[axi];
      ii += walk[axi];
      if (coord[axi] < os[axi]) break;
      coord[axi] = 0;
      ii -= walk[axi] * os[axi];
    }
  }
  return out;
}

std::vector<int> inverse_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

template <class T>
Tensor<T> concat_kernel(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  if (a.rank() != b.rank())
    throw std::invalid_argument("concat rank mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("concat axis " + std::to_string(axis) + " out of range");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.extent(i) != b.extent(i))
      throw std::invalid_argument("concat extents differ off-axis: " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
  Shape os = a.shape();
  os[static_cast<std::size_t>(axis)] += b.extent(axis);
  Tensor<T> out(os);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.extent(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  const std::int64_t an = a.extent(axis) * inner;
  const std::int64_t bn = b.extent(axis) * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (an + bn), a.data() + o * an, sizeof(T) * an);
    std::memcpy(out.data() + o * (an + bn) + an, b.data() + o * bn, sizeof(T) * bn);
  }
  return out;
}

// Slice of the concat gradient belonging to one operand.
template <class T>
Tensor<T> concat_slice(const Tensor<T>& g, int axis, std::int64_t offset, std::int64_t extent) {
  Shape os = g.shape();
  os[static_cast<std::size_t>(axis)] = extent;
  Tensor<T> out(os);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= g.extent(i);
  for (int i = axis + 1; i < g.rank(); ++i) inner *= g.extent(i);
  const std::int64_t gn = g.extent(axis) * inner;
  const std::int64_t on = extent * inner;
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * on, g.data() + o * gn + offset * inner, sizeof(T) * on);
  return out;
}

// Softmax over the last axis, 64-bit accumulation with max subtraction.
template <class T>
Tensor<T> softmax_kernel(const Tensor<T>& x) {
  const std::int64_t L = x.shape().back();
  const std::int64_t rows = x.size() / L;
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * L;
    T* dst = out.data() + r * L;
    double mx = static_cast<double>(src[0]);
    for (std::int64_t i = 1; i < L; ++i) mx = std::max(mx, static_cast<double>(src[i]));
    double sum = 0.0;
    for (std::int64_t i = 0; i < L; ++i) {
      const double e = std::exp(static_cast<double>(src[i]) - mx);
      dst[i] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::int64_t i = 0; i < L; ++i) dst[i] = static_cast<T>(static_cast<double>(dst[i]) * inv);
  }
  return out;
}

template <class T>
Tensor<T> softmax_backward_kernel(const Tensor<T>& p, const Tensor<T>& g) {
  const std::int64_t L = p.shape().back();
  const std::int64_t rows = p.size() / L;
  Tensor<T> gx(p.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* pr = p.data() + r * L;
    const T* gr = g.data() + r * L;
    T* dst = gx.data() + r * L;
    double dot = 0.0;
    for (std::int64_t i = 0; i < L; ++i)
      dot += static_cast<double>(pr[i]) * static_cast<double>(gr[i]);
    for (std::int64_t i = 0; i < L; ++i)
      dst[i] = static_cast<T>(static_cast<double>(pr[i]) * (static_cast<double>(gr[i]) - dot));
  }
  return gx;
}

template <class T>
Tensor<T> bce_mean_kernel(const Tensor<T>& logits, const Tensor<T>& targets) {
  double acc = 0.0;
  const std::int64_t n = logits.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits[i]);
    const double t = static_cast<double>(targets[i]);
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  return Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
}

}  // namespace

// ---- Graph ----

template <class T>
int Graph<T>::push_node(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
Val Graph<T>::leaf(Tensor<T> value, bool tracked) {
  if (value.empty()) throw std::invalid_argument("leaf tensor is empty");
  Node n;
  n.kind = tracked ? OpKind::leaf : OpKind::constant;
  n.value = std::move(value);
  n.tracked = tracked;
  return Val{push_node(std::move(n))};
}

namespace {
template <class T>
void maybe_accum(Graph<T>& g, int id, const Tensor<T>& grad) {
  if (g.node(id).tracked) g.accum_grad(id, grad);
}
}  // namespace

template <class T>
Val Graph<T>::add(Val a, Val b) {
  const Tensor<T>& va = value(a);
  const Tensor<T>& vb = value(b);
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a.id, b.id};
  n.value = binary_kernel<T>(va, vb, [](T x, T y) { return x + y; });
  n.tracked = tracked(a) || tracked(b);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    maybe_accum(g, node.inputs[0], reduce_to_shape(gout, g.node(node.inputs[0]).value.shape()));
    maybe_accum(g, node.inputs[1], reduce_to_shape(gout, g.node(node.inputs[1]).value.shape()));
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return binary_kernel<T>(in[0], in[1], [](T x, T y) { return x + y; });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::sub(Val a, Val b) {
  Node n;
  n.kind = OpKind::sub;
  n.inputs = {a.id, b.id};
  n.value = binary_kernel<T>(value(a), value(b), [](T x, T y) { return x - y; });
  n.tracked = tracked(a) || tracked(b);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    maybe_accum(g, node.inputs[0], reduce_to_shape(gout, g.node(node.inputs[0]).value.shape()));
    if (g.node(node.inputs[1]).tracked) {
      Tensor<T> neg = unary_kernel<T>(gout, [](T v) { return -v; });
      g.accum_grad(node.inputs[1], reduce_to_shape(neg, g.node(node.inputs[1]).value.shape()));
    }
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return binary_kernel<T>(in[0], in[1], [](T x, T y) { return x - y; });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::mul(Val a, Val b) {
  Node n;
  n.kind = OpKind::mul;
  n.inputs = {a.id, b.id};
  n.value = binary_kernel<T>(value(a), value(b), [](T x, T y) { return x * y; });
  n.tracked = tracked(a) || tracked(b);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    const Tensor<T>& va = g.node(node.inputs[0]).value;
    const Tensor<T>& vb = g.node(node.inputs[1]).value;
    if (g.node(node.inputs[0]).tracked) {
      Tensor<T> ga = binary_kernel<T>(gout, vb, [](T gv, T y) { return gv * y; });
      g.accum_grad(node.inputs[0], reduce_to_shape(ga, va.shape()));
    }
    if (g.node(node.inputs[1]).tracked) {
      Tensor<T> gb = binary_kernel<T>(gout, va, [](T gv, T x) { return gv * x; });
      g.accum_grad(node.inputs[1], reduce_to_shape(gb, vb.shape()));
    }
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return binary_kernel<T>(in[0], in[1], [](T x, T y) { return x * y; });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::div(Val a, Val b) {
  Node n;
  n.kind = OpKind::div;
  n.inputs = {a.id, b.id};
  n.value = binary_kernel<T>(value(a), value(b), [](T x, T y) { return x / y; });
  n.tracked = tracked(a) || tracked(b);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    const Tensor<T>& va = g.node(node.inputs[0]).value;
    const Tensor<T>& vb = g.node(node.inputs[1]).value;
    if (g.node(node.inputs[0]).tracked) {
      Tensor<T> ga = binary_kernel<T>(gout, vb, [](T gv, T y) { return gv / y; });
      g.accum_grad(node.inputs[0], reduce_to_shape(ga, va.shape()));
    }
    if (g.node(node.inputs[1]).tracked) {
      // d(a/b)/db = -a / b^2, broadcast against gout.
      Tensor<T> q = binary_kernel<T>(va, vb, [](T x, T y) { return -x / (y * y); });
      Tensor<T> gb = binary_kernel<T>(gout, q, [](T gv, T qv) { return gv * qv; });
      g.accum_grad(node.inputs[1], reduce_to_shape(gb, vb.shape()));
    }
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return binary_kernel<T>(in[0], in[1], [](T x, T y) { return x / y; });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::sigmoid(Val x) {
  Node n;
  n.kind = OpKind::sigmoid;
  n.inputs = {x.id};
  n.value = unary_kernel<T>(value(x), [](T v) { return stable_sigmoid(v); });
  n.tracked = tracked(x);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    const Tensor<T>& y = node.value;
    Tensor<T> gx(y.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) gx[i] = gout[i] * y[i] * (T(1) - y[i]);
    g.accum_grad(node.inputs[0], gx);
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return unary_kernel<T>(in[0], [](T v) { return stable_sigmoid(v); });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::leaky_relu(Val x, double slope) {
  const T s = static_cast<T>(slope);
  Node n;
  n.kind = OpKind::leaky_relu;
  n.inputs = {x.id};
  n.value = unary_kernel<T>(value(x), [s](T v) { return v > T(0) ? v : s * v; });
  n.tracked = tracked(x);
  n.backward = [s](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    const Tensor<T>& vx = g.node(node.inputs[0]).value;
    Tensor<T> gx(vx.shape());
    // Derivative at exactly zero takes the slope side.
    for (std::int64_t i = 0; i < vx.size(); ++i) gx[i] = gout[i] * (vx[i] > T(0) ? T(1) : s);
    g.accum_grad(node.inputs[0], gx);
  };
  n.replay = [s](const std::vector<Tensor<T>>& in) {
    return unary_kernel<T>(in[0], [s](T v) { return v > T(0) ? v : s * v; });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::log(Val x) {
  Node n;
  n.kind = OpKind::log;
  n.inputs = {x.id};
  n.value = unary_kernel<T>(value(x), [](T v) { return std::log(v); });
  n.tracked = tracked(x);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    const Tensor<T>& vx = g.node(node.inputs[0]).value;
    Tensor<T> gx(vx.shape());
    for (std::int64_t i = 0; i < vx.size(); ++i) gx[i] = gout[i] / vx[i];
    g.accum_grad(node.inputs[0], gx);
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return unary_kernel<T>(in[0], [](T v) { return std::log(v); });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::exp(Val x) {
  Node n;
  n.kind = OpKind::exp;
  n.inputs = {x.id};
  n.value = unary_kernel<T>(value(x), [](T v) { return std::exp(v); });
  n.tracked = tracked(x);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    const Tensor<T>& y = node.value;
    Tensor<T> gx(y.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) gx[i] = gout[i] * y[i];
    g.accum_grad(node.inputs[0], gx);
  };
  n.replay = [](const std::vector<Tensor<T>>& in) {
    return unary_kernel<T>(in[0], [](T v) { return std::exp(v); });
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::elementwise(OpKind kind, const std::vector<Val>& inputs, double slope) {
  auto want = [&](std::size_t k) {
    if (inputs.size() != k)
      throw std::invalid_argument(std::string(op_kind_name(kind)) + " expects " +
                                  std::to_string(k) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::add: want(2); return add(inputs[0], inputs[1]);
    case OpKind::sub: want(2); return sub(inputs[0], inputs[1]);
    case OpKind::mul: want(2); return mul(inputs[0], inputs[1]);
    case OpKind::div: want(2); return div(inputs[0], inputs[1]);
    case OpKind::sigmoid: want(1); return sigmoid(inputs[0]);
    case OpKind::leaky_relu: want(1); return leaky_relu(inputs[0], slope);
    case OpKind::log: want(1); return log(inputs[0]);
    case OpKind::exp: want(1); return exp(inputs[0]);
    default:
      throw std::invalid_argument(std::string("not an elementwise op: ") + op_kind_name(kind));
  }
}

template <class T>
Val Graph<T>::matmul(Val a, Val b) {
  Node n;
  n.kind = OpKind::matmul;
  n.inputs = {a.id, b.id};
  n.value = matmul_kernel(value(a), value(b));
  n.tracked = tracked(a) || tracked(b);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    const Tensor<T>& va = g.node(node.inputs[0]).value;
    const Tensor<T>& vb = g.node(node.inputs[1]).value;
    if (g.node(node.inputs[0]).tracked) {
      Tensor<T> ga = matmul_kernel(gout, transpose_last2(vb));
      g.accum_grad(node.inputs[0], reduce_to_shape(ga, va.shape()));
    }
    if (g.node(node.inputs[1]).tracked) {
      Tensor<T> gb = matmul_kernel(transpose_last2(va), gout);
      g.accum_grad(node.inputs[1], reduce_to_shape(gb, vb.shape()));
    }
  };
  n.replay = [](const std::vector<Tensor<T>>& in) { return matmul_kernel(in[0], in[1]); };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::reduce_sum(Val x, std::vector<int> axes, bool keepdims) {
  const Shape in_shape = value(x).shape();
  Node n;
  n.kind = OpKind::reduce_sum;
  n.inputs = {x.id};
  n.value = reduce_kernel(value(x), axes, keepdims, false);
  n.tracked = tracked(x);
  n.backward = [axes, keepdims, in_shape](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    g.accum_grad(node.inputs[0], reduce_backward_kernel(gout, in_shape, axes, keepdims, false));
  };
  n.replay = [axes, keepdims](const std::vector<Tensor<T>>& in) {
    return reduce_kernel(in[0], axes, keepdims, false);
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::reduce_mean(Val x, std::vector<int> axes, bool keepdims) {
  const Shape in_shape = value(x).shape();
  Node n;
  n.kind = OpKind::reduce_mean;
  n.inputs = {x.id};
  n.value = reduce_kernel(value(x), axes, keepdims, true);
  n.tracked = tracked(x);
  n.backward = [axes, keepdims, in_shape](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    g.accum_grad(node.inputs[0], reduce_backward_kernel(gout, in_shape, axes, keepdims, true));
  };
  n.replay = [axes, keepdims](const std::vector<Tensor<T>>& in) {
    return reduce_kernel(in[0], axes, keepdims, true);
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::reduce(OpKind kind, Val x, std::vector<int> axes, bool keepdims) {
  if (kind == OpKind::reduce_sum) return reduce_sum(x, std::move(axes), keepdims);
  if (kind == OpKind::reduce_mean) return reduce_mean(x, std::move(axes), keepdims);
  throw std::invalid_argument(std::string("not a reduce op: ") + op_kind_name(kind));
}

template <class T>
Val Graph<T>::reshape(Val x, Shape shape) {
  const Tensor<T>& vx = value(x);
  if (shape_numel(shape) != vx.size())
    throw std::invalid_argument("reshape from " + shape_str(vx.shape()) + " to " +
                                shape_str(shape) + " changes element count");
  const Shape in_shape = vx.shape();
  Node n;
  n.kind = OpKind::reshape;
  n.inputs = {x.id};
  n.value = Tensor<T>(shape, std::vector<T>(vx.data(), vx.data() + vx.size()));
  n.tracked = tracked(x);
  n.backward = [in_shape](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    g.accum_grad(node.inputs[0],
                 Tensor<T>(in_shape, std::vector<T>(gout.data(), gout.data() + gout.size())));
  };
  n.replay = [shape](const std::vector<Tensor<T>>& in) {
    return Tensor<T>(shape, std::vector<T>(in[0].data(), in[0].data() + in[0].size()));
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::permute(Val x, std::vector<int> perm) {
  Node n;
  n.kind = OpKind::permute;
  n.inputs = {x.id};
  n.value = permute_kernel(value(x), perm);
  n.tracked = tracked(x);
  const std::vector<int> inv = inverse_perm(perm);
  n.backward = [inv](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    g.accum_grad(node.inputs[0], permute_kernel(gout, inv));
  };
  n.replay = [perm](const std::vector<Tensor<T>>& in) { return permute_kernel(in[0], perm); };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::concat(Val a, Val b, int axis) {
  const std::int64_t a_ext = value(a).extent(axis);
  const std::int64_t b_ext = value(b).extent(axis);
  Node n;
  n.kind = OpKind::concat;
  n.inputs = {a.id, b.id};
  n.value = concat_kernel(value(a), value(b), axis);
  n.tracked = tracked(a) || tracked(b);
  n.backward = [axis, a_ext, b_ext](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (g.node(node.inputs[0]).tracked)
      g.accum_grad(node.inputs[0], concat_slice(gout, axis, 0, a_ext));
    if (g.node(node.inputs[1]).tracked)
      g.accum_grad(node.inputs[1], concat_slice(gout, axis, a_ext, b_ext));
  };
  n.replay = [axis](const std::vector<Tensor<T>>& in) {
    return concat_kernel(in[0], in[1], axis);
  };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::softmax_lastaxis(Val x) {
  Node n;
  n.kind = OpKind::softmax;
  n.inputs = {x.id};
  n.value = softmax_kernel(value(x));
  n.tracked = tracked(x);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    if (!g.node(node.inputs[0]).tracked) return;
    g.accum_grad(node.inputs[0], softmax_backward_kernel(node.value, gout));
  };
  n.replay = [](const std::vector<Tensor<T>>& in) { return softmax_kernel(in[0]); };
  return Val{push_node(std::move(n))};
}

template <class T>
Val Graph<T>::bce_with_logits_mean(Val logits, Val targets) {
  const Tensor<T>& vl = value(logits);
  const Tensor<T>& vt = value(targets);
  if (vl.shape() != vt.shape())
    throw std::invalid_argument("bce shapes differ: " + shape_str(vl.shape()) + " vs " +
                                shape_str(vt.shape()));
  Node n;
  n.kind = OpKind::bce_with_logits_mean;
  n.inputs = {logits.id, targets.id};
  n.value = bce_mean_kernel(vl, vt);
  n.tracked = tracked(logits) || tracked(targets);
  n.backward = [](Graph& g, const Node& node, const Tensor<T>& gout) {
    const Tensor<T>& x = g.node(node.inputs[0]).value;
    const Tensor<T>& t = g.node(node.inputs[1]).value;
    if (!g.node(node.inputs[0]).tracked) return;
    const T gscale = gout[0] / static_cast<T>(x.size());
    Tensor<T> gx(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i)
      gx[i] = gscale * (stable_sigmoid(x[i]) - t[i]);
    g.accum_grad(node.inputs[0], gx);
  };
  n.replay = [](const std::vector<Tensor<T>>& in) { return bce_mean_kernel(in[0], in[1]); };
  return Val{push_node(std::move(n))};
}

template <class T>
void Graph<T>::accum_grad(int id, const Tensor<T>& g) {
  const Tensor<T>& v = nodes_[static_cast<std::size_t>(id)].value;
  if (g.shape() != v.shape())
    throw std::logic_error("gradient shape " + shape_str(g.shape()) + " != value shape " +
                           shape_str(v.shape()) + " at node " + std::to_string(id));
  Tensor<T>& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.empty()) {
    slot = g.clone();
    return;
  }
  for (std::int64_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

template <class T>
void Graph<T>::backward(Val output, const Tensor<T>& seed) {
  const Tensor<T>& out_val = value(output);
  if (seed.shape() != out_val.shape())
    throw std::invalid_argument("backward seed shape " + shape_str(seed.shape()) +
                                " != output shape " + shape_str(out_val.shape()));
  grads_.assign(nodes_.size(), Tensor<T>());
  if (!tracked(output)) return;
  accum_grad(output.id, seed);
  for (int id = output.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.tracked || !n.backward) continue;
    const Tensor<T>& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    n.backward(*this, n, g);
  }
}

template <class T>
bool Graph<T>::has_grad(Val v) const {
  return v.id >= 0 && static_cast<std::size_t>(v.id) < grads_.size() &&
         !grads_[static_cast<std::size_t>(v.id)].empty();
}

template <class T>
const Tensor<T>& Graph<T>::grad(Val v) const {
  if (!has_grad(v)) throw std::logic_error("no gradient at node " + std::to_string(v.id));
  return grads_[static_cast<std::size_t>(v.id)];
}

template <class T>
bool Graph<T>::replay_matches() const {
  std::vector<Tensor<T>> vals(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.replay) {
      vals[id] = n.value;
      continue;
    }
    std::vector<Tensor<T>> in;
    in.reserve(n.inputs.size());
    for (int i : n.inputs) in.push_back(vals[static_cast<std::size_t>(i)]);
    vals[id] = n.replay(in);
    if (vals[id].shape() != n.value.shape()) return false;
    if (std::memcmp(vals[id].data(), n.value.data(),
                    sizeof(T) * static_cast<std::size_t>(n.value.size())) != 0)
      return false;
  }
  return true;
}

template <class T>
FdResult finite_difference_check(const std::function<Val(Graph<T>&, Val)>& build,
                                 const Tensor<T>& point, const FdOptions& opts) {
  Tensor<T> analytic;
  {
    Graph<T> g;
    Val x = g.leaf(point.clone(), true);
    Val out = build(g, x);
    if (g.value(out).size() != 1)
      throw std::invalid_argument("finite_difference_check requires a scalar-valued function");
    g.backward_scalar(out);
    analytic = g.has_grad(x) ? g.grad(x).clone() : Tensor<T>(point.shape(), T(0));
  }

  Tensor<T> scratch = point.clone();
  auto eval = [&]() -> double {
    Graph<T> g;
    Val x = g.leaf(scratch, false);
    Val out = build(g, x);
    return static_cast<double>(g.value(out)[0]);
  };

  const std::int64_t n = point.size();
  std::vector<std::int64_t> coords;
  if (opts.max_coords < 0 || opts.max_coords >= n) {
    coords.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  } else {
    std::set<std::int64_t> chosen;
    // Always include the largest-gradient coordinate.
    std::int64_t amax = 0;
    for (std::int64_t i = 1; i < n; ++i)
      if (std::abs(static_cast<double>(analytic[i])) >
          std::abs(static_cast<double>(analytic[amax])))
        amax = i;
    chosen.insert(amax);
    Rng rng(opts.seed);
    while (static_cast<std::int64_t>(chosen.size()) < opts.max_coords)
      chosen.insert(rng.integer(n));
    coords.assign(chosen.begin(), chosen.end());
  }

  FdResult res;
  res.coords_checked = static_cast<std::int64_t>(coords.size());
  for (std::int64_t i : coords) {
    const T orig = scratch[i];
    const T xp = static_cast<T>(static_cast<double>(orig) + opts.step);
    const T xm = static_cast<T>(static_cast<double>(orig) - opts.step);
    const double h = static_cast<double>(xp) - static_cast<double>(xm);
    if (h == 0.0)
      throw std::invalid_argument("finite-difference step underflows at coordinate " +
                                  std::to_string(i));
    scratch[i] = xp;
    const double fp = eval();
    scratch[i] = xm;
    const double fm = eval();
    scratch[i] = orig;
    const double central = (fp - fm) / h;
    const double a = static_cast<double>(analytic[i]);
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(central) || !std::isfinite(a))
      throw std::runtime_error("non-finite value in finite-difference check at coordinate " +
                               std::to_string(i) + " (f+=" + std::to_string(fp) +
                               ", f-=" + std::to_string(fm) + ", analytic=" + std::to_string(a) +
                               ")");
    const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-8});
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_coord = i;
    }
  }
  return res;
}

template class Graph<float>;
template class Graph<double>;
template FdResult finite_difference_check<float>(const std::function<Val(Graph<float>&, Val)>&,
                                                 const Tensor<float>&, const FdOptions&);
template FdResult finite_difference_check<double>(const std::function<Val(Graph<double>&, Val)>&,
                                                  const Tensor<double>&, const FdOptions&);

}  // namespace axunet
