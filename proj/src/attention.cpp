#include "axunet/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace axunet {

namespace {

std::vector<int> invert(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

template <class T>
void validate_projections(const Graph<T>& g, const AxisAttentionVals& w, std::int64_t channels,
                          int heads, int head_dim) {
  const std::int64_t d = static_cast<std::int64_t>(heads) * head_dim;
  const auto check = [&](Val v, std::int64_t rows, std::int64_t cols, const char* name) {
    const Shape& s = g.value(v).shape();
    if (s.size() != 2 || s[0] != rows || s[1] != cols)
      throw std::invalid_argument(std::string("attention projection ") + name + " has shape " +
                                  shape_str(s) + ", expected [" + std::to_string(rows) + ", " +
                                  std::to_string(cols) + "]");
  };
  check(w.wq, channels, d, "Wq");
  check(w.wk, channels, d, "Wk");
  check(w.wv, channels, d, "Wv");
  check(w.wo, d, channels, "Wo");
}

// Multi-head attention over fibers [F, L, C] -> [F, L, C].
template <class T>
Val fiber_attention(Graph<T>& g, Val fibers, const AxisAttentionVals& w, int heads,
                    int head_dim) {
  const Shape fs = g.value(fibers).shape();
  const std::int64_t F = fs[0], L = fs[1];
  const std::int64_t d = head_dim;
  const std::int64_t dm = static_cast<std::int64_t>(heads) * d;

  auto split_heads = [&](Val t) {
    // [F, L, h*d] -> [F, h, L, d]
    Val r = g.reshape(t, Shape{F, L, heads, d});
    return g.permute(r, {0, 2, 1, 3});
  };

  Val q = split_heads(g.matmul(fibers, w.wq));
  Val k = split_heads(g.matmul(fibers, w.wk));
  Val v = split_heads(g.matmul(fibers, w.wv));

  Val scores = g.matmul(q, g.permute(k, {0, 1, 3, 2}));  // [F, h, L, L]
  Val scaled = g.mul(scores, g.scalar(static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))));
  Val probs = g.softmax_lastaxis(scaled);
  Val av = g.matmul(probs, v);  // [F, h, L, d]

  Val merged = g.reshape(g.permute(av, {0, 2, 1, 3}), Shape{F, L, dm});
  return g.matmul(merged, w.wo);  // [F, L, C]
}

}  // namespace

template <class T>
Val axis_attention(Graph<T>& g, Val x, int axis, const AxisAttentionVals& w, int heads,
                   int head_dim) {
  const Shape xs = g.value(x).shape();
  if (xs.size() != 5)
    throw std::invalid_argument("axis_attention expects 5-D input, got " + shape_str(xs));
  if (axis < 0 || axis > 2)
    throw std::invalid_argument("axis_attention axis must be 0, 1 or 2");
  const std::int64_t c = xs[1];
  validate_projections(g, w, c, heads, head_dim);

  // Move the attended axis in front of channels: [b, o1, o2, L, c].
  static const std::vector<int> perms[3] = {{0, 3, 4, 2, 1}, {0, 2, 4, 3, 1}, {0, 2, 3, 4, 1}};
  const std::vector<int>& perm = perms[axis];
  Val moved = g.permute(x, perm);
  const Shape ms = g.value(moved).shape();
  const std::int64_t F = ms[0] * ms[1] * ms[2];
  const std::int64_t L = ms[3];

  Val fibers = g.reshape(moved, Shape{F, L, c});
  Val attended = fiber_attention(g, fibers, w, heads, head_dim);
  Val unflat = g.reshape(attended, ms);
  return g.permute(unflat, invert(perm));
}

template <class T>
Val axial_decoder_block(Graph<T>& g, Val x, const std::array<AxisAttentionVals, 3>& w, int heads,
                        int head_dim) {
  Val out = x;
  for (int axis = 0; axis < 3; ++axis)
    out = g.add(out, axis_attention(g, x, axis, w[static_cast<std::size_t>(axis)], heads,
                                    head_dim));
  return out;
}

template <class T>
Val full_attention(Graph<T>& g, Val x, const AxisAttentionVals& w, int heads, int head_dim) {
  const Shape xs = g.value(x).shape();
  if (xs.size() != 5)
    throw std::invalid_argument("full_attention expects 5-D input, got " + shape_str(xs));
  const std::int64_t c = xs[1];
  validate_projections(g, w, c, heads, head_dim);
  const std::int64_t n = xs[2] * xs[3] * xs[4];
  Val moved = g.permute(x, {0, 2, 3, 4, 1});
  Val tokens = g.reshape(moved, Shape{xs[0], n, c});
  Val attended = fiber_attention(g, tokens, w, heads, head_dim);
  Val unflat = g.reshape(attended, Shape{xs[0], xs[2], xs[3], xs[4], c});
  return g.permute(unflat, {0, 4, 1, 2, 3});
}

AttentionCost attention_cost(const std::array<std::int64_t, 3>& extents, std::int64_t channels,
                             std::int64_t heads, std::int64_t head_dim, AttentionKind kind) {
  for (auto e : extents)
    if (e < 1) throw std::invalid_argument("attention_cost extents must be positive");
  const std::int64_t n = extents[0] * extents[1] * extents[2];
  const std::int64_t dm = heads * head_dim;
  AttentionCost cost;
  if (kind == AttentionKind::full) {
    cost.projection_macs = 4 * n * channels * dm;
    cost.score_macs = n * n * dm;
    cost.av_macs = n * n * dm;
    return cost;
  }
  // One attention pass per axis, each with its own projections; fibers along
  // an axis of length L contribute N*L score and value contractions.
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t len = extents[static_cast<std::size_t>(axis)];
    cost.projection_macs += 4 * n * channels * dm;
    cost.score_macs += n * len * dm;
    cost.av_macs += n * len * dm;
  }
  return cost;
}

template Val axis_attention<float>(Graph<float>&, Val, int, const AxisAttentionVals&, int, int);
template Val axis_attention<double>(Graph<double>&, Val, int, const AxisAttentionVals&, int, int);
template Val axial_decoder_block<float>(Graph<float>&, Val, const std::array<AxisAttentionVals, 3>&,
                                        int, int);
template Val axial_decoder_block<double>(Graph<double>&, Val,
                                         const std::array<AxisAttentionVals, 3>&, int, int);
template Val full_attention<float>(Graph<float>&, Val, const AxisAttentionVals&, int, int);
template Val full_attention<double>(Graph<double>&, Val, const AxisAttentionVals&, int, int);

}  // namespace axunet
