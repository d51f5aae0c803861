#pragma once

#include <array>
#include <cstdint>

#include "axunet/graph.hpp"

namespace axunet {

// Projection weights for one attended axis: Wq/Wk/Wv are [channels, heads*head_dim],
// Wo is [heads*head_dim, channels]. No biases and no positional encoding.
struct AxisAttentionVals {
  Val wq, wk, wv, wo;
};

// Scaled dot-product multi-head attention over every 1-D fiber along the given
// spatial axis (0=x, 1=y, 2=z), all other coordinates fixed. Output shape
// equals input shape.
template <class T>
Val axis_attention(Graph<T>& g, Val x, int axis, const AxisAttentionVals& w, int heads,
                   int head_dim);

// Upsampling block: input plus the sum of the three per-axis attentions, each
// with its own projection set. The caller concatenates the result with the
// encoder skip features afterwards.
template <class T>
Val axial_decoder_block(Graph<T>& g, Val x, const std::array<AxisAttentionVals, 3>& w, int heads,
                        int head_dim);

// Reference full attention over all x*y*z tokens (used by the complexity
// benchmark, not by the network).
template <class T>
Val full_attention(Graph<T>& g, Val x, const AxisAttentionVals& w, int heads, int head_dim);

enum class AttentionKind { axial, full };

// Closed-form multiply-accumulate counts of the matmul contractions performed
// by the forward pass (batch 1). The instrumented kernel counter reproduces
// these numbers exactly.
struct AttentionCost {
  std::int64_t projection_macs = 0;  // q/k/v and output projections
  std::int64_t score_macs = 0;       // q * k^T
  std::int64_t av_macs = 0;          // softmax(scores) * v
  std::int64_t total() const { return projection_macs + score_macs + av_macs; }
};

AttentionCost attention_cost(const std::array<std::int64_t, 3>& extents, std::int64_t channels,
                             std::int64_t heads, std::int64_t head_dim, AttentionKind kind);

}  // namespace axunet
