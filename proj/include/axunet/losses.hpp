#pragma once

#include <vector>

#include "axunet/graph.hpp"
#include "axunet/tensor.hpp"

namespace axunet {

enum class DiceMode { batch, sample };

struct LossConfig {
  DiceMode dice_mode = DiceMode::batch;
  double smooth_epsilon = 1e-5;
  // One weight per supervised output, highest resolution first; empty means
  // the 1/2^level default, normalized to sum 1.
  std::vector<double> deep_supervision_weights;
};

// Weights proportional to 1/2^level, normalized.
std::vector<double> default_supervision_weights(int levels);

// lr = initial * (1 - epoch/total)^power; epoch must lie in [0, total).
double poly_lr(int epoch, double initial = 0.01, int total = 1000, double power = 0.9);

// Mean binary cross entropy over all elements plus (1 - dice), where dice is
// computed per region channel from sigmoid probabilities and then averaged.
// Batch mode pools the batch axis into the dice sums; sample mode averages
// per-sample dices. Targets must be 0/1 and shape-match the logits.
template <class T>
Val bce_dice_loss(Graph<T>& g, Val logits, const Tensor<T>& targets,
                  DiceMode mode = DiceMode::batch, double smooth_epsilon = 1e-5);

// Weighted sum of bce_dice_loss over the supervised outputs (highest
// resolution first) against nearest-neighbor-downsampled targets.
template <class T>
Val deep_supervision_loss(Graph<T>& g, const std::vector<Val>& outputs,
                          const Tensor<T>& full_res_targets, const LossConfig& cfg);

// Value-domain smooth dice of probabilities against binary targets
// ([b, 3, x, y, z]), averaged over regions; no graph involved.
double soft_dice_value(const Tensor<double>& probs, const Tensor<double>& targets, DiceMode mode,
                       double smooth_epsilon = 1e-5);

// Nearest-neighbor downsampling by an integer factor per spatial axis
// (source index = destination * factor) of [b, c, x, y, z] tensors.
template <class T>
Tensor<T> downsample_nearest(const Tensor<T>& t, std::int64_t factor);

}  // namespace axunet
