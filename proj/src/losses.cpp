#include "axunet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace axunet {

std::vector<double> default_supervision_weights(int levels) {
  if (levels < 1) throw std::invalid_argument("need at least one supervised level");
  std::vector<double> w(static_cast<std::size_t>(levels));
  double sum = 0.0;
  for (int i = 0; i < levels; ++i) {
    w[static_cast<std::size_t>(i)] = std::ldexp(1.0, -i);
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

double poly_lr(int epoch, double initial, int total, double power) {
  if (epoch < 0 || epoch >= total)
    throw std::invalid_argument("poly_lr epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(total) + ")");
  return initial * std::pow(1.0 - static_cast<double>(epoch) / static_cast<double>(total), power);
}

namespace {

template <class T>
void validate_binary_targets(const Tensor<T>& targets) {
  for (std::int64_t i = 0; i < targets.size(); ++i)
    if (targets[i] != T(0) && targets[i] != T(1))
      throw std::invalid_argument("loss targets must be binary; found " +
                                  std::to_string(static_cast<double>(targets[i])) + " at index " +
                                  std::to_string(i));
}

}  // namespace

template <class T>
Val bce_dice_loss(Graph<T>& g, Val logits, const Tensor<T>& targets, DiceMode mode,
                  double smooth_epsilon) {
  const Tensor<T>& lv = g.value(logits);
  if (lv.shape() != targets.shape())
    throw std::invalid_argument("loss shapes differ: logits " + shape_str(lv.shape()) +
                                " vs targets " + shape_str(targets.shape()));
  if (lv.rank() != 5)
    throw std::invalid_argument("loss expects [batch, regions, x, y, z] tensors");
  if (smooth_epsilon <= 0) throw std::invalid_argument("dice smoothing epsilon must be positive");
  validate_binary_targets(targets);

  Val tgt = g.constant(targets);
  Val bce = g.bce_with_logits_mean(logits, tgt);

  Val probs = g.sigmoid(logits);
  Val inter = g.mul(probs, tgt);
  Val eps = g.scalar(static_cast<T>(smooth_epsilon));
  Val two = g.scalar(T(2));
  Val one = g.scalar(T(1));

  const std::vector<int> pool_axes =
      mode == DiceMode::batch ? std::vector<int>{0, 2, 3, 4} : std::vector<int>{2, 3, 4};
  Val num = g.add(g.mul(two, g.reduce_sum(inter, pool_axes)), eps);
  Val den = g.add(g.add(g.reduce_sum(probs, pool_axes), g.reduce_sum(tgt, pool_axes)), eps);
  Val dice = g.div(num, den);  // [regions] or [batch, regions]
  std::vector<int> mean_axes(static_cast<std::size_t>(g.value(dice).rank()));
  for (std::size_t i = 0; i < mean_axes.size(); ++i) mean_axes[i] = static_cast<int>(i);
  Val dice_mean = g.reduce_mean(dice, mean_axes);
  return g.add(bce, g.sub(one, dice_mean));
}

template <class T>
Tensor<T> downsample_nearest(const Tensor<T>& t, std::int64_t factor) {
  if (t.rank() != 5) throw std::invalid_argument("downsample expects a 5-D tensor");
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return t;
  const Shape& s = t.shape();
  for (int a = 2; a < 5; ++a)
    if (s[static_cast<std::size_t>(a)] % factor != 0)
      throw std::invalid_argument("extents " + shape_str(s) + " not divisible by factor " +
                                  std::to_string(factor));
  const Shape os{s[0], s[1], s[2] / factor, s[3] / factor, s[4] / factor};
  Tensor<T> out(os);
  const std::int64_t bc = s[0] * s[1];
  const std::int64_t ivox = s[2] * s[3] * s[4];
  const std::int64_t ovox = os[2] * os[3] * os[4];
  for (std::int64_t t2 = 0; t2 < bc; ++t2) {
    const T* src = t.data() + t2 * ivox;
    T* dst = out.data() + t2 * ovox;
    for (std::int64_t x = 0; x < os[2]; ++x)
      for (std::int64_t y = 0; y < os[3]; ++y)
        for (std::int64_t z = 0; z < os[4]; ++z)
          dst[(x * os[3] + y) * os[4] + z] =
              src[((x * factor) * s[3] + y * factor) * s[4] + z * factor];
  }
  return out;
}

template <class T>
Val deep_supervision_loss(Graph<T>& g, const std::vector<Val>& outputs,
                          const Tensor<T>& full_res_targets, const LossConfig& cfg) {
  if (outputs.empty()) throw std::invalid_argument("no supervised outputs");
  std::vector<double> weights = cfg.deep_supervision_weights.empty()
                                    ? default_supervision_weights(static_cast<int>(outputs.size()))
                                    : cfg.deep_supervision_weights;
  if (weights.size() != outputs.size())
    throw std::invalid_argument("deep supervision weight count " +
                                std::to_string(weights.size()) + " != output count " +
                                std::to_string(outputs.size()));
  for (double w : weights)
    if (w < 0) throw std::invalid_argument("deep supervision weights must be nonnegative");

  Val total{};
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Shape& os = g.value(outputs[i]).shape();
    const std::int64_t factor = full_res_targets.shape()[2] / os[2];
    if (factor * os[2] != full_res_targets.shape()[2])
      throw std::invalid_argument("output resolution " + shape_str(os) +
                                  " is not an integer divisor of the target resolution");
    const Tensor<T> tgt = downsample_nearest(full_res_targets, factor);
    Val term = g.mul(bce_dice_loss(g, outputs[i], tgt, cfg.dice_mode, cfg.smooth_epsilon),
                     g.scalar(static_cast<T>(weights[i])));
    total = i == 0 ? term : g.add(total, term);
  }
  return total;
}

double soft_dice_value(const Tensor<double>& probs, const Tensor<double>& targets, DiceMode mode,
                       double smooth_epsilon) {
  if (probs.shape() != targets.shape())
    throw std::invalid_argument("dice shapes differ: " + shape_str(probs.shape()) + " vs " +
                                shape_str(targets.shape()));
  const Shape& s = probs.shape();
  const std::int64_t b = s[0], r = s[1];
  const std::int64_t vox = s[2] * s[3] * s[4];
  double total = 0.0;
  std::int64_t terms = 0;
  if (mode == DiceMode::batch) {
    for (std::int64_t c = 0; c < r; ++c) {
      double inter = 0.0, psum = 0.0, tsum = 0.0;
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const double* p = probs.data() + (bi * r + c) * vox;
        const double* t = targets.data() + (bi * r + c) * vox;
        for (std::int64_t i = 0; i < vox; ++i) {
          inter += p[i] * t[i];
          psum += p[i];
          tsum += t[i];
        }
      }
      total += (2.0 * inter + smooth_epsilon) / (psum + tsum + smooth_epsilon);
      ++terms;
    }
  } else {
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t c = 0; c < r; ++c) {
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        const double* p = probs.data() + (bi * r + c) * vox;
        const double* t = targets.data() + (bi * r + c) * vox;
        for (std::int64_t i = 0; i < vox; ++i) {
          inter += p[i] * t[i];
          psum += p[i];
          tsum += t[i];
        }
        total += (2.0 * inter + smooth_epsilon) / (psum + tsum + smooth_epsilon);
        ++terms;
      }
  }
  return total / static_cast<double>(terms);
}

template Val bce_dice_loss<float>(Graph<float>&, Val, const Tensor<float>&, DiceMode, double);
template Val bce_dice_loss<double>(Graph<double>&, Val, const Tensor<double>&, DiceMode, double);
template Val deep_supervision_loss<float>(Graph<float>&, const std::vector<Val>&,
                                          const Tensor<float>&, const LossConfig&);
template Val deep_supervision_loss<double>(Graph<double>&, const std::vector<Val>&,
                                           const Tensor<double>&, const LossConfig&);
template Tensor<float> downsample_nearest<float>(const Tensor<float>&, std::int64_t);
template Tensor<double> downsample_nearest<double>(const Tensor<double>&, std::int64_t);

}  // namespace axunet
