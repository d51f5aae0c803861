#include <doctest.h>

#include <cmath>

#include "axunet/losses.hpp"
#include "axunet/optimizer.hpp"
#include "axunet/rng.hpp"
#include "test_util.hpp"

using namespace axunet;
using axunet::testing::random_tensor;

namespace {

// Flat-loop bce + dice oracle over [b, r, x, y, z] arrays.
double bce_dice_oracle(const TensorD& logits, const TensorD& targets, DiceMode mode, double eps) {
  double bce = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double t = targets[i];
    bce += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  bce /= static_cast<double>(logits.size());
  TensorD probs(logits.shape());
  for (std::int64_t i = 0; i < logits.size(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return bce + 1.0 - soft_dice_value(probs, targets, mode, eps);
}

}  // namespace

TEST_CASE("poly_lr matches the closed form") {
  CHECK(poly_lr(0) == 0.01);
  CHECK(poly_lr(500) == doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-15));
  CHECK(poly_lr(999) == doctest::Approx(0.01 * std::pow(0.001, 0.9)).epsilon(1e-15));
  CHECK_THROWS_AS(poly_lr(1000), std::invalid_argument);
  CHECK_THROWS_AS(poly_lr(-1), std::invalid_argument);
  for (int e = 1; e < 1000; ++e) CHECK(poly_lr(e) < poly_lr(e - 1));
}

TEST_CASE("default deep supervision weights") {
  const auto w2 = default_supervision_weights(2);
  CHECK(w2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(w2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto w1 = default_supervision_weights(1);
  CHECK(w1[0] == 1.0);
}

TEST_CASE("saturated predictions drive the loss to zero") {
  TensorD targets(Shape{1, 3, 2, 2, 2});
  Rng rng(12);
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  TensorD logits(targets.shape());
  for (std::int64_t i = 0; i < targets.size(); ++i) logits[i] = targets[i] == 1.0 ? 40.0 : -40.0;
  Graph<double> g;
  Val loss = bce_dice_loss(g, g.constant(logits), targets, DiceMode::batch, 1e-5);
  CHECK(g.value(loss)[0] < 1e-6);
}

TEST_CASE("empty-empty dice convention via epsilon") {
  TensorD probs(Shape{1, 3, 2, 2, 2}, 0.0);
  TensorD targets(Shape{1, 3, 2, 2, 2}, 0.0);
  CHECK(soft_dice_value(probs, targets, DiceMode::batch, 1e-5) == 1.0);
  CHECK(soft_dice_value(probs, targets, DiceMode::sample, 1e-5) == 1.0);
}

TEST_CASE("batch dice differs from sample dice and matches the flat-loop oracle") {
  // sample A perfectly predicted, sample B half correct
  const Shape shape{2, 3, 2, 2, 2};
  TensorD targets(shape);
  Rng rng(13);
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  TensorD logits(shape);
  const std::int64_t half = targets.size() / 2;
  for (std::int64_t i = 0; i < half; ++i) logits[i] = targets[i] == 1.0 ? 9.0 : -9.0;
  for (std::int64_t i = half; i < targets.size(); ++i)
    logits[i] = (i % 2 == 0) == (targets[i] == 1.0) ? 7.5 : -7.5;

  Graph<double> g;
  Val lb = bce_dice_loss(g, g.constant(logits), targets, DiceMode::batch, 1e-5);
  Val ls = bce_dice_loss(g, g.constant(logits), targets, DiceMode::sample, 1e-5);
  const double ob = bce_dice_oracle(logits, targets, DiceMode::batch, 1e-5);
  const double os = bce_dice_oracle(logits, targets, DiceMode::sample, 1e-5);
  CHECK(std::abs(g.value(lb)[0] - ob) < 1e-10);
  CHECK(std::abs(g.value(ls)[0] - os) < 1e-10);
  CHECK(std::abs(ob - os) > 1e-4);  // pooling the batch genuinely changes the value
}

TEST_CASE("batch mode equals sample mode at batch size 1") {
  Rng rng(14);
  TensorD logits = random_tensor<double>(rng, {1, 3, 3, 3, 3}, -2.0, 2.0);
  TensorD targets(logits.shape());
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Graph<double> g;
  Val lb = bce_dice_loss(g, g.constant(logits), targets, DiceMode::batch, 1e-5);
  Val ls = bce_dice_loss(g, g.constant(logits), targets, DiceMode::sample, 1e-5);
  CHECK(g.value(lb)[0] == g.value(ls)[0]);
}

TEST_CASE("loss rejects shape mismatches and non-binary targets") {
  Graph<double> g;
  Rng rng(15);
  TensorD logits = random_tensor<double>(rng, {1, 3, 2, 2, 2});
  CHECK_THROWS_AS(bce_dice_loss(g, g.constant(logits), TensorD(Shape{1, 3, 2, 2, 4}, 0.0),
                                DiceMode::batch, 1e-5),
                  std::invalid_argument);
  TensorD bad(logits.shape(), 0.0);
  bad[3] = 0.5;
  CHECK_THROWS_WITH_AS(bce_dice_loss(g, g.constant(logits), bad, DiceMode::batch, 1e-5),
                       doctest::Contains("binary"), std::invalid_argument);
}

TEST_CASE("loss gradient passes finite differences") {
  Rng rng(16);
  TensorD logits = random_tensor<double>(rng, {2, 3, 2, 2, 2}, -1.5, 1.5);
  TensorD targets(logits.shape());
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  for (DiceMode mode : {DiceMode::batch, DiceMode::sample}) {
    auto build = [&](Graph<double>& g, Val p) {
      return bce_dice_loss(g, p, targets, mode, 1e-5);
    };
    FdOptions o;
    o.step = 1e-6;
    CHECK(finite_difference_check<double>(build, logits, o).max_rel_error < 1e-6);
  }
}

TEST_CASE("deep supervision weighting") {
  Rng rng(17);
  TensorD targets(Shape{1, 3, 4, 4, 4});
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  TensorD full = random_tensor<double>(rng, {1, 3, 4, 4, 4});
  TensorD half = random_tensor<double>(rng, {1, 3, 2, 2, 2});

  // single level with weight [1] reduces to bce_dice_loss
  {
    Graph<double> g;
    LossConfig cfg;
    cfg.deep_supervision_weights = {1.0};
    Val a = deep_supervision_loss(g, {g.constant(full)}, targets, cfg);
    Val b = bce_dice_loss(g, g.constant(full), targets, DiceMode::batch, cfg.smooth_epsilon);
    CHECK(g.value(a)[0] == doctest::Approx(g.value(b)[0]).epsilon(1e-15));
  }
  // two levels match the hand-computed weighted sum
  {
    Graph<double> g;
    LossConfig cfg;
    cfg.deep_supervision_weights = {2.0 / 3.0, 1.0 / 3.0};
    Val total = deep_supervision_loss(g, {g.constant(full), g.constant(half)}, targets, cfg);
    const TensorD tgt_half = downsample_nearest(targets, 2);
    const double expect = 2.0 / 3.0 * bce_dice_oracle(full, targets, DiceMode::batch, 1e-5) +
                          1.0 / 3.0 * bce_dice_oracle(half, tgt_half, DiceMode::batch, 1e-5);
    CHECK(std::abs(g.value(total)[0] - expect) < 1e-12);
  }
  // zero weight silences the gradient of that level exactly
  {
    Graph<double> g;
    LossConfig cfg;
    cfg.deep_supervision_weights = {1.0, 0.0};
    Val lf = g.leaf(full.clone());
    Val lh = g.leaf(half.clone());
    Val total = deep_supervision_loss(g, {lf, lh}, targets, cfg);
    g.backward_scalar(total);
    const TensorD& gh = g.grad(lh);
    for (std::int64_t i = 0; i < gh.size(); ++i) CHECK(gh[i] == 0.0);
  }
  // weight-count mismatch
  {
    Graph<double> g;
    LossConfig cfg;
    cfg.deep_supervision_weights = {0.5, 0.3, 0.2};
    CHECK_THROWS_AS(deep_supervision_loss(g, {g.constant(full)}, targets, cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("nearest downsampling keeps the binary alphabet") {
  Rng rng(18);
  TensorD t(Shape{1, 3, 4, 4, 4});
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const TensorD d = downsample_nearest(t, 2);
  CHECK(d.shape() == Shape{1, 3, 2, 2, 2});
  for (std::int64_t i = 0; i < d.size(); ++i) CHECK((d[i] == 0.0 || d[i] == 1.0));
}

TEST_CASE("sgd nesterov examples") {
  // zero gradient leaves parameters unchanged
  {
    SgdNesterov<double> opt(0.99, true);
    TensorD p(Shape{3}, {1.0, -2.0, 0.5});
    opt.step_param("w", p, TensorD(Shape{3}, 0.0), 0.1);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
    CHECK(p[2] == 0.5);
  }
  // momentum 0 reduces to vanilla SGD
  {
    SgdNesterov<double> opt(0.0, true);
    TensorD p(Shape{1}, {1.0});
    opt.step_param("w", p, TensorD(Shape{1}, {0.25}), 0.1);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.25).epsilon(1e-15));
  }
  // three steps on f(w) = w^2 match a scalar hand iteration
  {
    SgdNesterov<double> opt(0.99, true);
    TensorD p(Shape{1}, {1.0});
    double w = 1.0, buf = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double g = 2.0 * w;
      opt.step_param("w", p, TensorD(Shape{1}, {2.0 * p[0]}), 0.1);
      buf = 0.99 * buf + g;
      w -= 0.1 * (g + 0.99 * buf);
      CHECK(std::abs(p[0] - w) < 1e-12);
    }
  }
  // non-finite gradients abort with the parameter name
  {
    SgdNesterov<double> opt(0.99, true);
    TensorD p(Shape{1}, {1.0});
    CHECK_THROWS_WITH_AS(
        opt.step_param("enc0.conv0.w", p,
                       TensorD(Shape{1}, {std::numeric_limits<double>::quiet_NaN()}), 0.1),
        doctest::Contains("enc0.conv0.w"), std::runtime_error);
  }
}
