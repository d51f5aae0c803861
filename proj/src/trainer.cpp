#include "axunet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "axunet/inference.hpp"
#include "axunet/metrics.hpp"
#include "axunet/optimizer.hpp"
#include "axunet/regions.hpp"
#include "axunet/sampling.hpp"

namespace axunet {

TrainConfig paper_train_config() {
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.minibatches_per_epoch = 250;
  return cfg;
}

template <class T>
std::array<double, 3> monitor_region_dice(Network<T>& net, const std::vector<VolumeCase>& cases,
                                          double step_fraction) {
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  if (cases.empty()) return acc;
  SlidingWindowConfig sw;
  sw.step_fraction = step_fraction;
  sw.uncrop = false;  // compare in the cases' own (cropped) frame
  for (const auto& c : cases) {
    const RegionMaps pred = binarize(sliding_window_predict(net, c, sw));
    const RegionMaps gt = labels_to_regions(c.labels, c.extents);
    for (int r = 0; r < kNumRegions; ++r)
      acc[static_cast<std::size_t>(r)] += dice_score(region_mask(pred, r), region_mask(gt, r));
  }
  for (auto& v : acc) v /= static_cast<double>(cases.size());
  return acc;
}

namespace {

template <class T>
void fill_batch_entry(Tensor<T>& input, Tensor<T>& target, std::int64_t slot,
                      const PatchSample& sample) {
  const std::int64_t ivox = sample.image.size();
  for (std::int64_t i = 0; i < ivox; ++i)
    input[slot * ivox + i] = static_cast<T>(sample.image[i]);
  const RegionMaps regions = labels_to_regions(sample.labels, sample.extents);
  const std::int64_t tvox = regions.values.size();
  for (std::int64_t i = 0; i < tvox; ++i)
    target[slot * tvox + i] = static_cast<T>(regions.values[i]);
}

}  // namespace

template <class T>
TrainResult train_network(Network<T>& net, const std::vector<VolumeCase>& train_cases,
                          const std::vector<VolumeCase>& val_cases, const TrainConfig& cfg) {
  if (train_cases.empty()) throw std::invalid_argument("no training cases");
  if (cfg.epochs < 1 || cfg.minibatches_per_epoch < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train config requires positive epoch/minibatch/batch counts");
  const auto patch = net.config().patch;
  const Rng master(cfg.seed);
  SgdNesterov<T> opt(cfg.momentum, cfg.nesterov);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = poly_lr(epoch, cfg.lr_initial, cfg.epochs, cfg.lr_power);
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.minibatches_per_epoch; ++step) {
      Rng rng = master.derive(static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(step));
      Tensor<T> input(Shape{cfg.batch_size, kNumChannels, patch[0], patch[1], patch[2]});
      Tensor<T> target(Shape{cfg.batch_size, kNumRegions, patch[0], patch[1], patch[2]});
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& c = train_cases[static_cast<std::size_t>(
            rng.integer(static_cast<std::int64_t>(train_cases.size())))];
        PatchSample s = sample_patch(c, rng, patch, cfg.foreground_prob);
        if (cfg.augment_enabled) s = augment(s, rng, cfg.augment);
        fill_batch_entry(input, target, b, s);
      }

      Graph<T> g;
      Val in = g.constant(input);
      typename Network<T>::Bindings bind;
      const std::vector<Val> heads = net.forward(g, in, Network<T>::Mode::train, &bind);
      Val loss = deep_supervision_loss(g, heads, target, cfg.loss);
      const double loss_value = static_cast<double>(g.value(loss)[0]);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("non-finite training loss " + std::to_string(loss_value) +
                                 " at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step));
      loss_sum += loss_value;
      g.backward_scalar(loss);

      std::map<std::string, Tensor<T>> grads;
      for (const auto& [name, val] : bind.registered)
        if (g.has_grad(val)) grads.emplace(name, g.grad(val));
      opt.step(net, grads, lr);
    }

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.train_loss = loss_sum / static_cast<double>(cfg.minibatches_per_epoch);
    el.train_dice = monitor_region_dice(net, train_cases, cfg.monitor_step_fraction);
    el.val_dice = val_cases.empty()
                      ? el.train_dice
                      : monitor_region_dice(net, val_cases, cfg.monitor_step_fraction);
    result.log.push_back(el);
  }
  return result;
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  char buf[320];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf,
                  "epoch=%d lr=%.8f train_loss=%.8f train_dice_et=%.6f train_dice_tc=%.6f "
                  "train_dice_wt=%.6f val_dice_et=%.6f val_dice_tc=%.6f val_dice_wt=%.6f\n",
                  e.epoch, e.lr, e.train_loss, e.train_dice[0], e.train_dice[1], e.train_dice[2],
                  e.val_dice[0], e.val_dice[1], e.val_dice[2]);
    os << buf;
  }
  return os.str();
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  atomic_write_file(path, format_train_log(log));
}

std::vector<EpochLog> parse_train_log(const std::string& text) {
  std::vector<EpochLog> log;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochLog e;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const double v = std::stod(tok.substr(eq + 1));
      if (key == "epoch") e.epoch = static_cast<int>(v);
      else if (key == "lr") e.lr = v;
      else if (key == "train_loss") e.train_loss = v;
      else if (key == "train_dice_et") e.train_dice[0] = v;
      else if (key == "train_dice_tc") e.train_dice[1] = v;
      else if (key == "train_dice_wt") e.train_dice[2] = v;
      else if (key == "val_dice_et") e.val_dice[0] = v;
      else if (key == "val_dice_tc") e.val_dice[1] = v;
      else if (key == "val_dice_wt") e.val_dice[2] = v;
    }
    log.push_back(e);
  }
  return log;
}

template TrainResult train_network<float>(Network<float>&, const std::vector<VolumeCase>&,
                                          const std::vector<VolumeCase>&, const TrainConfig&);
template TrainResult train_network<double>(Network<double>&, const std::vector<VolumeCase>&,
                                           const std::vector<VolumeCase>&, const TrainConfig&);
template std::array<double, 3> monitor_region_dice<float>(Network<float>&,
                                                          const std::vector<VolumeCase>&, double);
template std::array<double, 3> monitor_region_dice<double>(Network<double>&,
                                                           const std::vector<VolumeCase>&, double);

}  // namespace axunet
