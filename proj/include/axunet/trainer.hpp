#pragma once

#include <array>
#include <string>
#include <vector>

#include "axunet/augment.hpp"
#include "axunet/losses.hpp"
#include "axunet/network.hpp"
#include "axunet/volume.hpp"

namespace axunet {

struct TrainConfig {
  int epochs = 20;
  int minibatches_per_epoch = 10;
  int batch_size = 2;
  double lr_initial = 0.01;
  double lr_power = 0.9;
  double momentum = 0.99;
  bool nesterov = true;
  double foreground_prob = 1.0 / 3.0;
  bool augment_enabled = true;
  AugmentConfig augment;
  LossConfig loss;
  std::uint64_t seed = 1;
  // Stride fraction for the per-epoch dice monitor (1.0 = non-overlapping).
  double monitor_step_fraction = 1.0;
};

// Full-scale training constants: 1000 epochs of 250 minibatches, 5 folds.
TrainConfig paper_train_config();

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::array<double, 3> train_dice{};  // ET, TC, WT on the training cases
  std::array<double, 3> val_dice{};    // ET, TC, WT on the validation cases
};

struct TrainResult {
  std::vector<EpochLog> log;
};

// Trains in place on preprocessed cases. Deterministic given cfg.seed; the
// minibatch stream is a pure function of (seed, epoch, step). Throws on
// non-finite loss with epoch/step context. Validation dice falls back to the
// training cases when no validation cases are supplied.
template <class T>
TrainResult train_network(Network<T>& net, const std::vector<VolumeCase>& train_cases,
                          const std::vector<VolumeCase>& val_cases, const TrainConfig& cfg);

// Mean per-region dice of thresholded sliding-window predictions against the
// cases' own labels (in the cases' current frame).
template <class T>
std::array<double, 3> monitor_region_dice(Network<T>& net, const std::vector<VolumeCase>& cases,
                                          double step_fraction);

// key=value epoch records, one line per epoch.
std::string format_train_log(const std::vector<EpochLog>& log);
void write_train_log(const std::string& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> parse_train_log(const std::string& text);

}  // namespace axunet
