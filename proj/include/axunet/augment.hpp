#pragma once

#include "axunet/rng.hpp"
#include "axunet/volume.hpp"

namespace axunet {

// Paired image/label patch fed to the network.
struct PatchSample {
  Tensor<double> image;  // [4, px, py, pz]
  std::vector<std::uint8_t> labels;
  std::array<std::int64_t, 3> extents{};
};

struct AugmentConfig {
  double p_spatial = 0.2;  // combined rotation + scaling
  double rotation_max_deg = 30.0;
  double scale_min = 0.7;
  double scale_max = 1.4;
  double p_elastic = 0.2;
  double elastic_sigma_vox = 2.0;  // control-point displacement std, in voxels
  int elastic_grid = 4;            // control cells per axis
  double p_brightness = 0.15;
  double brightness_max = 0.1;  // additive, in units of the (normalized) std
  double p_gamma = 0.15;
  double gamma_min = 0.7;
  double gamma_max = 1.5;

  void validate() const;
};

// Resamples through the inverse of `forward` (a 3x3 voxel-space matrix applied
// about the patch center) plus an optional per-voxel displacement field
// [3, px, py, pz]. Image channels are interpolated trilinearly, labels by
// nearest neighbor; samples outside the patch read as zero.
PatchSample apply_spatial_transform(const PatchSample& s, const std::array<double, 9>& forward,
                                    const Tensor<double>* displacement);

// v -> ((v-lo)/(hi-lo))^gamma rescaled back, per channel. gamma == 1 is an
// exact no-op.
void apply_gamma(Tensor<double>& image, double gamma);

// With every probability zero this is a bit-identical passthrough.
PatchSample augment(const PatchSample& s, Rng& rng, const AugmentConfig& cfg);

}  // namespace axunet
