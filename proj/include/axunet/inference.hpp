#pragma once

#include "axunet/network.hpp"
#include "axunet/volume.hpp"

namespace axunet {

struct SlidingWindowConfig {
  double step_fraction = 0.5;          // window stride as a fraction of the patch
  double gaussian_sigma_divisor = 8.0; // sigma = patch / divisor, per axis
  bool uncrop = true;                  // place the result back into the original frame
};

// Tiles the (preprocessed) volume with overlapping patches, averages sigmoid
// probabilities under a center-weighted Gaussian window, and restores the
// original extents using the case's crop provenance. Voxels covered by a
// single window carry that window's probabilities exactly.
template <class T>
RegionMaps sliding_window_predict(Network<T>& net, const VolumeCase& c,
                                  const SlidingWindowConfig& cfg = {});

// Voxelwise arithmetic mean of probability maps.
RegionMaps ensemble(const std::vector<RegionMaps>& maps);

// value >= threshold -> 1 else 0, per channel.
RegionMaps binarize(const RegionMaps& probs, double threshold = 0.5);

// Converts all ET voxels to NCR when the whole-volume ET count is below
// min_et_voxels.
std::vector<std::uint8_t> postprocess_et(std::vector<std::uint8_t> labels,
                                         std::int64_t min_et_voxels = 200);

}  // namespace axunet
