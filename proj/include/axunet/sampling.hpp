#pragma once

#include "axunet/augment.hpp"
#include "axunet/rng.hpp"
#include "axunet/volume.hpp"

namespace axunet {

// With probability foreground_prob the patch is centered exactly on a random
// tumor voxel (padding with zeros where it sticks out); otherwise the start is
// uniform over the in-bounds placements, centered when the volume is smaller
// than the patch.
PatchSample sample_patch(const VolumeCase& c, Rng& rng,
                         const std::array<std::int64_t, 3>& patch, double foreground_prob);

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;

  std::vector<std::string> validation_cases(int fold) const { return folds.at(static_cast<std::size_t>(fold)); }
  std::vector<std::string> training_cases(int fold) const;
};

// Sorted ids, seeded shuffle, round-robin assignment. Fold sizes differ by at
// most one.
FoldSplit make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed);

}  // namespace axunet
