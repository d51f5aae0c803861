#include "axunet/sampling.hpp"

#include <algorithm>
#include <stdexcept>

namespace axunet {

PatchSample sample_patch(const VolumeCase& c, Rng& rng,
                         const std::array<std::int64_t, 3>& patch, double foreground_prob) {
  for (auto p : patch)
    if (p < 1) throw std::invalid_argument("patch extents must be positive");
  const auto& e = c.extents;
  const std::int64_t vox = c.voxel_count();

  const bool forced = rng.bernoulli(foreground_prob);
  std::array<std::int64_t, 3> start{};
  bool placed = false;
  if (forced) {
    std::vector<std::int64_t> tumor;
    for (std::int64_t i = 0; i < vox; ++i)
      if (c.labels[static_cast<std::size_t>(i)] != kLabelBackground) tumor.push_back(i);
    if (!tumor.empty()) {
      const std::int64_t pick = tumor[static_cast<std::size_t>(
          rng.integer(static_cast<std::int64_t>(tumor.size())))];
      const std::array<std::int64_t, 3> center{pick / (e[1] * e[2]), (pick / e[2]) % e[1],
                                               pick % e[2]};
      for (int a = 0; a < 3; ++a) start[a] = center[a] - patch[a] / 2;
      placed = true;
    }
  }
  if (!placed) {
    for (int a = 0; a < 3; ++a) {
      if (e[a] >= patch[a])
        start[a] = rng.integer(e[a] - patch[a] + 1);
      else
        start[a] = -((patch[a] - e[a]) / 2);
    }
  }

  PatchSample s;
  s.extents = patch;
  const std::int64_t pvox = patch[0] * patch[1] * patch[2];
  s.image = Tensor<double>(Shape{kNumChannels, patch[0], patch[1], patch[2]}, 0.0);
  s.labels.assign(static_cast<std::size_t>(pvox), 0);
  for (std::int64_t x = 0; x < patch[0]; ++x) {
    const std::int64_t sx = start[0] + x;
    if (sx < 0 || sx >= e[0]) continue;
    for (std::int64_t y = 0; y < patch[1]; ++y) {
      const std::int64_t sy = start[1] + y;
      if (sy < 0 || sy >= e[1]) continue;
      const std::int64_t z_lo = std::max<std::int64_t>(0, -start[2]);
      const std::int64_t z_hi = std::min<std::int64_t>(patch[2], e[2] - start[2]);
      for (std::int64_t z = z_lo; z < z_hi; ++z) {
        const std::int64_t src = (sx * e[1] + sy) * e[2] + start[2] + z;
        const std::int64_t dst = (x * patch[1] + y) * patch[2] + z;
        for (int ch = 0; ch < kNumChannels; ++ch)
          s.image[ch * pvox + dst] = c.image[ch * vox + src];
        s.labels[static_cast<std::size_t>(dst)] = c.labels[static_cast<std::size_t>(src)];
      }
    }
  }
  return s;
}

std::vector<std::string> FoldSplit::training_cases(int fold) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (static_cast<int>(i) == fold) continue;
    out.insert(out.end(), folds[i].begin(), folds[i].end());
  }
  return out;
}

FoldSplit make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("fold count must be >= 1");
  if (static_cast<int>(case_ids.size()) < k)
    throw std::invalid_argument("need at least " + std::to_string(k) + " cases for " +
                                std::to_string(k) + "-fold splitting, have " +
                                std::to_string(case_ids.size()));
  std::sort(case_ids.begin(), case_ids.end());
  Rng rng(seed);
  for (std::int64_t i = static_cast<std::int64_t>(case_ids.size()) - 1; i > 0; --i)
    std::swap(case_ids[static_cast<std::size_t>(i)],
              case_ids[static_cast<std::size_t>(rng.integer(i + 1))]);
  FoldSplit split;
  split.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < case_ids.size(); ++i)
    split.folds[i % static_cast<std::size_t>(k)].push_back(case_ids[i]);
  return split;
}

}  // namespace axunet
