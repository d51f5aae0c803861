#include "axunet/phantom.hpp"

#include <cmath>
#include <stdexcept>

#include "axunet/rng.hpp"

namespace axunet {

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;

  bool contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dz = (z - center[2]) / semi[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

// Per-tissue channel means (T1, T1Gd, T2, FLAIR). The tumor compartments are
// strongly separable so a small network can memorize desk-scale cases.
constexpr double kBrain[4] = {1.00, 1.00, 0.90, 0.80};
constexpr double kEdema[4] = {0.75, 0.85, 1.70, 1.90};
constexpr double kEnhancing[4] = {0.90, 2.00, 1.30, 1.40};
constexpr double kNecrotic[4] = {0.45, 0.35, 1.15, 1.00};
constexpr double kNoiseStd = 0.06;

}  // namespace

VolumeCase synth_phantom(std::uint64_t seed, const std::array<std::int64_t, 3>& extents,
                         const std::string& case_id) {
  for (auto e : extents)
    if (e < 16)
      throw std::invalid_argument("phantom extents must be at least 16 per axis to hold the "
                                  "nested tumor structure");
  Rng rng(seed);

  Ellipsoid brain, tumor, core, necrosis;
  for (int a = 0; a < 3; ++a) {
    const double ext = static_cast<double>(extents[a]);
    brain.center[a] = ext / 2.0 + rng.uniform(-0.02, 0.02) * ext;
    brain.semi[a] = rng.uniform(0.40, 0.46) * ext;
  }
  for (int a = 0; a < 3; ++a) {
    const double ext = static_cast<double>(extents[a]);
    tumor.center[a] = brain.center[a] + rng.uniform(-0.08, 0.08) * ext;
    tumor.semi[a] = std::max(3.4, rng.uniform(0.20, 0.24) * ext);
  }
  for (int a = 0; a < 3; ++a) {
    core.center[a] = tumor.center[a];
    core.semi[a] = std::max(2.2, tumor.semi[a] * rng.uniform(0.64, 0.72));
    necrosis.center[a] = tumor.center[a];
    necrosis.semi[a] = std::max(1.1, core.semi[a] * rng.uniform(0.42, 0.52));
  }

  VolumeCase c;
  c.case_id = case_id;
  c.extents = extents;
  c.orig_extents = extents;
  const std::int64_t vox = c.voxel_count();
  c.image = Tensor<double>(Shape{kNumChannels, extents[0], extents[1], extents[2]}, 0.0);
  c.labels.assign(static_cast<std::size_t>(vox), kLabelBackground);

  for (std::int64_t x = 0; x < extents[0]; ++x)
    for (std::int64_t y = 0; y < extents[1]; ++y)
      for (std::int64_t z = 0; z < extents[2]; ++z) {
        const double fx = static_cast<double>(x);
        const double fy = static_cast<double>(y);
        const double fz = static_cast<double>(z);
        if (!brain.contains(fx, fy, fz)) continue;
        const std::int64_t i = (x * extents[1] + y) * extents[2] + z;
        const double* base = kBrain;
        std::uint8_t label = kLabelBackground;
        if (tumor.contains(fx, fy, fz)) {
          if (necrosis.contains(fx, fy, fz)) {
            base = kNecrotic;
            label = kLabelNcr;
          } else if (core.contains(fx, fy, fz)) {
            base = kEnhancing;
            label = kLabelEt;
          } else {
            base = kEdema;
            label = kLabelEd;
          }
        }
        c.labels[static_cast<std::size_t>(i)] = label;
        for (int ch = 0; ch < kNumChannels; ++ch)
          c.image[ch * vox + i] = std::max(0.05, base[ch] + kNoiseStd * rng.normal());
      }
  return c;
}

}  // namespace axunet
