#pragma once

#include "axunet/volume.hpp"

namespace axunet {

struct CropBox {
  std::array<std::int64_t, 3> offset{};
  std::array<std::int64_t, 3> extents{};
};

// Minimal axis-aligned box containing every voxel where any channel != 0.
// Throws if the whole volume is zero.
CropBox nonzero_bounding_box(const VolumeCase& c);

// Crops image and labels to the nonzero box and records the provenance needed
// to place predictions back into the original frame.
VolumeCase crop_nonzero(const VolumeCase& c);

// Per channel over all voxels: (v - mean) / std. Throws on zero std.
VolumeCase zscore_normalize(const VolumeCase& c);

inline VolumeCase preprocess_case(const VolumeCase& c) { return zscore_normalize(crop_nonzero(c)); }

// Embeds cropped-frame region maps back into the original extents (zero fill).
RegionMaps uncrop_regions(const RegionMaps& maps, const std::array<std::int64_t, 3>& offset,
                          const std::array<std::int64_t, 3>& orig_extents);

}  // namespace axunet
