#pragma once

#include "axunet/volume.hpp"

namespace axunet {

// ET = (label == 4); TC = ET or NCR(1); WT = TC or ED(2).
RegionMaps labels_to_regions(const std::vector<std::uint8_t>& labels,
                             const std::array<std::int64_t, 3>& extents);

// Layered decode: paint 2 where WT, overwrite with 1 where TC, overwrite with
// 4 where ET; zero elsewhere. Resolves inconsistent (non-nested) voxels.
std::vector<std::uint8_t> regions_to_labels(const RegionMaps& masks);

}  // namespace axunet
