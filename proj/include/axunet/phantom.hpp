#pragma once

#include "axunet/volume.hpp"

namespace axunet {

// Synthetic subject: a brain ellipsoid containing a nested tumor (edema shell,
// enhancing rim, necrotic core) with channel-dependent intensity profiles and
// voxel noise. Deterministic per seed; extents must be at least 16 per axis.
VolumeCase synth_phantom(std::uint64_t seed, const std::array<std::int64_t, 3>& extents,
                         const std::string& case_id = "phantom");

}  // namespace axunet
