#include "axunet/preprocess.hpp"

#include <cmath>
#include <stdexcept>

namespace axunet {

CropBox nonzero_bounding_box(const VolumeCase& c) {
  const auto& e = c.extents;
  std::array<std::int64_t, 3> lo{e[0], e[1], e[2]};
  std::array<std::int64_t, 3> hi{-1, -1, -1};
  const std::int64_t vox = c.voxel_count();
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z) {
        const std::int64_t i = (x * e[1] + y) * e[2] + z;
        bool any = false;
        for (int ch = 0; ch < kNumChannels && !any; ++ch) any = c.image[ch * vox + i] != 0.0;
        if (!any) continue;
        lo[0] = std::min(lo[0], x);
        lo[1] = std::min(lo[1], y);
        lo[2] = std::min(lo[2], z);
        hi[0] = std::max(hi[0], x);
        hi[1] = std::max(hi[1], y);
        hi[2] = std::max(hi[2], z);
      }
  if (hi[0] < 0)
    throw std::runtime_error("case '" + c.case_id + "' is entirely zero; nothing to crop to");
  CropBox box;
  box.offset = lo;
  for (int a = 0; a < 3; ++a) box.extents[a] = hi[a] - lo[a] + 1;
  return box;
}

VolumeCase crop_nonzero(const VolumeCase& c) {
  const CropBox box = nonzero_bounding_box(c);
  VolumeCase out;
  out.case_id = c.case_id;
  out.spacing = c.spacing;
  out.extents = box.extents;
  out.orig_extents = c.orig_extents[0] > 0 ? c.orig_extents : c.extents;
  for (int a = 0; a < 3; ++a) out.crop_offset[a] = c.crop_offset[a] + box.offset[a];
  const std::int64_t vox_in = c.voxel_count();
  const std::int64_t vox_out = box.extents[0] * box.extents[1] * box.extents[2];
  out.image = Tensor<double>(Shape{kNumChannels, box.extents[0], box.extents[1], box.extents[2]});
  out.labels.resize(static_cast<std::size_t>(vox_out));
  for (std::int64_t x = 0; x < box.extents[0]; ++x)
    for (std::int64_t y = 0; y < box.extents[1]; ++y)
      for (std::int64_t z = 0; z < box.extents[2]; ++z) {
        const std::int64_t src =
            ((x + box.offset[0]) * c.extents[1] + (y + box.offset[1])) * c.extents[2] + z +
            box.offset[2];
        const std::int64_t dst = (x * box.extents[1] + y) * box.extents[2] + z;
        for (int ch = 0; ch < kNumChannels; ++ch)
          out.image[ch * vox_out + dst] = c.image[ch * vox_in + src];
        out.labels[static_cast<std::size_t>(dst)] = c.labels[static_cast<std::size_t>(src)];
      }
  return out;
}

VolumeCase zscore_normalize(const VolumeCase& c) {
  VolumeCase out = c;
  out.image = c.image.clone();
  const std::int64_t vox = c.voxel_count();
  for (int ch = 0; ch < kNumChannels; ++ch) {
    double sum = 0.0, sq = 0.0;
    const double* src = c.image.data() + ch * vox;
    for (std::int64_t i = 0; i < vox; ++i) {
      sum += src[i];
      sq += src[i] * src[i];
    }
    const double mean = sum / static_cast<double>(vox);
    const double var = std::max(0.0, sq / static_cast<double>(vox) - mean * mean);
    const double sd = std::sqrt(var);
    if (sd == 0.0)
      throw std::runtime_error("case '" + c.case_id + "' channel " + std::to_string(ch) +
                               " has zero standard deviation; cannot normalize");
    double* dst = out.image.data() + ch * vox;
    for (std::int64_t i = 0; i < vox; ++i) dst[i] = (src[i] - mean) / sd;
  }
  return out;
}

RegionMaps uncrop_regions(const RegionMaps& maps, const std::array<std::int64_t, 3>& offset,
                          const std::array<std::int64_t, 3>& orig_extents) {
  const auto ext = maps.extents();
  for (int a = 0; a < 3; ++a)
    if (offset[a] < 0 || offset[a] + ext[a] > orig_extents[a])
      throw std::invalid_argument("crop box does not fit inside the original extents");
  RegionMaps out;
  out.kind = maps.kind;
  out.values =
      Tensor<double>(Shape{kNumRegions, orig_extents[0], orig_extents[1], orig_extents[2]}, 0.0);
  const std::int64_t vox_in = ext[0] * ext[1] * ext[2];
  const std::int64_t vox_out = orig_extents[0] * orig_extents[1] * orig_extents[2];
  for (int r = 0; r < kNumRegions; ++r)
    for (std::int64_t x = 0; x < ext[0]; ++x)
      for (std::int64_t y = 0; y < ext[1]; ++y)
        for (std::int64_t z = 0; z < ext[2]; ++z) {
          const std::int64_t src = r * vox_in + (x * ext[1] + y) * ext[2] + z;
          const std::int64_t dst =
              r * vox_out +
              ((x + offset[0]) * orig_extents[1] + (y + offset[1])) * orig_extents[2] + z +
              offset[2];
          out.values[dst] = maps.values[src];
        }
  return out;
}

}  // namespace axunet
