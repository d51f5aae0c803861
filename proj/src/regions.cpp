#include "axunet/regions.hpp"

#include <stdexcept>

namespace axunet {

RegionMaps labels_to_regions(const std::vector<std::uint8_t>& labels,
                             const std::array<std::int64_t, 3>& extents) {
  const std::int64_t vox = extents[0] * extents[1] * extents[2];
  if (static_cast<std::int64_t>(labels.size()) != vox)
    throw std::invalid_argument("label count does not match extents");
  RegionMaps out;
  out.kind = RegionMaps::Kind::binary;
  out.values = Tensor<double>(Shape{kNumRegions, extents[0], extents[1], extents[2]}, 0.0);
  double* et = out.values.data();
  double* tc = et + vox;
  double* wt = tc + vox;
  for (std::int64_t i = 0; i < vox; ++i) {
    const std::uint8_t v = labels[static_cast<std::size_t>(i)];
    if (!valid_label(v))
      throw std::invalid_argument("invalid label value " + std::to_string(v) + " at voxel " +
                                  std::to_string(i));
    if (v == kLabelEt) et[i] = 1.0;
    if (v == kLabelEt || v == kLabelNcr) tc[i] = 1.0;
    if (v != kLabelBackground) wt[i] = 1.0;
  }
  return out;
}

std::vector<std::uint8_t> regions_to_labels(const RegionMaps& masks) {
  if (masks.kind != RegionMaps::Kind::binary)
    throw std::invalid_argument("regions_to_labels requires binary region maps");
  const auto ext = masks.extents();
  const std::int64_t vox = ext[0] * ext[1] * ext[2];
  const double* et = masks.values.data();
  const double* tc = et + vox;
  const double* wt = tc + vox;
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(vox), kLabelBackground);
  for (std::int64_t i = 0; i < vox; ++i) {
    std::uint8_t v = kLabelBackground;
    if (wt[i] != 0.0) v = kLabelEd;
    if (tc[i] != 0.0) v = kLabelNcr;
    if (et[i] != 0.0) v = kLabelEt;
    labels[static_cast<std::size_t>(i)] = v;
  }
  return labels;
}

}  // namespace axunet
