#include "axunet/inference.hpp"

#include <cmath>
#include <stdexcept>

#include "axunet/preprocess.hpp"

namespace axunet {

namespace {

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double fraction) {
  const std::int64_t last = extent - patch;
  std::vector<std::int64_t> starts{0};
  if (last <= 0) return starts;
  std::int64_t step = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(patch)));
  step = std::max<std::int64_t>(1, std::min(step, patch));
  for (std::int64_t s = step; s < last; s += step) starts.push_back(s);
  starts.push_back(last);
  return starts;
}

}  // namespace

template <class T>
RegionMaps sliding_window_predict(Network<T>& net, const VolumeCase& c,
                                  const SlidingWindowConfig& cfg) {
  if (cfg.step_fraction <= 0.0 || cfg.step_fraction > 1.0)
    throw std::invalid_argument("step fraction must lie in (0, 1]");
  const auto patch = net.config().patch;
  const auto& ext = c.extents;
  if (c.image.shape() != Shape{kNumChannels, ext[0], ext[1], ext[2]})
    throw std::invalid_argument("case image shape " + shape_str(c.image.shape()) +
                                " does not match extents");

  // Pad up to the patch size, centered.
  std::array<std::int64_t, 3> pext{}, poff{};
  for (int a = 0; a < 3; ++a) {
    pext[a] = std::max(ext[a], patch[a]);
    poff[a] = (pext[a] - ext[a]) / 2;
  }
  const std::int64_t pvox = pext[0] * pext[1] * pext[2];
  const std::int64_t cvox = c.voxel_count();
  Tensor<double> padded(Shape{kNumChannels, pext[0], pext[1], pext[2]}, 0.0);
  for (int ch = 0; ch < kNumChannels; ++ch)
    for (std::int64_t x = 0; x < ext[0]; ++x)
      for (std::int64_t y = 0; y < ext[1]; ++y) {
        const double* src = c.image.data() + ch * cvox + (x * ext[1] + y) * ext[2];
        double* dst = padded.data() + ch * pvox +
                      ((x + poff[0]) * pext[1] + y + poff[1]) * pext[2] + poff[2];
        for (std::int64_t z = 0; z < ext[2]; ++z) dst[z] = src[z];
      }

  // Center-weighted window, peak 1 at the patch center.
  const std::int64_t wvox = patch[0] * patch[1] * patch[2];
  std::vector<double> weight(static_cast<std::size_t>(wvox));
  for (std::int64_t x = 0; x < patch[0]; ++x)
    for (std::int64_t y = 0; y < patch[1]; ++y)
      for (std::int64_t z = 0; z < patch[2]; ++z) {
        double r2 = 0.0;
        const std::array<std::int64_t, 3> v{x, y, z};
        for (int a = 0; a < 3; ++a) {
          const double sigma = static_cast<double>(patch[a]) / cfg.gaussian_sigma_divisor;
          const double d = (static_cast<double>(v[a]) - (static_cast<double>(patch[a]) - 1.0) / 2.0) / sigma;
          r2 += d * d;
        }
        weight[static_cast<std::size_t>((x * patch[1] + y) * patch[2] + z)] = std::exp(-0.5 * r2);
      }

  const auto xs = window_starts(pext[0], patch[0], cfg.step_fraction);
  const auto ys = window_starts(pext[1], patch[1], cfg.step_fraction);
  const auto zs = window_starts(pext[2], patch[2], cfg.step_fraction);

  Tensor<double> acc(Shape{kNumRegions, pext[0], pext[1], pext[2]}, 0.0);
  Tensor<double> raw(Shape{kNumRegions, pext[0], pext[1], pext[2]}, 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(pvox), 0.0);
  std::vector<std::int32_t> cover(static_cast<std::size_t>(pvox), 0);

  Tensor<T> input(Shape{1, kNumChannels, patch[0], patch[1], patch[2]});
  for (std::int64_t sx : xs)
    for (std::int64_t sy : ys)
      for (std::int64_t sz : zs) {
        for (int ch = 0; ch < kNumChannels; ++ch)
          for (std::int64_t x = 0; x < patch[0]; ++x)
            for (std::int64_t y = 0; y < patch[1]; ++y) {
              const double* src = padded.data() + ch * pvox +
                                  ((x + sx) * pext[1] + y + sy) * pext[2] + sz;
              T* dst = input.data() + (ch * patch[0] + x) * patch[1] * patch[2] + y * patch[2];
              for (std::int64_t z = 0; z < patch[2]; ++z) dst[z] = static_cast<T>(src[z]);
            }
        Graph<T> g;
        Val in = g.constant(input.clone());
        const std::vector<Val> outs = net.forward(g, in, Network<T>::Mode::infer);
        const Tensor<T>& logits = g.value(outs[0]);
        for (int r = 0; r < kNumRegions; ++r)
          for (std::int64_t x = 0; x < patch[0]; ++x)
            for (std::int64_t y = 0; y < patch[1]; ++y)
              for (std::int64_t z = 0; z < patch[2]; ++z) {
                const std::int64_t wi = (x * patch[1] + y) * patch[2] + z;
                const double logit = static_cast<double>(
                    logits[(static_cast<std::int64_t>(r) * patch[0] + x) * patch[1] * patch[2] +
                           y * patch[2] + z]);
                const double p = 1.0 / (1.0 + std::exp(-logit));
                const std::int64_t pi =
                    ((x + sx) * pext[1] + y + sy) * pext[2] + z + sz;
                acc[r * pvox + pi] += weight[static_cast<std::size_t>(wi)] * p;
                if (cover[static_cast<std::size_t>(pi)] == 0) raw[r * pvox + pi] = p;
                if (r == 0) {
                  wsum[static_cast<std::size_t>(pi)] += weight[static_cast<std::size_t>(wi)];
                }
              }
        for (std::int64_t x = 0; x < patch[0]; ++x)
          for (std::int64_t y = 0; y < patch[1]; ++y)
            for (std::int64_t z = 0; z < patch[2]; ++z)
              ++cover[static_cast<std::size_t>(((x + sx) * pext[1] + y + sy) * pext[2] + z + sz)];
      }

  // Crop away the padding.
  RegionMaps out;
  out.kind = RegionMaps::Kind::probability;
  out.values = Tensor<double>(Shape{kNumRegions, ext[0], ext[1], ext[2]});
  for (int r = 0; r < kNumRegions; ++r)
    for (std::int64_t x = 0; x < ext[0]; ++x)
      for (std::int64_t y = 0; y < ext[1]; ++y)
        for (std::int64_t z = 0; z < ext[2]; ++z) {
          const std::int64_t pi =
              ((x + poff[0]) * pext[1] + y + poff[1]) * pext[2] + z + poff[2];
          const std::int64_t oi = r * cvox + (x * ext[1] + y) * ext[2] + z;
          out.values[oi] = cover[static_cast<std::size_t>(pi)] == 1
                               ? raw[r * pvox + pi]
                               : acc[r * pvox + pi] / wsum[static_cast<std::size_t>(pi)];
        }

  if (cfg.uncrop) {
    const auto orig = c.orig_extents[0] > 0 ? c.orig_extents : ext;
    if (orig != ext || c.crop_offset != std::array<std::int64_t, 3>{0, 0, 0})
      return uncrop_regions(out, c.crop_offset, orig);
  }
  return out;
}

RegionMaps ensemble(const std::vector<RegionMaps>& maps) {
  if (maps.empty()) throw std::invalid_argument("ensemble needs at least one probability map");
  const Shape& s = maps[0].values.shape();
  for (const auto& m : maps) {
    if (m.kind != RegionMaps::Kind::probability)
      throw std::invalid_argument("ensemble requires probability maps");
    if (m.values.shape() != s)
      throw std::invalid_argument("ensemble extent mismatch: " + shape_str(m.values.shape()) +
                                  " vs " + shape_str(s));
  }
  RegionMaps out;
  out.kind = RegionMaps::Kind::probability;
  out.values = maps[0].values.clone();
  const double inv = 1.0 / static_cast<double>(maps.size());
  // Anchored at the first map so identical inputs reproduce exactly.
  for (std::int64_t i = 0; i < out.values.size(); ++i) {
    double diff = 0.0;
    for (std::size_t m = 1; m < maps.size(); ++m) diff += maps[m].values[i] - maps[0].values[i];
    out.values[i] = maps[0].values[i] + diff * inv;
  }
  return out;
}

RegionMaps binarize(const RegionMaps& probs, double threshold) {
  RegionMaps out;
  out.kind = RegionMaps::Kind::binary;
  out.values = Tensor<double>(probs.values.shape());
  for (std::int64_t i = 0; i < probs.values.size(); ++i)
    out.values[i] = probs.values[i] >= threshold ? 1.0 : 0.0;
  return out;
}

std::vector<std::uint8_t> postprocess_et(std::vector<std::uint8_t> labels,
                                         std::int64_t min_et_voxels) {
  std::int64_t count = 0;
  for (auto v : labels)
    if (v == kLabelEt) ++count;
  if (count < min_et_voxels)
    for (auto& v : labels)
      if (v == kLabelEt) v = kLabelNcr;
  return labels;
}

template RegionMaps sliding_window_predict<float>(Network<float>&, const VolumeCase&,
                                                  const SlidingWindowConfig&);
template RegionMaps sliding_window_predict<double>(Network<double>&, const VolumeCase&,
                                                   const SlidingWindowConfig&);

}  // namespace axunet
