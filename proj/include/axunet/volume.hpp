#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "axunet/tensor.hpp"

namespace axunet {

constexpr int kNumChannels = 4;  // T1, T1Gd, T2, T2-FLAIR
constexpr int kNumRegions = 3;   // ET, TC, WT
constexpr std::uint8_t kLabelBackground = 0;
constexpr std::uint8_t kLabelNcr = 1;
constexpr std::uint8_t kLabelEd = 2;
constexpr std::uint8_t kLabelEt = 4;

const char* region_name(int r);
bool valid_label(std::uint8_t v);

// One subject: 4-channel image, label map, spacing. After crop_nonzero the
// labels stay aligned with the cropped image and the provenance fields record
// how to place predictions back into the original frame.
struct VolumeCase {
  std::string case_id;
  Tensor<double> image;  // [4, x, y, z]
  std::vector<std::uint8_t> labels;
  std::array<std::int64_t, 3> extents{};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<std::int64_t, 3> crop_offset{0, 0, 0};
  std::array<std::int64_t, 3> orig_extents{};

  std::int64_t voxel_count() const { return extents[0] * extents[1] * extents[2]; }
};

// ET/TC/WT maps over one volume, either probabilities or 0/1.
struct RegionMaps {
  enum class Kind { probability, binary };
  Tensor<double> values;  // [3, x, y, z]
  Kind kind = Kind::probability;

  std::array<std::int64_t, 3> extents() const {
    return {values.extent(1), values.extent(2), values.extent(3)};
  }
};

// ---- ".vol4" container ----
// Text header (key-value lines ending in "end_header") followed by raw
// little-endian payloads, row-major [x, y, z] with z fastest. Three payload
// kinds: "image+labels" (4 f32 channels then u8 labels), "labels" (u8) and
// "probs" (3 f32 region channels).

void save_volume(const VolumeCase& c, const std::string& path);
VolumeCase load_volume(const std::string& path);

struct LabelVolume {
  std::string case_id;
  std::vector<std::uint8_t> labels;
  std::array<std::int64_t, 3> extents{};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

void save_label_volume(const LabelVolume& v, const std::string& path);
LabelVolume load_label_volume(const std::string& path);

struct ProbVolume {
  std::string case_id;
  RegionMaps regions;  // probability kind
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

void save_prob_volume(const ProbVolume& v, const std::string& path);
ProbVolume load_prob_volume(const std::string& path);

// Reads only the header and returns the case_id (any payload kind).
std::string peek_case_id(const std::string& path);

void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace axunet
