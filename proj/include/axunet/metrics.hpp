#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "axunet/volume.hpp"

namespace axunet {

struct BinaryMask {
  std::vector<std::uint8_t> voxels;  // 0/1, row-major [x, y, z]
  std::array<std::int64_t, 3> extents{};

  std::int64_t count() const;
};

BinaryMask region_mask(const RegionMaps& maps, int region);

// 2|P∩G| / (|P|+|G|); both empty -> 1.
double dice_score(const BinaryMask& pred, const BinaryMask& gt);

// Foreground voxels with at least one six-connected background or outside
// neighbor.
std::vector<std::array<std::int64_t, 3>> surface_voxels(const BinaryMask& mask);

double image_diagonal_mm(const std::array<std::int64_t, 3>& extents,
                         const std::array<double, 3>& spacing);

// Symmetric 95th-percentile surface distance (nearest-rank percentile of the
// directed surface-to-surface distances, maximum over both directions).
// Both surfaces empty -> 0; exactly one empty -> empty_sentinel (pass a
// negative sentinel to use the image diagonal).
double hd95(const BinaryMask& pred, const BinaryMask& gt, const std::array<double, 3>& spacing,
            double empty_sentinel = -1.0);

struct RegionMetrics {
  double dice = 0.0;
  double hd95 = 0.0;
};

struct CaseMetrics {
  std::string case_id;
  std::array<RegionMetrics, 3> region;  // ET, TC, WT
};

struct EvalOptions {
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  double hd95_empty_sentinel = -1.0;  // negative -> image diagonal in mm
};

CaseMetrics evaluate_case(const std::string& case_id, const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt,
                          const std::array<std::int64_t, 3>& extents,
                          const EvalOptions& opts = {});

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::array<RegionMetrics, 3> mean;  // per region over cases
  RegionMetrics average;              // mean of the three region columns
};

MetricsReport aggregate_report(std::vector<CaseMetrics> cases);

// Plain-text table: ET/TC/WT/Average columns, Dice and HD95 rows.
std::string report_table(const MetricsReport& report);
// Delimited: case_id,region,dice,hd95 (one row per case and region, then
// "mean" rows).
std::string report_csv(const MetricsReport& report);

}  // namespace axunet
