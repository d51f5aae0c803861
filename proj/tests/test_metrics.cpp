#include <doctest.h>

#include <cmath>

#include "axunet/metrics.hpp"
#include "axunet/rng.hpp"
#include "test_util.hpp"

using namespace axunet;

namespace {

BinaryMask mask_from(std::initializer_list<std::array<std::int64_t, 3>> voxels,
                     std::array<std::int64_t, 3> ext) {
  BinaryMask m;
  m.extents = ext;
  m.voxels.assign(static_cast<std::size_t>(ext[0] * ext[1] * ext[2]), 0);
  for (const auto& v : voxels)
    m.voxels[static_cast<std::size_t>((v[0] * ext[1] + v[1]) * ext[2] + v[2])] = 1;
  return m;
}

BinaryMask random_mask(Rng& rng, std::array<std::int64_t, 3> ext, double density) {
  BinaryMask m;
  m.extents = ext;
  m.voxels.resize(static_cast<std::size_t>(ext[0] * ext[1] * ext[2]));
  for (auto& v : m.voxels) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

// All-pairs directed 95th-percentile oracle.
double hd95_oracle(const BinaryMask& a, const BinaryMask& b,
                   const std::array<double, 3>& spacing, double sentinel) {
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty())
    return sentinel < 0.0 ? image_diagonal_mm(a.extents, spacing) : sentinel;
  auto directed = [&](const std::vector<std::array<std::int64_t, 3>>& from,
                      const std::vector<std::array<std::int64_t, 3>>& to) {
    std::vector<double> dists;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        double d2 = 0.0;
        for (int ax = 0; ax < 3; ++ax) {
          const double d = static_cast<double>(p[ax] - q[ax]) * spacing[ax];
          d2 += d * d;
        }
        best = std::min(best, d2);
      }
      dists.push_back(std::sqrt(best));
    }
    std::sort(dists.begin(), dists.end());
    const std::int64_t n = static_cast<std::int64_t>(dists.size());
    const std::int64_t rank = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(n))));
    return dists[static_cast<std::size_t>(rank - 1)];
  };
  return std::max(directed(sa, sb), directed(sb, sa));
}

}  // namespace

TEST_CASE("dice examples") {
  const auto ext = std::array<std::int64_t, 3>{4, 4, 4};
  const BinaryMask a = mask_from({{0, 0, 0}, {1, 1, 1}}, ext);
  const BinaryMask b = mask_from({{1, 1, 1}, {2, 2, 2}}, ext);
  CHECK(dice_score(a, a) == 1.0);
  CHECK(dice_score(a, b) == 0.5);  // 2*1/(2+2)
  const BinaryMask c = mask_from({{3, 3, 3}}, ext);
  CHECK(dice_score(a, c) == 0.0);
  const BinaryMask empty = mask_from({}, ext);
  CHECK(dice_score(empty, empty) == 1.0);
  CHECK(dice_score(a, empty) == 0.0);
  BinaryMask wrong = a;
  wrong.extents = {4, 4, 5};
  wrong.voxels.resize(80);
  CHECK_THROWS_AS(dice_score(a, wrong), std::invalid_argument);
}

TEST_CASE("dice symmetry and range on random masks") {
  Rng rng(401);
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask a = random_mask(rng, {6, 6, 6}, 0.3);
    const BinaryMask b = random_mask(rng, {6, 6, 6}, 0.3);
    const double d = dice_score(a, b);
    CHECK(d == dice_score(b, a));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("surface extraction uses six-connectivity") {
  // a solid 3x3x3 block in a 5^3 grid: the 26 shell voxels + center? No:
  // every block voxel except the center touches background.
  BinaryMask m;
  m.extents = {5, 5, 5};
  m.voxels.assign(125, 0);
  for (std::int64_t x = 1; x < 4; ++x)
    for (std::int64_t y = 1; y < 4; ++y)
      for (std::int64_t z = 1; z < 4; ++z)
        m.voxels[static_cast<std::size_t>((x * 5 + y) * 5 + z)] = 1;
  const auto surf = surface_voxels(m);
  CHECK(surf.size() == 26);
  // voxels on the volume border count as surface (outside reads background)
  BinaryMask full;
  full.extents = {2, 2, 2};
  full.voxels.assign(8, 1);
  CHECK(surface_voxels(full).size() == 8);
}

TEST_CASE("hd95 examples") {
  const auto ext = std::array<std::int64_t, 3>{8, 8, 8};
  const std::array<double, 3> unit{1.0, 1.0, 1.0};
  const BinaryMask a = mask_from({{1, 1, 1}}, ext);
  CHECK(hd95(a, a, unit) == 0.0);
  // single voxels 3 apart on one axis: any percentile equals 3
  const BinaryMask b = mask_from({{4, 1, 1}}, ext);
  CHECK(hd95(a, b, unit) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(hd95(a, b, unit) == doctest::Approx(hd95_oracle(a, b, unit, -1.0)).epsilon(1e-12));
  // spacing scales distances
  CHECK(hd95(a, b, {2.0, 1.0, 1.0}) == doctest::Approx(6.0).epsilon(1e-12));
  // empty-mask conventions
  const BinaryMask empty = mask_from({}, ext);
  CHECK(hd95(empty, empty, unit) == 0.0);
  CHECK(hd95(a, empty, unit) == doctest::Approx(image_diagonal_mm(ext, unit)).epsilon(1e-12));
  CHECK(hd95(a, empty, unit, 123.0) == 123.0);
}

TEST_CASE("hd95 matches the all-pairs oracle on random masks") {
  Rng rng(402);
  for (int trial = 0; trial < 40; ++trial) {
    const std::array<std::int64_t, 3> ext{
        4 + rng.integer(9), 4 + rng.integer(9), 4 + rng.integer(9)};
    const BinaryMask a = random_mask(rng, ext, 0.25);
    const BinaryMask b = random_mask(rng, ext, 0.25);
    const double fast = hd95(a, b, {1.0, 1.0, 1.0});
    const double slow = hd95_oracle(a, b, {1.0, 1.0, 1.0}, -1.0);
    CHECK(std::abs(fast - slow) < 1e-9);
    CHECK(fast == hd95(b, a, {1.0, 1.0, 1.0}));  // symmetry under swap
    CHECK(fast >= 0.0);
  }
}

TEST_CASE("hd95 with anisotropic spacing matches the oracle") {
  Rng rng(403);
  const std::array<double, 3> spacing{1.0, 0.5, 2.0};
  for (int trial = 0; trial < 10; ++trial) {
    const BinaryMask a = random_mask(rng, {7, 7, 7}, 0.3);
    const BinaryMask b = random_mask(rng, {7, 7, 7}, 0.3);
    CHECK(std::abs(hd95(a, b, spacing) - hd95_oracle(a, b, spacing, -1.0)) < 1e-9);
  }
}

TEST_CASE("hd95 zero iff surfaces coincide, on clearly distinct masks") {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const BinaryMask a = random_mask(rng, {6, 6, 6}, 0.3);
    const BinaryMask b = random_mask(rng, {6, 6, 6}, 0.3);
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    const double d = hd95(a, b, {1.0, 1.0, 1.0});
    if (sa == sb)
      CHECK(d == 0.0);
    else
      CHECK(d > 0.0);
  }
}

TEST_CASE("moving a single-voxel prediction away never shrinks hd95") {
  const auto ext = std::array<std::int64_t, 3>{12, 4, 4};
  const BinaryMask gt = mask_from({{1, 1, 1}}, ext);
  double prev = -1.0;
  for (std::int64_t k = 2; k < 11; ++k) {
    const BinaryMask pred = mask_from({{k, 1, 1}}, ext);
    const double d = hd95(pred, gt, {1.0, 1.0, 1.0});
    CHECK(d >= prev);
    prev = d;
  }
}

TEST_CASE("evaluate_case conventions") {
  const std::array<std::int64_t, 3> ext{6, 6, 6};
  std::vector<std::uint8_t> gt(216, 0), pred(216, 0);
  for (int i = 0; i < 8; ++i) {
    gt[static_cast<std::size_t>(40 + i)] = 2;
    pred[static_cast<std::size_t>(40 + i)] = 2;
  }
  // identical maps: dice 1, hd95 0 everywhere ET/TC/WT defined
  {
    const CaseMetrics m = evaluate_case("c", pred, gt, ext);
    CHECK(m.region[2].dice == 1.0);
    CHECK(m.region[2].hd95 == 0.0);
    // ET and TC empty in both: empty-empty conventions
    CHECK(m.region[0].dice == 1.0);
    CHECK(m.region[0].hd95 == 0.0);
  }
  // spurious ET: dice 0 and sentinel hd95
  {
    std::vector<std::uint8_t> p2 = pred;
    for (int i = 0; i < 5; ++i) p2[static_cast<std::size_t>(100 + i)] = 4;
    const CaseMetrics m = evaluate_case("c", p2, gt, ext);
    CHECK(m.region[0].dice == 0.0);
    CHECK(m.region[0].hd95 ==
          doctest::Approx(image_diagonal_mm(ext, {1.0, 1.0, 1.0})).epsilon(1e-12));
  }
}

TEST_CASE("aggregate_report means and layout") {
  CaseMetrics a{"case_a", {RegionMetrics{1.0, 0.0}, RegionMetrics{0.8, 2.0},
                           RegionMetrics{0.9, 1.0}}};
  CaseMetrics b{"case_b", {RegionMetrics{0.6, 4.0}, RegionMetrics{0.4, 6.0},
                           RegionMetrics{0.7, 3.0}}};
  const MetricsReport rep = aggregate_report({a, b});
  CHECK(rep.mean[0].dice == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(rep.mean[1].hd95 == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(rep.average.dice ==
        doctest::Approx((rep.mean[0].dice + rep.mean[1].dice + rep.mean[2].dice) / 3.0)
            .epsilon(1e-15));
  CHECK(rep.average.hd95 ==
        doctest::Approx((rep.mean[0].hd95 + rep.mean[1].hd95 + rep.mean[2].hd95) / 3.0)
            .epsilon(1e-15));

  // single case: report equals the case
  const MetricsReport solo = aggregate_report({a});
  CHECK(solo.mean[0].dice == 1.0);
  CHECK(solo.mean[1].hd95 == 2.0);

  const std::string table = report_table(rep);
  CHECK(table.find("ET") != std::string::npos);
  CHECK(table.find("Average") != std::string::npos);
  const std::string csv = report_csv(rep);
  CHECK(csv.find("case_a,ET,") != std::string::npos);
  CHECK(csv.find("mean,WT,") != std::string::npos);

  CHECK_THROWS_AS(aggregate_report({}), std::invalid_argument);
}
