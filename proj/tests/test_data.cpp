#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "axunet/augment.hpp"
#include "axunet/phantom.hpp"
#include "axunet/preprocess.hpp"
#include "axunet/regions.hpp"
#include "axunet/sampling.hpp"
#include "axunet/volume.hpp"
#include "test_util.hpp"

using namespace axunet;
using axunet::testing::random_tensor;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

VolumeCase small_case(std::uint64_t seed, std::array<std::int64_t, 3> ext = {8, 8, 8}) {
  Rng rng(seed);
  VolumeCase c;
  c.case_id = "case_test";
  c.extents = ext;
  c.orig_extents = ext;
  const std::int64_t vox = c.voxel_count();
  c.image = Tensor<double>(Shape{4, ext[0], ext[1], ext[2]});
  for (std::int64_t i = 0; i < c.image.size(); ++i) c.image[i] = rng.uniform(0.1, 2.0);
  c.labels.assign(static_cast<std::size_t>(vox), 0);
  const std::uint8_t alphabet[4] = {0, 1, 2, 4};
  for (auto& v : c.labels) v = alphabet[rng.integer(4)];
  return c;
}

}  // namespace

TEST_CASE("vol4 save/load round trip is byte-identical") {
  const std::string p1 = tmp_path("axunet_case_a.vol4");
  const std::string p2 = tmp_path("axunet_case_b.vol4");
  VolumeCase c = small_case(101);
  save_volume(c, p1);
  VolumeCase loaded = load_volume(p1);
  CHECK(loaded.case_id == c.case_id);
  CHECK(loaded.extents == c.extents);
  CHECK(loaded.labels == c.labels);
  save_volume(loaded, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("vol4 accepts full-scale extents") {
  // labels-only payload keeps the disk cost of the 240x240x155 check small
  const std::string p = tmp_path("axunet_fullscale.vol4");
  LabelVolume v;
  v.case_id = "case_big";
  v.extents = {240, 240, 155};
  v.labels.assign(240 * 240 * 155, 0);
  v.labels[12345] = 4;
  save_label_volume(v, p);
  const LabelVolume back = load_label_volume(p);
  CHECK(back.extents == std::array<std::int64_t, 3>{240, 240, 155});
  CHECK(back.labels[12345] == 4);
  std::filesystem::remove(p);
}

TEST_CASE("vol4 rejects invalid label values naming the offender") {
  const std::string p = tmp_path("axunet_badlabel.vol4");
  VolumeCase c = small_case(102);
  save_volume(c, p);
  // patch one payload byte to the invalid label 3 (labels sit at the end)
  std::string bytes = read_bytes(p);
  bytes[bytes.size() - 10] = 3;
  std::ofstream(p, std::ios::binary) << bytes;
  CHECK_THROWS_WITH_AS(load_volume(p), doctest::Contains("3"), std::runtime_error);
  std::filesystem::remove(p);
}

TEST_CASE("vol4 rejects malformed headers and truncated payloads") {
  const std::string p = tmp_path("axunet_malformed.vol4");
  std::ofstream(p, std::ios::binary) << "VOL5\nversion 1\n";
  CHECK_THROWS_AS(load_volume(p), std::runtime_error);
  VolumeCase c = small_case(103);
  save_volume(c, p);
  std::string bytes = read_bytes(p);
  bytes.resize(bytes.size() - 7);
  std::ofstream(p, std::ios::binary) << bytes;
  CHECK_THROWS_WITH_AS(load_volume(p), doctest::Contains("truncated"), std::runtime_error);
  std::filesystem::remove(p);
}

TEST_CASE("prob volume round trip") {
  const std::string p = tmp_path("axunet_probs.vol4");
  Rng rng(104);
  ProbVolume v;
  v.case_id = "case_probs";
  v.regions.kind = RegionMaps::Kind::probability;
  v.regions.values = random_tensor<double>(rng, {3, 5, 6, 7}, 0.0, 1.0);
  // float32 payload: store what the file can represent
  for (std::int64_t i = 0; i < v.regions.values.size(); ++i)
    v.regions.values[i] = static_cast<double>(static_cast<float>(v.regions.values[i]));
  save_prob_volume(v, p);
  const ProbVolume back = load_prob_volume(p);
  CHECK(back.regions.values.same_values(v.regions.values));
  CHECK(peek_case_id(p) == "case_probs");
  std::filesystem::remove(p);
}

TEST_CASE("crop_nonzero finds the tight bounding box") {
  VolumeCase c;
  c.case_id = "crop";
  c.extents = {12, 12, 12};
  c.orig_extents = c.extents;
  c.image = Tensor<double>(Shape{4, 12, 12, 12}, 0.0);
  c.labels.assign(12 * 12 * 12, 0);
  // content only in [4..7]^3
  for (std::int64_t x = 4; x < 8; ++x)
    for (std::int64_t y = 4; y < 8; ++y)
      for (std::int64_t z = 4; z < 8; ++z) {
        c.image[0 * 1728 + (x * 12 + y) * 12 + z] = 1.0;
        c.labels[static_cast<std::size_t>((x * 12 + y) * 12 + z)] = 2;
      }
  const VolumeCase cropped = crop_nonzero(c);
  CHECK(cropped.extents == std::array<std::int64_t, 3>{4, 4, 4});
  CHECK(cropped.crop_offset == std::array<std::int64_t, 3>{4, 4, 4});
  CHECK(cropped.orig_extents == std::array<std::int64_t, 3>{12, 12, 12});
  for (auto v : cropped.labels) CHECK(v == 2);

  // already-tight volume: identity crop
  const VolumeCase again = crop_nonzero(cropped);
  CHECK(again.extents == cropped.extents);
  CHECK(again.crop_offset == std::array<std::int64_t, 3>{4, 4, 4});

  // all-zero volume is rejected
  VolumeCase zero = c;
  zero.image = Tensor<double>(Shape{4, 12, 12, 12}, 0.0);
  CHECK_THROWS_AS(crop_nonzero(zero), std::runtime_error);
}

TEST_CASE("uncrop restores original label positions") {
  Rng rng(105);
  VolumeCase c;
  c.case_id = "sparse";
  c.extents = {10, 9, 8};
  c.orig_extents = c.extents;
  c.image = Tensor<double>(Shape{4, 10, 9, 8}, 0.0);
  c.labels.assign(10 * 9 * 8, 0);
  for (int k = 0; k < 25; ++k) {
    const std::int64_t i = rng.integer(10 * 9 * 8);
    c.image[i] = rng.uniform(0.5, 1.0);
    c.labels[static_cast<std::size_t>(i)] = 4;
  }
  const VolumeCase cropped = crop_nonzero(c);
  const RegionMaps regions = labels_to_regions(cropped.labels, cropped.extents);
  const RegionMaps restored = uncrop_regions(regions, cropped.crop_offset, cropped.orig_extents);
  const RegionMaps original = labels_to_regions(c.labels, c.extents);
  CHECK(testing::max_abs_diff(restored.values, original.values) == 0.0);
}

TEST_CASE("zscore_normalize statistics and idempotence") {
  VolumeCase c = small_case(106);
  const VolumeCase n = zscore_normalize(c);
  const std::int64_t vox = c.voxel_count();
  for (int ch = 0; ch < 4; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < vox; ++i) mean += n.image[ch * vox + i];
    mean /= static_cast<double>(vox);
    for (std::int64_t i = 0; i < vox; ++i) {
      const double d = n.image[ch * vox + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(vox);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
  }
  // flat-loop oracle comparison
  {
    double mean = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < vox; ++i) {
      mean += c.image[i];
      sq += c.image[i] * c.image[i];
    }
    mean /= static_cast<double>(vox);
    const double sd = std::sqrt(sq / static_cast<double>(vox) - mean * mean);
    for (std::int64_t i = 0; i < vox; ++i)
      CHECK(std::abs(n.image[i] - (c.image[i] - mean) / sd) < 1e-12);
  }
  // idempotence to 1e-10
  const VolumeCase n2 = zscore_normalize(n);
  CHECK(testing::max_abs_diff(n2.image, n.image) < 1e-10);

  // degenerate constant channel
  VolumeCase flat = c;
  flat.image = c.image.clone();
  for (std::int64_t i = 0; i < vox; ++i) flat.image[i] = 3.0;
  CHECK_THROWS_AS(zscore_normalize(flat), std::runtime_error);
}

TEST_CASE("augment passthrough with zero probabilities is bit-identical") {
  Rng data_rng(107);
  PatchSample s;
  s.extents = {6, 6, 6};
  s.image = random_tensor<double>(data_rng, {4, 6, 6, 6});
  s.labels.assign(216, 0);
  for (auto& v : s.labels) v = static_cast<std::uint8_t>(data_rng.integer(2) * 4);
  AugmentConfig cfg;
  cfg.p_spatial = cfg.p_elastic = cfg.p_brightness = cfg.p_gamma = 0.0;
  Rng rng(1);
  const PatchSample out = augment(s, rng, cfg);
  CHECK(out.image.same_values(s.image));
  CHECK(out.labels == s.labels);
}

TEST_CASE("90-degree z rotation equals the index-permutation oracle for labels") {
  Rng data_rng(108);
  PatchSample s;
  s.extents = {6, 6, 6};
  s.image = random_tensor<double>(data_rng, {4, 6, 6, 6});
  s.labels.assign(216, 0);
  for (std::size_t i = 0; i < s.labels.size(); ++i)
    s.labels[i] = static_cast<std::uint8_t>((i * 2654435761u) % 3 == 0 ? 4 : ((i % 5 == 0) ? 2 : 0));
  // rotation by +90 degrees about z: forward (x, y) -> (-y, x)
  const std::array<double, 9> forward{0, -1, 0, 1, 0, 0, 0, 0, 1};
  const PatchSample out = apply_spatial_transform(s, forward, nullptr);
  for (std::int64_t x = 0; x < 6; ++x)
    for (std::int64_t y = 0; y < 6; ++y)
      for (std::int64_t z = 0; z < 6; ++z) {
        // inverse-mapping: output (x, y) samples input at (y, 5 - x)
        const std::uint8_t expect =
            s.labels[static_cast<std::size_t>((y * 6 + (5 - x)) * 6 + z)];
        CHECK(out.labels[static_cast<std::size_t>((x * 6 + y) * 6 + z)] == expect);
      }
}

TEST_CASE("gamma 1 and zero brightness are exact identities") {
  Rng rng(109);
  Tensor<double> img = random_tensor<double>(rng, {4, 4, 4, 4});
  Tensor<double> copy = img.clone();
  apply_gamma(img, 1.0);
  CHECK(img.same_values(copy));
  CHECK_THROWS_AS(apply_gamma(img, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(apply_gamma(img, -0.5), std::invalid_argument);
}

TEST_CASE("augment config validation") {
  AugmentConfig cfg;
  cfg.gamma_min = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = AugmentConfig{};
  cfg.p_spatial = 1.4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("spatial augmentations preserve the label alphabet") {
  Rng rng(110);
  PatchSample s;
  s.extents = {8, 8, 8};
  s.image = random_tensor<double>(rng, {4, 8, 8, 8});
  s.labels.assign(512, 0);
  const std::uint8_t alphabet[4] = {0, 1, 2, 4};
  for (auto& v : s.labels) v = alphabet[rng.integer(4)];
  AugmentConfig cfg;
  cfg.p_spatial = 1.0;
  cfg.p_elastic = 1.0;
  cfg.p_brightness = 1.0;
  cfg.p_gamma = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng r = rng.derive(static_cast<std::uint64_t>(trial));
    const PatchSample out = augment(s, r, cfg);
    for (auto v : out.labels) CHECK(valid_label(v));
  }
}

TEST_CASE("sample_patch forced foreground lands the tumor voxel at the center") {
  VolumeCase c = small_case(111, {16, 16, 16});
  for (auto& v : c.labels) v = 0;
  c.labels[static_cast<std::size_t>((3 * 16 + 12) * 16 + 5)] = 4;  // single tumor voxel
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    PatchSample s = sample_patch(c, rng, {8, 8, 8}, 1.0);
    CHECK(s.labels[static_cast<std::size_t>((4 * 8 + 4) * 8 + 4)] == 4);
  }
}

TEST_CASE("sample_patch with patch equal to extents returns the whole volume") {
  VolumeCase c = small_case(112);
  for (auto& v : c.labels) v = 0;  // no tumor: placement is never forced
  Rng rng(3);
  PatchSample s = sample_patch(c, rng, {8, 8, 8}, 1.0 / 3.0);
  CHECK(s.image.same_values(c.image));
  CHECK(s.labels == c.labels);
}

TEST_CASE("sample_patch empirical foreground rate matches the probability") {
  VolumeCase c = small_case(113, {24, 24, 24});
  for (auto& v : c.labels) v = 0;
  // a tiny tumor so unforced draws almost never center on it
  c.labels[static_cast<std::size_t>((12 * 24 + 12) * 24 + 12)] = 4;
  c.labels[static_cast<std::size_t>((12 * 24 + 12) * 24 + 13)] = 1;
  Rng rng(4);
  int centered = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    PatchSample s = sample_patch(c, rng, {8, 8, 8}, 1.0 / 3.0);
    if (s.labels[static_cast<std::size_t>((4 * 8 + 4) * 8 + 4)] != 0) ++centered;
  }
  const double rate = static_cast<double>(centered) / draws;
  CHECK(rate > 1.0 / 3.0 - 0.02);
  CHECK(rate < 1.0 / 3.0 + 0.02);
}

TEST_CASE("make_folds balance and determinism") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("case_" + std::to_string(i));
  const FoldSplit s5 = make_folds(ids, 5, 9);
  REQUIRE(s5.folds.size() == 5);
  for (const auto& f : s5.folds) CHECK(f.size() == 2);

  const FoldSplit again = make_folds(ids, 5, 9);
  CHECK(s5.folds == again.folds);

  ids.push_back("case_10");
  const FoldSplit s11 = make_folds(ids, 5, 9);
  std::multiset<std::size_t> sizes;
  for (const auto& f : s11.folds) sizes.insert(f.size());
  CHECK(sizes == std::multiset<std::size_t>{3, 2, 2, 2, 2});

  CHECK_THROWS_AS(make_folds({"a", "b"}, 5, 1), std::invalid_argument);
}

TEST_CASE("fold split partitions the case set") {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) ids.push_back("case_" + std::to_string(i));
  for (int k : {2, 3, 5, 7}) {
    const FoldSplit split = make_folds(ids, k, 77);
    std::set<std::string> seen;
    std::size_t total = 0;
    std::size_t min_size = ids.size(), max_size = 0;
    for (const auto& f : split.folds) {
      total += f.size();
      min_size = std::min(min_size, f.size());
      max_size = std::max(max_size, f.size());
      for (const auto& id : f) CHECK(seen.insert(id).second);  // disjoint
    }
    CHECK(total == ids.size());
    CHECK(max_size - min_size <= 1);
    // training/validation complement
    const auto train = split.training_cases(0);
    CHECK(train.size() + split.folds[0].size() == ids.size());
  }
}

TEST_CASE("synth_phantom structure") {
  const VolumeCase c = synth_phantom(1, {32, 32, 32}, "case_000");
  CHECK(c.case_id == "case_000");
  std::set<std::uint8_t> values(c.labels.begin(), c.labels.end());
  for (auto v : values) CHECK(valid_label(v));
  CHECK(values.count(1) == 1);
  CHECK(values.count(2) == 1);
  CHECK(values.count(4) == 1);

  // every tumor voxel lies inside nonzero brain signal
  const std::int64_t vox = c.voxel_count();
  for (std::int64_t i = 0; i < vox; ++i)
    if (c.labels[static_cast<std::size_t>(i)] != 0) CHECK(c.image[i] != 0.0);

  // ET and NCR nest inside the whole-tumor extent: bounding boxes contained
  auto bbox = [&](std::uint8_t label) {
    std::array<std::int64_t, 3> lo{32, 32, 32}, hi{-1, -1, -1};
    for (std::int64_t x = 0; x < 32; ++x)
      for (std::int64_t y = 0; y < 32; ++y)
        for (std::int64_t z = 0; z < 32; ++z)
          if (c.labels[static_cast<std::size_t>((x * 32 + y) * 32 + z)] == label) {
            lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
            hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
          }
    return std::make_pair(lo, hi);
  };
  const auto [et_lo, et_hi] = bbox(4);
  const auto [ncr_lo, ncr_hi] = bbox(1);
  std::array<std::int64_t, 3> wt_lo{32, 32, 32}, wt_hi{-1, -1, -1};
  for (std::int64_t x = 0; x < 32; ++x)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t z = 0; z < 32; ++z)
        if (c.labels[static_cast<std::size_t>((x * 32 + y) * 32 + z)] != 0) {
          wt_lo = {std::min(wt_lo[0], x), std::min(wt_lo[1], y), std::min(wt_lo[2], z)};
          wt_hi = {std::max(wt_hi[0], x), std::max(wt_hi[1], y), std::max(wt_hi[2], z)};
        }
  for (int a = 0; a < 3; ++a) {
    CHECK(et_lo[a] >= wt_lo[a]);
    CHECK(et_hi[a] <= wt_hi[a]);
    CHECK(ncr_lo[a] >= wt_lo[a]);
    CHECK(ncr_hi[a] <= wt_hi[a]);
  }

  // different seeds produce different geometries
  const VolumeCase d = synth_phantom(2, {32, 32, 32}, "case_001");
  CHECK(d.labels != c.labels);
  // same seed reproduces exactly
  const VolumeCase e = synth_phantom(1, {32, 32, 32}, "case_000");
  CHECK(e.labels == c.labels);
  CHECK(e.image.same_values(c.image));

  CHECK_THROWS_AS(synth_phantom(1, {8, 32, 32}), std::invalid_argument);
}

TEST_CASE("phantom enhancing tumor exceeds the post-processing floor at desk scale") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const VolumeCase c = synth_phantom(seed, {32, 32, 32});
    std::int64_t et = 0;
    for (auto v : c.labels) et += v == 4;
    CHECK(et > 200);
  }
}
