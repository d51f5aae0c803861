#include "axunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "axunet/regions.hpp"

namespace axunet {

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (auto v : voxels) n += v != 0;
  return n;
}

BinaryMask region_mask(const RegionMaps& maps, int region) {
  if (maps.kind != RegionMaps::Kind::binary)
    throw std::invalid_argument("region_mask requires binary region maps");
  BinaryMask m;
  m.extents = maps.extents();
  const std::int64_t vox = m.extents[0] * m.extents[1] * m.extents[2];
  m.voxels.resize(static_cast<std::size_t>(vox));
  const double* src = maps.values.data() + region * vox;
  for (std::int64_t i = 0; i < vox; ++i) m.voxels[static_cast<std::size_t>(i)] = src[i] != 0.0;
  return m;
}

double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.extents != gt.extents)
    throw std::invalid_argument("dice extent mismatch");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool p = pred.voxels[i] != 0;
    const bool g = gt.voxels[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::array<std::int64_t, 3>> surface_voxels(const BinaryMask& mask) {
  const auto& e = mask.extents;
  std::vector<std::array<std::int64_t, 3>> out;
  const auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> bool {
    if (x < 0 || y < 0 || z < 0 || x >= e[0] || y >= e[1] || z >= e[2]) return false;
    return mask.voxels[static_cast<std::size_t>((x * e[1] + y) * e[2] + z)] != 0;
  };
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z) {
        if (!at(x, y, z)) continue;
        if (!at(x - 1, y, z) || !at(x + 1, y, z) || !at(x, y - 1, z) || !at(x, y + 1, z) ||
            !at(x, y, z - 1) || !at(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

double image_diagonal_mm(const std::array<std::int64_t, 3>& extents,
                         const std::array<double, 3>& spacing) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = static_cast<double>(extents[a]) * spacing[a];
    acc += d * d;
  }
  return std::sqrt(acc);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared-distance transform (lower envelope of parabolas), with
// anisotropic spacing s: d(p, q) = s^2 (p - q)^2.
void edt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<std::int64_t>& v,
            std::vector<double>& z, double s2) {
  const std::int64_t n = static_cast<std::int64_t>(f.size());
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::int64_t q = 1; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    if (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])] == kInf) {
      // No finite parabola yet.
      v[static_cast<std::size_t>(k)] = q;
      continue;
    }
    double sint;
    for (;;) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      sint = ((f[static_cast<std::size_t>(q)] + s2 * static_cast<double>(q) * q) -
              (f[static_cast<std::size_t>(p)] + s2 * static_cast<double>(p) * p)) /
             (2.0 * s2 * static_cast<double>(q - p));
      if (sint > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = sint;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    if (f[static_cast<std::size_t>(p)] == kInf) {
      d[static_cast<std::size_t>(q)] = kInf;
    } else {
      const double dq = static_cast<double>(q - p);
      d[static_cast<std::size_t>(q)] = f[static_cast<std::size_t>(p)] + s2 * dq * dq;
    }
  }
}

// Exact squared Euclidean distance to the seed set over the whole grid.
std::vector<double> edt_grid(const std::vector<std::array<std::int64_t, 3>>& seeds,
                             const std::array<std::int64_t, 3>& e,
                             const std::array<double, 3>& spacing) {
  std::vector<double> dist(static_cast<std::size_t>(e[0] * e[1] * e[2]), kInf);
  for (const auto& s : seeds)
    dist[static_cast<std::size_t>((s[0] * e[1] + s[1]) * e[2] + s[2])] = 0.0;

  const std::int64_t maxext = std::max({e[0], e[1], e[2]});
  std::vector<double> f(static_cast<std::size_t>(maxext)), d(static_cast<std::size_t>(maxext));
  std::vector<std::int64_t> v(static_cast<std::size_t>(maxext));
  std::vector<double> z(static_cast<std::size_t>(maxext) + 1);

  // Along z.
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y) {
      double* row = dist.data() + (x * e[1] + y) * e[2];
      f.assign(row, row + e[2]);
      f.resize(static_cast<std::size_t>(e[2]));
      edt_1d(f, d, v, z, spacing[2] * spacing[2]);
      std::copy(d.begin(), d.begin() + e[2], row);
    }
  // Along y.
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t zz = 0; zz < e[2]; ++zz) {
      f.resize(static_cast<std::size_t>(e[1]));
      for (std::int64_t y = 0; y < e[1]; ++y)
        f[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>((x * e[1] + y) * e[2] + zz)];
      d.resize(static_cast<std::size_t>(e[1]));
      edt_1d(f, d, v, z, spacing[1] * spacing[1]);
      for (std::int64_t y = 0; y < e[1]; ++y)
        dist[static_cast<std::size_t>((x * e[1] + y) * e[2] + zz)] = d[static_cast<std::size_t>(y)];
    }
  // Along x.
  for (std::int64_t y = 0; y < e[1]; ++y)
    for (std::int64_t zz = 0; zz < e[2]; ++zz) {
      f.resize(static_cast<std::size_t>(e[0]));
      for (std::int64_t x = 0; x < e[0]; ++x)
        f[static_cast<std::size_t>(x)] = dist[static_cast<std::size_t>((x * e[1] + y) * e[2] + zz)];
      d.resize(static_cast<std::size_t>(e[0]));
      edt_1d(f, d, v, z, spacing[0] * spacing[0]);
      for (std::int64_t x = 0; x < e[0]; ++x)
        dist[static_cast<std::size_t>((x * e[1] + y) * e[2] + zz)] = d[static_cast<std::size_t>(x)];
    }
  return dist;
}

double percentile95(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  const std::int64_t rank =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(n))));
  return values[static_cast<std::size_t>(rank - 1)];
}

double directed_hd95(const std::vector<std::array<std::int64_t, 3>>& from,
                     const std::vector<double>& edt_to, const std::array<std::int64_t, 3>& e) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const auto& p : from)
    dists.push_back(
        std::sqrt(edt_to[static_cast<std::size_t>((p[0] * e[1] + p[1]) * e[2] + p[2])]));
  return percentile95(std::move(dists));
}

}  // namespace

double hd95(const BinaryMask& pred, const BinaryMask& gt, const std::array<double, 3>& spacing,
            double empty_sentinel) {
  if (pred.extents != gt.extents)
    throw std::invalid_argument("hd95 extent mismatch");
  const auto sp = surface_voxels(pred);
  const auto sg = surface_voxels(gt);
  if (sp.empty() && sg.empty()) return 0.0;
  if (sp.empty() || sg.empty())
    return empty_sentinel < 0.0 ? image_diagonal_mm(pred.extents, spacing) : empty_sentinel;
  const auto edt_g = edt_grid(sg, pred.extents, spacing);
  const auto edt_p = edt_grid(sp, pred.extents, spacing);
  return std::max(directed_hd95(sp, edt_g, pred.extents),
                  directed_hd95(sg, edt_p, pred.extents));
}

CaseMetrics evaluate_case(const std::string& case_id, const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt,
                          const std::array<std::int64_t, 3>& extents, const EvalOptions& opts) {
  const std::int64_t vox = extents[0] * extents[1] * extents[2];
  if (static_cast<std::int64_t>(pred.size()) != vox ||
      static_cast<std::int64_t>(gt.size()) != vox)
    throw std::invalid_argument("evaluate_case extent mismatch");
  const RegionMaps pr = labels_to_regions(pred, extents);
  const RegionMaps gr = labels_to_regions(gt, extents);
  CaseMetrics m;
  m.case_id = case_id;
  for (int r = 0; r < kNumRegions; ++r) {
    const BinaryMask pm = region_mask(pr, r);
    const BinaryMask gm = region_mask(gr, r);
    m.region[static_cast<std::size_t>(r)].dice = dice_score(pm, gm);
    m.region[static_cast<std::size_t>(r)].hd95 =
        hd95(pm, gm, opts.spacing, opts.hd95_empty_sentinel);
  }
  return m;
}

MetricsReport aggregate_report(std::vector<CaseMetrics> cases) {
  if (cases.empty()) throw std::invalid_argument("aggregate_report needs at least one case");
  MetricsReport rep;
  rep.cases = std::move(cases);
  for (int r = 0; r < kNumRegions; ++r) {
    double dsum = 0.0, hsum = 0.0;
    for (const auto& c : rep.cases) {
      dsum += c.region[static_cast<std::size_t>(r)].dice;
      hsum += c.region[static_cast<std::size_t>(r)].hd95;
    }
    rep.mean[static_cast<std::size_t>(r)].dice = dsum / static_cast<double>(rep.cases.size());
    rep.mean[static_cast<std::size_t>(r)].hd95 = hsum / static_cast<double>(rep.cases.size());
  }
  rep.average.dice = (rep.mean[0].dice + rep.mean[1].dice + rep.mean[2].dice) / 3.0;
  rep.average.hd95 = (rep.mean[0].hd95 + rep.mean[1].hd95 + rep.mean[2].hd95) / 3.0;
  return rep;
}

std::string report_table(const MetricsReport& report) {
  char buf[256];
  std::ostringstream os;
  os << "          ET        TC        WT        Average\n";
  std::snprintf(buf, sizeof buf, "Dice      %-9.4f %-9.4f %-9.4f %-9.4f\n", report.mean[0].dice,
                report.mean[1].dice, report.mean[2].dice, report.average.dice);
  os << buf;
  std::snprintf(buf, sizeof buf, "HD95      %-9.3f %-9.3f %-9.3f %-9.3f\n", report.mean[0].hd95,
                report.mean[1].hd95, report.mean[2].hd95, report.average.hd95);
  os << buf;
  return os.str();
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "case_id,region,dice,hd95\n";
  char buf[160];
  for (const auto& c : report.cases)
    for (int r = 0; r < kNumRegions; ++r) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", c.case_id.c_str(), region_name(r),
                    c.region[static_cast<std::size_t>(r)].dice,
                    c.region[static_cast<std::size_t>(r)].hd95);
      os << buf;
    }
  for (int r = 0; r < kNumRegions; ++r) {
    std::snprintf(buf, sizeof buf, "mean,%s,%.6f,%.6f\n", region_name(r),
                  report.mean[static_cast<std::size_t>(r)].dice,
                  report.mean[static_cast<std::size_t>(r)].hd95);
    os << buf;
  }
  return os.str();
}

}  // namespace axunet
