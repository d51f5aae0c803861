#include "axunet/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace axunet {

void AugmentConfig::validate() const {
  const auto prob = [](double p, const char* name) {
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument(std::string("augment probability ") + name +
                                  " must be in [0, 1]");
  };
  prob(p_spatial, "p_spatial");
  prob(p_elastic, "p_elastic");
  prob(p_brightness, "p_brightness");
  prob(p_gamma, "p_gamma");
  if (gamma_min <= 0.0 || gamma_max < gamma_min)
    throw std::invalid_argument("gamma range must satisfy 0 < min <= max");
  if (scale_min <= 0.0 || scale_max < scale_min)
    throw std::invalid_argument("scale range must satisfy 0 < min <= max");
  if (rotation_max_deg < 0.0) throw std::invalid_argument("rotation range must be >= 0");
  if (elastic_sigma_vox < 0.0) throw std::invalid_argument("elastic sigma must be >= 0");
  if (elastic_grid < 1) throw std::invalid_argument("elastic grid must be >= 1");
  if (brightness_max < 0.0) throw std::invalid_argument("brightness range must be >= 0");
}

namespace {

std::array<double, 9> mat_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

std::array<double, 9> mat_inverse(const std::array<double, 9>& m) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det) < 1e-12)
    throw std::invalid_argument("spatial transform matrix is singular");
  const double r = 1.0 / det;
  return {r * (m[4] * m[8] - m[5] * m[7]), r * (m[2] * m[7] - m[1] * m[8]),
          r * (m[1] * m[5] - m[2] * m[4]), r * (m[5] * m[6] - m[3] * m[8]),
          r * (m[0] * m[8] - m[2] * m[6]), r * (m[2] * m[3] - m[0] * m[5]),
          r * (m[3] * m[7] - m[4] * m[6]), r * (m[1] * m[6] - m[0] * m[7]),
          r * (m[0] * m[4] - m[1] * m[3])};
}

std::array<double, 9> rotation_matrix(double ax, double ay, double az) {
  const std::array<double, 9> rx{1, 0, 0, 0, std::cos(ax), -std::sin(ax),
                                 0, std::sin(ax), std::cos(ax)};
  const std::array<double, 9> ry{std::cos(ay), 0, std::sin(ay), 0, 1, 0,
                                 -std::sin(ay), 0, std::cos(ay)};
  const std::array<double, 9> rz{std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0,
                                 0, 0, 1};
  return mat_mul(rx, mat_mul(ry, rz));
}

double sample_trilinear(const double* ch, const std::array<std::int64_t, 3>& e, double x,
                        double y, double z) {
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  const std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double fz = z - static_cast<double>(z0);
  double acc = 0.0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        const std::int64_t xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (xi < 0 || yi < 0 || zi < 0 || xi >= e[0] || yi >= e[1] || zi >= e[2]) continue;
        const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
        acc += wgt * ch[(xi * e[1] + yi) * e[2] + zi];
      }
  return acc;
}

std::uint8_t sample_nearest(const std::vector<std::uint8_t>& labels,
                            const std::array<std::int64_t, 3>& e, double x, double y, double z) {
  const std::int64_t xi = static_cast<std::int64_t>(std::llround(x));
  const std::int64_t yi = static_cast<std::int64_t>(std::llround(y));
  const std::int64_t zi = static_cast<std::int64_t>(std::llround(z));
  if (xi < 0 || yi < 0 || zi < 0 || xi >= e[0] || yi >= e[1] || zi >= e[2]) return 0;
  return labels[static_cast<std::size_t>((xi * e[1] + yi) * e[2] + zi)];
}

}  // namespace

PatchSample apply_spatial_transform(const PatchSample& s, const std::array<double, 9>& forward,
                                    const Tensor<double>* displacement) {
  const auto& e = s.extents;
  const std::int64_t vox = e[0] * e[1] * e[2];
  if (displacement &&
      displacement->shape() != Shape{3, e[0], e[1], e[2]})
    throw std::invalid_argument("displacement field shape " +
                                shape_str(displacement->shape()) + " does not match patch");
  const std::array<double, 9> inv = mat_inverse(forward);
  const std::array<double, 3> center{(static_cast<double>(e[0]) - 1.0) / 2.0,
                                     (static_cast<double>(e[1]) - 1.0) / 2.0,
                                     (static_cast<double>(e[2]) - 1.0) / 2.0};
  PatchSample out;
  out.extents = e;
  out.image = Tensor<double>(s.image.shape());
  out.labels.assign(static_cast<std::size_t>(vox), 0);
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z) {
        const std::int64_t o = (x * e[1] + y) * e[2] + z;
        const double cx = static_cast<double>(x) - center[0];
        const double cy = static_cast<double>(y) - center[1];
        const double cz = static_cast<double>(z) - center[2];
        double sx = inv[0] * cx + inv[1] * cy + inv[2] * cz + center[0];
        double sy = inv[3] * cx + inv[4] * cy + inv[5] * cz + center[1];
        double sz = inv[6] * cx + inv[7] * cy + inv[8] * cz + center[2];
        if (displacement) {
          sx += (*displacement)[0 * vox + o];
          sy += (*displacement)[1 * vox + o];
          sz += (*displacement)[2 * vox + o];
        }
        for (int ch = 0; ch < kNumChannels; ++ch)
          out.image[ch * vox + o] =
              sample_trilinear(s.image.data() + ch * vox, e, sx, sy, sz);
        out.labels[static_cast<std::size_t>(o)] = sample_nearest(s.labels, e, sx, sy, sz);
      }
  return out;
}

void apply_gamma(Tensor<double>& image, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  if (gamma == 1.0) return;
  const std::int64_t c = image.extent(0);
  const std::int64_t vox = image.size() / c;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double* p = image.data() + ch * vox;
    double lo = p[0], hi = p[0];
    for (std::int64_t i = 1; i < vox; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    const double range = hi - lo;
    if (range < 1e-12) continue;
    for (std::int64_t i = 0; i < vox; ++i)
      p[i] = std::pow((p[i] - lo) / range, gamma) * range + lo;
  }
}

PatchSample augment(const PatchSample& s, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const bool do_spatial = rng.bernoulli(cfg.p_spatial);
  const bool do_elastic = rng.bernoulli(cfg.p_elastic);
  const bool do_brightness = rng.bernoulli(cfg.p_brightness);
  const bool do_gamma = rng.bernoulli(cfg.p_gamma);

  PatchSample out;
  if (do_spatial || do_elastic) {
    std::array<double, 9> forward{1, 0, 0, 0, 1, 0, 0, 0, 1};
    if (do_spatial) {
      const double d2r = 0.017453292519943295;
      const double ax = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * d2r;
      const double ay = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * d2r;
      const double az = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * d2r;
      const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
      forward = rotation_matrix(ax, ay, az);
      for (auto& v : forward) v *= scale;
    }
    Tensor<double> disp;
    if (do_elastic && cfg.elastic_sigma_vox > 0.0) {
      // Coarse control grid of random offsets, upsampled trilinearly.
      const auto& e = s.extents;
      const int g = cfg.elastic_grid;
      const std::int64_t gn = (g + 1) * (g + 1) * (g + 1);
      std::vector<double> nodes(static_cast<std::size_t>(3 * gn));
      for (auto& v : nodes) v = cfg.elastic_sigma_vox * rng.normal();
      disp = Tensor<double>(Shape{3, e[0], e[1], e[2]});
      const std::int64_t vox = e[0] * e[1] * e[2];
      for (std::int64_t x = 0; x < e[0]; ++x)
        for (std::int64_t y = 0; y < e[1]; ++y)
          for (std::int64_t z = 0; z < e[2]; ++z) {
            const double gx = static_cast<double>(x) / std::max<double>(1, e[0] - 1) * g;
            const double gy = static_cast<double>(y) / std::max<double>(1, e[1] - 1) * g;
            const double gz = static_cast<double>(z) / std::max<double>(1, e[2] - 1) * g;
            const std::int64_t o = (x * e[1] + y) * e[2] + z;
            for (int axis = 0; axis < 3; ++axis) {
              const double* grid = nodes.data() + axis * gn;
              const std::array<std::int64_t, 3> ge{g + 1, g + 1, g + 1};
              disp[axis * vox + o] = sample_trilinear(grid, ge, gx, gy, gz);
            }
          }
    }
    out = apply_spatial_transform(s, forward, disp.empty() ? nullptr : &disp);
  } else {
    out.image = s.image.clone();
    out.labels = s.labels;
    out.extents = s.extents;
  }

  if (do_brightness && cfg.brightness_max > 0.0) {
    const std::int64_t vox = out.extents[0] * out.extents[1] * out.extents[2];
    for (int ch = 0; ch < kNumChannels; ++ch) {
      const double shift = rng.uniform(-cfg.brightness_max, cfg.brightness_max);
      if (shift == 0.0) continue;
      double* p = out.image.data() + ch * vox;
      for (std::int64_t i = 0; i < vox; ++i) p[i] += shift;
    }
  }

  if (do_gamma) apply_gamma(out.image, rng.uniform(cfg.gamma_min, cfg.gamma_max));

  return out;
}

}  // namespace axunet
