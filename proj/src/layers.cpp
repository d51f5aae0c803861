#include "axunet/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace axunet {

namespace {

struct ConvDims {
  std::int64_t b, ci, co;
  std::array<std::int64_t, 3> in, k, out;
};

std::string ext_str(const std::array<std::int64_t, 3>& e) {
  return "[" + std::to_string(e[0]) + ", " + std::to_string(e[1]) + ", " + std::to_string(e[2]) +
         "]";
}

void validate_geom(const ConvGeom& geom) {
  for (int a = 0; a < 3; ++a) {
    if (geom.stride[a] != 1 && geom.stride[a] != 2)
      throw std::invalid_argument("conv stride must be 1 or 2, got " +
                                  std::to_string(geom.stride[a]));
    if (geom.pad[a] < 0) throw std::invalid_argument("conv padding must be >= 0");
  }
}

std::array<std::int64_t, 3> spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

}  // namespace

std::array<std::int64_t, 3> conv_output_extents(const std::array<std::int64_t, 3>& in,
                                                const std::array<std::int64_t, 3>& kernel,
                                                const ConvGeom& geom) {
  validate_geom(geom);
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t span = in[a] + 2 * geom.pad[a] - kernel[a];
    if (span < 0)
      throw std::invalid_argument("conv3d kernel " + ext_str(kernel) +
                                  " exceeds padded input extents " + ext_str(in));
    out[a] = span / geom.stride[a] + 1;
    if (out[a] < 1)
      throw std::invalid_argument("conv3d produces zero-size output for input " + ext_str(in));
  }
  return out;
}

std::array<std::int64_t, 3> transpose_conv_output_extents(const std::array<std::int64_t, 3>& in,
                                                          const std::array<std::int64_t, 3>& kernel,
                                                          const ConvGeom& geom) {
  validate_geom(geom);
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = (in[a] - 1) * geom.stride[a] - 2 * geom.pad[a] + kernel[a];
    if (out[a] < 1)
      throw std::invalid_argument("transpose_conv3d produces zero-size output for input " +
                                  ext_str(in));
  }
  return out;
}

namespace {

ConvDims conv_dims(const Shape& xs, const Shape& ws, const ConvGeom& geom) {
  if (xs.size() != 5 || ws.size() != 5)
    throw std::invalid_argument("conv3d expects 5-D input and weights, got " + shape_str(xs) +
                                " and " + shape_str(ws));
  if (xs[1] != ws[1])
    throw std::invalid_argument("conv3d channel mismatch: input has " + std::to_string(xs[1]) +
                                " channels, weights expect " + std::to_string(ws[1]));
  ConvDims d;
  d.b = xs[0];
  d.ci = xs[1];
  d.co = ws[0];
  d.in = spatial(xs);
  d.k = {ws[2], ws[3], ws[4]};
  d.out = conv_output_extents(d.in, d.k, geom);
  return d;
}

// Valid output range [lo, hi] such that ix = ox*stride - pad + koff stays in
// [0, in); empty when lo > hi.
inline void out_range(std::int64_t in, std::int64_t out, int stride, int pad, std::int64_t koff,
                      std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t shift = pad - koff;
  lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const std::int64_t top = in - 1 + shift;
  hi = top < 0 ? -1 : std::min(out - 1, top / stride);
}

template <class T>
Tensor<T> conv3d_forward_kernel(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                                const ConvGeom& geom) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), geom);
  if (bias && (bias->rank() != 1 || bias->extent(0) != d.co))
    throw std::invalid_argument("conv3d bias shape " + shape_str(bias->shape()) +
                                " does not match " + std::to_string(d.co) + " output channels");
  Tensor<T> out(Shape{d.b, d.co, d.out[0], d.out[1], d.out[2]});
  const std::int64_t in_vox = d.in[0] * d.in[1] * d.in[2];
  const std::int64_t out_vox = d.out[0] * d.out[1] * d.out[2];
  const std::int64_t kn = d.k[0] * d.k[1] * d.k[2];
  const std::int64_t bc = d.b * d.co;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < bc; ++t) {
    const std::int64_t bi = t / d.co;
    const std::int64_t co = t % d.co;
    T* slab = out.data() + t * out_vox;
    const T bv = bias ? (*bias)[co] : T(0);
    for (std::int64_t i = 0; i < out_vox; ++i) slab[i] = bv;
    for (std::int64_t ci = 0; ci < d.ci; ++ci) {
      const T* xin = x.data() + (bi * d.ci + ci) * in_vox;
      const T* wk = w.data() + (co * d.ci + ci) * kn;
      for (std::int64_t kx = 0; kx < d.k[0]; ++kx)
        for (std::int64_t ky = 0; ky < d.k[1]; ++ky)
          for (std::int64_t kz = 0; kz < d.k[2]; ++kz) {
            const T wv = wk[(kx * d.k[1] + ky) * d.k[2] + kz];
            if (wv == T(0)) continue;
            std::int64_t x_lo, x_hi, y_lo, y_hi, z_lo, z_hi;
            out_range(d.in[0], d.out[0], geom.stride[0], geom.pad[0], kx, x_lo, x_hi);
            out_range(d.in[1], d.out[1], geom.stride[1], geom.pad[1], ky, y_lo, y_hi);
            out_range(d.in[2], d.out[2], geom.stride[2], geom.pad[2], kz, z_lo, z_hi);
            for (std::int64_t ox = x_lo; ox <= x_hi; ++ox) {
              const std::int64_t ix = ox * geom.stride[0] - geom.pad[0] + kx;
              for (std::int64_t oy = y_lo; oy <= y_hi; ++oy) {
                const std::int64_t iy = oy * geom.stride[1] - geom.pad[1] + ky;
                const T* xrow = xin + (ix * d.in[1] + iy) * d.in[2] - geom.pad[2] + kz;
                T* orow = slab + (ox * d.out[1] + oy) * d.out[2];
                if (geom.stride[2] == 1) {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz) orow[oz] += wv * xrow[oz];
                } else {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz)
                    orow[oz] += wv * xrow[oz * geom.stride[2]];
                }
              }
            }
          }
    }
  }
  return out;
}

// Gradient w.r.t. the conv input; also the transpose-conv forward core.
// gy: [b, co, out...] -> [b, ci, in...]
template <class T>
Tensor<T> conv3d_input_grad_kernel(const Tensor<T>& gy, const Tensor<T>& w,
                                   const std::array<std::int64_t, 3>& in_ext,
                                   const ConvGeom& geom) {
  const Shape& ws = w.shape();
  const std::int64_t b = gy.extent(0), co = ws[0], ci = ws[1];
  if (gy.extent(1) != co)
    throw std::invalid_argument("channel mismatch: tensor has " + std::to_string(gy.extent(1)) +
                                " channels, weights expect " + std::to_string(co));
  const std::array<std::int64_t, 3> k{ws[2], ws[3], ws[4]};
  const std::array<std::int64_t, 3> out = spatial(gy.shape());
  Tensor<T> gx(Shape{b, ci, in_ext[0], in_ext[1], in_ext[2]}, T(0));
  const std::int64_t in_vox = in_ext[0] * in_ext[1] * in_ext[2];
  const std::int64_t out_vox = out[0] * out[1] * out[2];
  const std::int64_t kn = k[0] * k[1] * k[2];
  const std::int64_t bci = b * ci;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < bci; ++t) {
    const std::int64_t bi = t / ci;
    const std::int64_t c = t % ci;
    T* slab = gx.data() + t * in_vox;
    for (std::int64_t oc = 0; oc < co; ++oc) {
      const T* gin = gy.data() + (bi * co + oc) * out_vox;
      const T* wk = w.data() + (oc * ci + c) * kn;
      for (std::int64_t kx = 0; kx < k[0]; ++kx)
        for (std::int64_t ky = 0; ky < k[1]; ++ky)
          for (std::int64_t kz = 0; kz < k[2]; ++kz) {
            const T wv = wk[(kx * k[1] + ky) * k[2] + kz];
            if (wv == T(0)) continue;
            std::int64_t x_lo, x_hi, y_lo, y_hi, z_lo, z_hi;
            out_range(in_ext[0], out[0], geom.stride[0], geom.pad[0], kx, x_lo, x_hi);
            out_range(in_ext[1], out[1], geom.stride[1], geom.pad[1], ky, y_lo, y_hi);
            out_range(in_ext[2], out[2], geom.stride[2], geom.pad[2], kz, z_lo, z_hi);
            for (std::int64_t ox = x_lo; ox <= x_hi; ++ox) {
              const std::int64_t ix = ox * geom.stride[0] - geom.pad[0] + kx;
              for (std::int64_t oy = y_lo; oy <= y_hi; ++oy) {
                const std::int64_t iy = oy * geom.stride[1] - geom.pad[1] + ky;
                T* xrow = slab + (ix * in_ext[1] + iy) * in_ext[2] - geom.pad[2] + kz;
                const T* grow = gin + (ox * out[1] + oy) * out[2];
                if (geom.stride[2] == 1) {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz) xrow[oz] += wv * grow[oz];
                } else {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz)
                    xrow[oz * geom.stride[2]] += wv * grow[oz];
                }
              }
            }
          }
    }
  }
  return gx;
}

// Gradient w.r.t. conv weights: gw[co,ci,k] = sum_{b,out} gy * x(shifted).
template <class T>
Tensor<T> conv3d_weight_grad_kernel(const Tensor<T>& x, const Tensor<T>& gy, const Shape& wshape,
                                    const ConvGeom& geom) {
  const std::int64_t b = x.extent(0);
  const std::int64_t ci = wshape[1], co = wshape[0];
  const std::array<std::int64_t, 3> k{wshape[2], wshape[3], wshape[4]};
  const std::array<std::int64_t, 3> in = spatial(x.shape());
  const std::array<std::int64_t, 3> out = spatial(gy.shape());
  Tensor<T> gw(wshape, T(0));
  const std::int64_t in_vox = in[0] * in[1] * in[2];
  const std::int64_t out_vox = out[0] * out[1] * out[2];
  const std::int64_t kn = k[0] * k[1] * k[2];
  const std::int64_t coci = co * ci;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < coci; ++t) {
    const std::int64_t oc = t / ci;
    const std::int64_t c = t % ci;
    T* wk = gw.data() + t * kn;
    for (std::int64_t kx = 0; kx < k[0]; ++kx)
      for (std::int64_t ky = 0; ky < k[1]; ++ky)
        for (std::int64_t kz = 0; kz < k[2]; ++kz) {
          std::int64_t x_lo, x_hi, y_lo, y_hi, z_lo, z_hi;
          out_range(in[0], out[0], geom.stride[0], geom.pad[0], kx, x_lo, x_hi);
          out_range(in[1], out[1], geom.stride[1], geom.pad[1], ky, y_lo, y_hi);
          out_range(in[2], out[2], geom.stride[2], geom.pad[2], kz, z_lo, z_hi);
          double acc = 0.0;
          for (std::int64_t bi = 0; bi < b; ++bi) {
            const T* xin = x.data() + (bi * ci + c) * in_vox;
            const T* gin = gy.data() + (bi * co + oc) * out_vox;
            for (std::int64_t ox = x_lo; ox <= x_hi; ++ox) {
              const std::int64_t ix = ox * geom.stride[0] - geom.pad[0] + kx;
              for (std::int64_t oy = y_lo; oy <= y_hi; ++oy) {
                const std::int64_t iy = oy * geom.stride[1] - geom.pad[1] + ky;
                const T* xrow = xin + (ix * in[1] + iy) * in[2] - geom.pad[2] + kz;
                const T* grow = gin + (ox * out[1] + oy) * out[2];
                if (geom.stride[2] == 1) {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz)
                    acc += static_cast<double>(grow[oz]) * static_cast<double>(xrow[oz]);
                } else {
                  for (std::int64_t oz = z_lo; oz <= z_hi; ++oz)
                    acc += static_cast<double>(grow[oz]) *
                           static_cast<double>(xrow[oz * geom.stride[2]]);
                }
              }
            }
          }
          wk[(kx * k[1] + ky) * k[2] + kz] = static_cast<T>(acc);
        }
  }
  return gw;
}

// Per-channel sum of gy over (batch, voxels).
template <class T>
Tensor<T> channel_sum_kernel(const Tensor<T>& gy) {
  const std::int64_t b = gy.extent(0), c = gy.extent(1);
  const std::int64_t vox = gy.size() / (b * c);
  Tensor<T> out(Shape{c}, T(0));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* p = gy.data() + (bi * c + ch) * vox;
      for (std::int64_t i = 0; i < vox; ++i) acc += static_cast<double>(p[i]);
    }
    out[ch] = static_cast<T>(acc);
  }
  return out;
}

template <class T>
Tensor<T> add_channel_bias(Tensor<T> t, const Tensor<T>& bias) {
  const std::int64_t b = t.extent(0), c = t.extent(1);
  const std::int64_t vox = t.size() / (b * c);
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    const T bv = bias[bc % c];
    T* p = t.data() + bc * vox;
    for (std::int64_t i = 0; i < vox; ++i) p[i] += bv;
  }
  return t;
}

}  // namespace

template <class T>
Val conv3d(Graph<T>& g, Val x, Val w, Val bias, const ConvGeom& geom) {
  const Tensor<T>& vx = g.value(x);
  const Tensor<T>& vw = g.value(w);
  const Tensor<T>& vb = g.value(bias);
  const std::array<std::int64_t, 3> in_ext = spatial(vx.shape());
  typename Graph<T>::Node n;
  n.kind = OpKind::conv3d;
  n.inputs = {x.id, w.id, bias.id};
  n.value = conv3d_forward_kernel(vx, vw, &vb, geom);
  n.tracked = g.tracked(x) || g.tracked(w) || g.tracked(bias);
  n.backward = [geom, in_ext](Graph<T>& gg, const typename Graph<T>::Node& node,
                              const Tensor<T>& gout) {
    const Tensor<T>& xin = gg.node(node.inputs[0]).value;
    const Tensor<T>& win = gg.node(node.inputs[1]).value;
    if (gg.node(node.inputs[0]).tracked)
      gg.accum_grad(node.inputs[0], conv3d_input_grad_kernel(gout, win, in_ext, geom));
    if (gg.node(node.inputs[1]).tracked)
      gg.accum_grad(node.inputs[1], conv3d_weight_grad_kernel(xin, gout, win.shape(), geom));
    if (gg.node(node.inputs[2]).tracked)
      gg.accum_grad(node.inputs[2], channel_sum_kernel(gout));
  };
  n.replay = [geom](const std::vector<Tensor<T>>& in) {
    return conv3d_forward_kernel(in[0], in[1], &in[2], geom);
  };
  return Val{g.push_node(std::move(n))};
}

template <class T>
Val transpose_conv3d(Graph<T>& g, Val x, Val w, Val bias, const ConvGeom& geom) {
  const Tensor<T>& vx = g.value(x);
  const Tensor<T>& vw = g.value(w);
  const Tensor<T>& vb = g.value(bias);
  if (vx.rank() != 5 || vw.rank() != 5)
    throw std::invalid_argument("transpose_conv3d expects 5-D input and weights, got " +
                                shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
  if (vx.extent(1) != vw.extent(0))
    throw std::invalid_argument("transpose_conv3d channel mismatch: input has " +
                                std::to_string(vx.extent(1)) + " channels, weights expect " +
                                std::to_string(vw.extent(0)));
  if (vb.rank() != 1 || vb.extent(0) != vw.extent(1))
    throw std::invalid_argument("transpose_conv3d bias shape " + shape_str(vb.shape()) +
                                " does not match " + std::to_string(vw.extent(1)) +
                                " output channels");
  const std::array<std::int64_t, 3> k{vw.extent(2), vw.extent(3), vw.extent(4)};
  const std::array<std::int64_t, 3> out_ext =
      transpose_conv_output_extents(spatial(vx.shape()), k, geom);
  typename Graph<T>::Node n;
  n.kind = OpKind::transpose_conv3d;
  n.inputs = {x.id, w.id, bias.id};
  n.value = add_channel_bias(conv3d_input_grad_kernel(vx, vw, out_ext, geom), vb);
  n.tracked = g.tracked(x) || g.tracked(w) || g.tracked(bias);
  n.backward = [geom](Graph<T>& gg, const typename Graph<T>::Node& node, const Tensor<T>& gout) {
    const Tensor<T>& xin = gg.node(node.inputs[0]).value;
    const Tensor<T>& win = gg.node(node.inputs[1]).value;
    if (gg.node(node.inputs[0]).tracked)
      gg.accum_grad(node.inputs[0],
                    conv3d_forward_kernel<T>(gout, win, nullptr, geom));
    if (gg.node(node.inputs[1]).tracked)
      gg.accum_grad(node.inputs[1], conv3d_weight_grad_kernel(gout, xin, win.shape(), geom));
    if (gg.node(node.inputs[2]).tracked)
      gg.accum_grad(node.inputs[2], channel_sum_kernel(gout));
  };
  n.replay = [geom, out_ext](const std::vector<Tensor<T>>& in) {
    return add_channel_bias(conv3d_input_grad_kernel(in[0], in[1], out_ext, geom), in[2]);
  };
  return Val{g.push_node(std::move(n))};
}

namespace {

template <class T>
struct NormStats {
  std::vector<double> mean, invstd;
};

// Normalization over contiguous per-(sample, group) blocks.
template <class T>
NormStats<T> group_stats(const Tensor<T>& x, int groups, double eps) {
  const std::int64_t b = x.extent(0), c = x.extent(1);
  const std::int64_t vox = x.size() / (b * c);
  const std::int64_t gc = c / groups;
  const std::int64_t m = gc * vox;
  NormStats<T> s;
  s.mean.resize(static_cast<std::size_t>(b * groups));
  s.invstd.resize(static_cast<std::size_t>(b * groups));
  for (std::int64_t i = 0; i < b * groups; ++i) {
    const T* p = x.data() + i * m;
    double sum = 0.0, sq = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
      const double v = static_cast<double>(p[j]);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / static_cast<double>(m);
    const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
    s.mean[static_cast<std::size_t>(i)] = mean;
    s.invstd[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(var + eps);
  }
  return s;
}

template <class T>
Tensor<T> group_norm_forward_kernel(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, int groups, double eps) {
  const std::int64_t b = x.extent(0), c = x.extent(1);
  const std::int64_t vox = x.size() / (b * c);
  const std::int64_t gc = c / groups;
  const NormStats<T> s = group_stats(x, groups, eps);
  Tensor<T> out(x.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    const std::int64_t ch = bc % c;
    const std::int64_t gi = (bc / c) * groups + ch / gc;
    const double mean = s.mean[static_cast<std::size_t>(gi)];
    const double r = s.invstd[static_cast<std::size_t>(gi)];
    const double gm = static_cast<double>(gamma[ch]);
    const double bt = static_cast<double>(beta[ch]);
    const T* src = x.data() + bc * vox;
    T* dst = out.data() + bc * vox;
    for (std::int64_t i = 0; i < vox; ++i)
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * r * gm + bt);
  }
  return out;
}

}  // namespace

template <class T>
Val group_norm(Graph<T>& g, Val x, Val gamma, Val beta, int num_groups, double eps) {
  const Tensor<T>& vx = g.value(x);
  if (vx.rank() != 5)
    throw std::invalid_argument("group_norm expects 5-D input, got " + shape_str(vx.shape()));
  const std::int64_t c = vx.extent(1);
  if (num_groups < 1 || c % num_groups != 0)
    throw std::invalid_argument("group_norm channels " + std::to_string(c) +
                                " not divisible by num_groups " + std::to_string(num_groups));
  if (eps <= 0) throw std::invalid_argument("group_norm epsilon must be positive");
  typename Graph<T>::Node n;
  n.kind = OpKind::group_norm;
  n.inputs = {x.id, gamma.id, beta.id};
  n.value = group_norm_forward_kernel(vx, g.value(gamma), g.value(beta), num_groups, eps);
  n.tracked = g.tracked(x) || g.tracked(gamma) || g.tracked(beta);
  n.backward = [num_groups, eps](Graph<T>& gg, const typename Graph<T>::Node& node,
                                 const Tensor<T>& gout) {
    const Tensor<T>& xin = gg.node(node.inputs[0]).value;
    const Tensor<T>& gamma_v = gg.node(node.inputs[1]).value;
    const std::int64_t b = xin.extent(0), c = xin.extent(1);
    const std::int64_t vox = xin.size() / (b * c);
    const std::int64_t gc = c / num_groups;
    const std::int64_t m = gc * vox;
    const NormStats<T> s = group_stats(xin, num_groups, eps);
    const bool want_x = gg.node(node.inputs[0]).tracked;
    const bool want_gamma = gg.node(node.inputs[1]).tracked;
    const bool want_beta = gg.node(node.inputs[2]).tracked;
    Tensor<T> gx = want_x ? Tensor<T>(xin.shape()) : Tensor<T>();
    Tensor<T> ggamma(Shape{c}, T(0));
    Tensor<T> gbeta(Shape{c}, T(0));
    std::vector<double> gam_acc(static_cast<std::size_t>(c), 0.0);
    std::vector<double> bet_acc(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t gi = 0; gi < num_groups; ++gi) {
        const std::int64_t base = (bi * num_groups + gi) * m;
        const double mean = s.mean[static_cast<std::size_t>(bi * num_groups + gi)];
        const double r = s.invstd[static_cast<std::size_t>(bi * num_groups + gi)];
        // First pass: per-channel gamma/beta grads and group means of
        // a = gout*gamma against xhat.
        double mean_a = 0.0, mean_ax = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
          const std::int64_t ch = gi * gc + (j / vox);
          const double go = static_cast<double>(gout[base + j]);
          const double xh = (static_cast<double>(xin[base + j]) - mean) * r;
          bet_acc[static_cast<std::size_t>(ch)] += go;
          gam_acc[static_cast<std::size_t>(ch)] += go * xh;
          const double a = go * static_cast<double>(gamma_v[ch]);
          mean_a += a;
          mean_ax += a * xh;
        }
        mean_a /= static_cast<double>(m);
        mean_ax /= static_cast<double>(m);
        if (want_x) {
          for (std::int64_t j = 0; j < m; ++j) {
            const std::int64_t ch = gi * gc + (j / vox);
            const double a =
                static_cast<double>(gout[base + j]) * static_cast<double>(gamma_v[ch]);
            const double xh = (static_cast<double>(xin[base + j]) - mean) * r;
            gx[base + j] = static_cast<T>(r * (a - mean_a - xh * mean_ax));
          }
        }
      }
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      ggamma[ch] = static_cast<T>(gam_acc[static_cast<std::size_t>(ch)]);
      gbeta[ch] = static_cast<T>(bet_acc[static_cast<std::size_t>(ch)]);
    }
    if (want_x) gg.accum_grad(node.inputs[0], gx);
    if (want_gamma) gg.accum_grad(node.inputs[1], ggamma);
    if (want_beta) gg.accum_grad(node.inputs[2], gbeta);
  };
  n.replay = [num_groups, eps](const std::vector<Tensor<T>>& in) {
    return group_norm_forward_kernel(in[0], in[1], in[2], num_groups, eps);
  };
  return Val{g.push_node(std::move(n))};
}

namespace {

// Per-channel statistics over (batch, voxels); channel slabs are strided.
template <class T>
void batch_stats(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
  const std::int64_t b = x.extent(0), c = x.extent(1);
  const std::int64_t vox = x.size() / (b * c);
  const std::int64_t m = b * vox;
  mean.assign(static_cast<std::size_t>(c), 0.0);
  var.assign(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* p = x.data() + (bi * c + ch) * vox;
      for (std::int64_t i = 0; i < vox; ++i) {
        const double v = static_cast<double>(p[i]);
        sum += v;
        sq += v * v;
      }
    }
    const double mu = sum / static_cast<double>(m);
    mean[static_cast<std::size_t>(ch)] = mu;
    var[static_cast<std::size_t>(ch)] = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
  }
}

template <class T>
Tensor<T> batch_norm_apply(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const std::vector<double>& mean, const std::vector<double>& var,
                           double eps) {
  const std::int64_t b = x.extent(0), c = x.extent(1);
  const std::int64_t vox = x.size() / (b * c);
  Tensor<T> out(x.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    const std::int64_t ch = bc % c;
    const double r = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);
    const double mu = mean[static_cast<std::size_t>(ch)];
    const double gm = static_cast<double>(gamma[ch]);
    const double bt = static_cast<double>(beta[ch]);
    const T* src = x.data() + bc * vox;
    T* dst = out.data() + bc * vox;
    for (std::int64_t i = 0; i < vox; ++i)
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mu) * r * gm + bt);
  }
  return out;
}

}  // namespace

template <class T>
Val batch_norm(Graph<T>& g, Val x, Val gamma, Val beta, BatchNormState<T>& state, bool training,
               double momentum, double eps) {
  const Tensor<T>& vx = g.value(x);
  if (vx.rank() != 5)
    throw std::invalid_argument("batch_norm expects 5-D input, got " + shape_str(vx.shape()));
  const std::int64_t c = vx.extent(1);
  if (eps <= 0) throw std::invalid_argument("batch_norm epsilon must be positive");
  if (state.running_mean.size() != c || state.running_var.size() != c)
    throw std::invalid_argument("batch_norm running statistics sized " +
                                std::to_string(state.running_mean.size()) + " but input has " +
                                std::to_string(c) + " channels");

  std::vector<double> mean, var;
  if (training) {
    batch_stats(vx, mean, var);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = static_cast<T>((1.0 - momentum) *
                                                  static_cast<double>(state.running_mean[ch]) +
                                              momentum * mean[static_cast<std::size_t>(ch)]);
      state.running_var[ch] = static_cast<T>((1.0 - momentum) *
                                                 static_cast<double>(state.running_var[ch]) +
                                             momentum * var[static_cast<std::size_t>(ch)]);
    }
    state.steps[0] += T(1);
  } else {
    if (!(state.steps[0] > T(0)))
      throw std::runtime_error(
          "batch_norm inference requested before any training step; running statistics are "
          "uninitialized");
    mean.resize(static_cast<std::size_t>(c));
    var.resize(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = static_cast<double>(state.running_mean[ch]);
      var[static_cast<std::size_t>(ch)] = static_cast<double>(state.running_var[ch]);
    }
  }

  typename Graph<T>::Node n;
  n.kind = OpKind::batch_norm;
  n.inputs = {x.id, gamma.id, beta.id};
  n.value = batch_norm_apply(vx, g.value(gamma), g.value(beta), mean, var, eps);
  n.tracked = g.tracked(x) || g.tracked(gamma) || g.tracked(beta);
  n.backward = [training, eps, mean, var](Graph<T>& gg, const typename Graph<T>::Node& node,
                                          const Tensor<T>& gout) {
    const Tensor<T>& xin = gg.node(node.inputs[0]).value;
    const Tensor<T>& gamma_v = gg.node(node.inputs[1]).value;
    const std::int64_t b = xin.extent(0), c = xin.extent(1);
    const std::int64_t vox = xin.size() / (b * c);
    const std::int64_t m = b * vox;
    const bool want_x = gg.node(node.inputs[0]).tracked;
    const bool want_gamma = gg.node(node.inputs[1]).tracked;
    const bool want_beta = gg.node(node.inputs[2]).tracked;
    Tensor<T> gx = want_x ? Tensor<T>(xin.shape()) : Tensor<T>();
    Tensor<T> ggamma(Shape{c}, T(0));
    Tensor<T> gbeta(Shape{c}, T(0));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mu = mean[static_cast<std::size_t>(ch)];
      const double r = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);
      const double gm = static_cast<double>(gamma_v[ch]);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const T* gp = gout.data() + (bi * c + ch) * vox;
        const T* xp = xin.data() + (bi * c + ch) * vox;
        for (std::int64_t i = 0; i < vox; ++i) {
          const double go = static_cast<double>(gp[i]);
          const double xh = (static_cast<double>(xp[i]) - mu) * r;
          sum_g += go;
          sum_gx += go * xh;
        }
      }
      ggamma[ch] = static_cast<T>(sum_gx);
      gbeta[ch] = static_cast<T>(sum_g);
      if (!want_x) continue;
      if (training) {
        const double mean_g = sum_g / static_cast<double>(m);
        const double mean_gx = sum_gx / static_cast<double>(m);
        for (std::int64_t bi = 0; bi < b; ++bi) {
          const T* gp = gout.data() + (bi * c + ch) * vox;
          const T* xp = xin.data() + (bi * c + ch) * vox;
          T* dst = gx.data() + (bi * c + ch) * vox;
          for (std::int64_t i = 0; i < vox; ++i) {
            const double go = static_cast<double>(gp[i]);
            const double xh = (static_cast<double>(xp[i]) - mu) * r;
            dst[i] = static_cast<T>(r * gm * (go - mean_g - xh * mean_gx));
          }
        }
      } else {
        // Inference statistics are constants: the map is affine per channel.
        for (std::int64_t bi = 0; bi < b; ++bi) {
          const T* gp = gout.data() + (bi * c + ch) * vox;
          T* dst = gx.data() + (bi * c + ch) * vox;
          for (std::int64_t i = 0; i < vox; ++i)
            dst[i] = static_cast<T>(static_cast<double>(gp[i]) * r * gm);
        }
      }
    }
    if (want_x) gg.accum_grad(node.inputs[0], gx);
    if (want_gamma) gg.accum_grad(node.inputs[1], ggamma);
    if (want_beta) gg.accum_grad(node.inputs[2], gbeta);
  };
  n.replay = [training, eps, mean, var](const std::vector<Tensor<T>>& in) {
    if (training) {
      std::vector<double> m2, v2;
      batch_stats(in[0], m2, v2);
      return batch_norm_apply(in[0], in[1], in[2], m2, v2, eps);
    }
    return batch_norm_apply(in[0], in[1], in[2], mean, var, eps);
  };
  return Val{g.push_node(std::move(n))};
}

template Val conv3d<float>(Graph<float>&, Val, Val, Val, const ConvGeom&);
template Val conv3d<double>(Graph<double>&, Val, Val, Val, const ConvGeom&);
template Val transpose_conv3d<float>(Graph<float>&, Val, Val, Val, const ConvGeom&);
template Val transpose_conv3d<double>(Graph<double>&, Val, Val, Val, const ConvGeom&);
template Val group_norm<float>(Graph<float>&, Val, Val, Val, int, double);
template Val group_norm<double>(Graph<double>&, Val, Val, Val, int, double);
template Val batch_norm<float>(Graph<float>&, Val, Val, Val, BatchNormState<float>&, bool, double,
                               double);
template Val batch_norm<double>(Graph<double>&, Val, Val, Val, BatchNormState<double>&, bool,
                                double, double);

}  // namespace axunet
