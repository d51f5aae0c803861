#pragma once

#include <array>
#include <cstdint>

#include "axunet/graph.hpp"
#include "axunet/tensor.hpp"

namespace axunet {

struct ConvGeom {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
};

inline ConvGeom conv_same3() { return ConvGeom{{1, 1, 1}, {1, 1, 1}}; }
inline ConvGeom conv_down2() { return ConvGeom{{2, 2, 2}, {0, 0, 0}}; }

// floor((in + 2*pad - kernel) / stride) + 1 per axis; throws on zero-size output.
std::array<std::int64_t, 3> conv_output_extents(const std::array<std::int64_t, 3>& in,
                                                const std::array<std::int64_t, 3>& kernel,
                                                const ConvGeom& geom);
// (in - 1) * stride - 2*pad + kernel per axis.
std::array<std::int64_t, 3> transpose_conv_output_extents(const std::array<std::int64_t, 3>& in,
                                                          const std::array<std::int64_t, 3>& kernel,
                                                          const ConvGeom& geom);

// x: [b, ci, X, Y, Z], w: [co, ci, kx, ky, kz], bias: [co] -> [b, co, ...].
template <class T>
Val conv3d(Graph<T>& g, Val x, Val w, Val bias, const ConvGeom& geom);

// Adjoint of conv3d with the same weight layout. x: [b, co, ...] -> [b, ci, ...],
// bias: [ci].
template <class T>
Val transpose_conv3d(Graph<T>& g, Val x, Val w, Val bias, const ConvGeom& geom);

// Per (sample, group) normalization over (channels-in-group, x, y, z).
template <class T>
Val group_norm(Graph<T>& g, Val x, Val gamma, Val beta, int num_groups, double eps = 1e-5);

template <class T>
struct BatchNormState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  Tensor<T> steps;         // [1], number of training-mode updates applied
};

// Train mode normalizes per channel over (batch, x, y, z) and updates the
// running statistics in place with the given momentum. Infer mode applies the
// stored statistics and throws if no update has ever happened.
template <class T>
Val batch_norm(Graph<T>& g, Val x, Val gamma, Val beta, BatchNormState<T>& state, bool training,
               double momentum = 0.1, double eps = 1e-5);

}  // namespace axunet
