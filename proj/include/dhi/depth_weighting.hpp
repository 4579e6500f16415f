#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dhi/tensor.hpp"

namespace dhi {

// Radial-basis depth-similarity functions of the signed difference d1 - d2.
//   InverseMultiquadric  1 / sqrt(1 + (gamma * dd)^2)
//   Gaussian             exp(-(gamma * |dd|)^2)
//   Triangular           max(1 - |dd|, 0)                 (no gamma)
//   WendlandC2           (1 - r)^4 (4 r + 1), r = min(|dd|, 1)  (no gamma)
// `wendland_literal` switches WendlandC2 to the unclamped signed form
// (1 - dd)^4 (4 dd + 1), which is not symmetric in (d1, d2).
enum class WeightingKind { InverseMultiquadric, Gaussian, Triangular, WendlandC2 };

struct WeightingSpec {
  WeightingKind kind = WeightingKind::InverseMultiquadric;
  double gamma = 9.5;
  bool wendland_literal = false;

  void validate() const;
  bool uses_gamma() const {
    return kind == WeightingKind::InverseMultiquadric || kind == WeightingKind::Gaussian;
  }
};

WeightingKind parse_weighting_kind(std::string_view name);
std::string_view to_string(WeightingKind kind);

double depth_weight(const WeightingSpec& spec, double d1, double d2);

// Single-channel metric depth aligned with an RGB image.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major

  DepthMap() = default;
  DepthMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

  // Finite and non-negative everywhere.
  void validate() const;
  // (1, H, W, 1) tensor.
  Tensor to_tensor() const;
  static DepthMap from_tensor(const Tensor& t, std::size_t batch_index = 0);
};

// (H, W, F, F) field: entry (i, j, m, n) weighs the neighbour at offset
// (m - F/2, n - F/2) against the centre. Out-of-bounds neighbours count as
// equal depth (weight 1). The field has no trainable parameters.
Tensor weight_field(const DepthMap& depth, std::size_t kernel_size, const WeightingSpec& spec);

// Batched form over a (N, H, W, 1) depth tensor, returning (N, H, W, F*F).
Tensor weight_field(const Tensor& depth, std::size_t kernel_size, const WeightingSpec& spec);

}  // namespace dhi
