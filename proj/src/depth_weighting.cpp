#include "dhi/depth_weighting.hpp"

#include <algorithm>
#include <cmath>

#include "dhi/error.hpp"

namespace dhi {

void WeightingSpec::validate() const {
  if (uses_gamma() && !(gamma > 0.0 && std::isfinite(gamma))) {
    throw InvalidArgument("weighting gamma must be a positive finite number");
  }
}

WeightingKind parse_weighting_kind(std::string_view name) {
  if (name == "imq" || name == "inverse-multiquadric" || name == "inverse_multiquadric")
    return WeightingKind::InverseMultiquadric;
  if (name == "gaussian") return WeightingKind::Gaussian;
  if (name == "triangular") return WeightingKind::Triangular;
  if (name == "wendland" || name == "wendland-c2" || name == "wendland_c2") return WeightingKind::WendlandC2;
  throw InvalidArgument("unknown weighting kind '" + std::string(name) +
                        "' (expected imq, gaussian, triangular or wendland)");
}

std::string_view to_string(WeightingKind kind) {
  switch (kind) {
    case WeightingKind::InverseMultiquadric: return "imq";
    case WeightingKind::Gaussian: return "gaussian";
    case WeightingKind::Triangular: return "triangular";
    case WeightingKind::WendlandC2: return "wendland";
  }
  return "imq";
}

double depth_weight(const WeightingSpec& spec, double d1, double d2) {
  if (!std::isfinite(d1) || !std::isfinite(d2)) throw InvalidArgument("depth_weight: non-finite depth");
  const double dd = d1 - d2;
  switch (spec.kind) {
    case WeightingKind::InverseMultiquadric: {
      const double s = spec.gamma * dd;
      return 1.0 / std::sqrt(1.0 + s * s);
    }
    case WeightingKind::Gaussian: {
      const double s = spec.gamma * std::abs(dd);
      return std::exp(-(s * s));
    }
    case WeightingKind::Triangular:
      return std::max(1.0 - std::abs(dd), 0.0);
    case WeightingKind::WendlandC2: {
      if (spec.wendland_literal) {
        const double a = 1.0 - dd;
        return a * a * a * a * (4.0 * dd + 1.0);
      }
      const double r = std::min(std::abs(dd), 1.0);
      const double a = 1.0 - r;
      return a * a * a * a * (4.0 * r + 1.0);
    }
  }
  return 1.0;
}

void DepthMap::validate() const {
  if (values.size() != height * width) throw InvalidArgument("depth map size does not match its extents");
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("depth map values must be finite and >= 0");
  }
}

Tensor DepthMap::to_tensor() const { return Tensor({1, height, width, 1}, values); }

DepthMap DepthMap::from_tensor(const Tensor& t, std::size_t batch_index) {
  if (t.rank() != 4 || t.dim(3) != 1) throw InvalidArgument("depth tensor must be (N, H, W, 1)");
  DepthMap d(t.dim(1), t.dim(2));
  const auto src = t.data().subspan(batch_index * d.values.size(), d.values.size());
  std::copy(src.begin(), src.end(), d.values.begin());
  return d;
}

namespace {

void fill_field(std::span<const double> depth, std::size_t h, std::size_t w, std::size_t f,
                const WeightingSpec& spec, std::span<double> out) {
  const auto half = static_cast<std::ptrdiff_t>(f / 2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double centre = depth[i * w + j];
      double* cell = out.data() + (i * w + j) * f * f;
      for (std::size_t m = 0; m < f; ++m) {
        const auto y = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(m) - half;
        for (std::size_t n = 0; n < f; ++n) {
          const auto x = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(n) - half;
          const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(h) &&
                              x < static_cast<std::ptrdiff_t>(w);
          const double neighbour = inside ? depth[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] : centre;
          cell[m * f + n] = depth_weight(spec, centre, neighbour);
        }
      }
    }
}

void check_kernel(std::size_t f) {
  if (f == 0 || f % 2 == 0) throw InvalidArgument("weight_field: kernel size must be odd, got " + std::to_string(f));
}

}  // namespace

Tensor weight_field(const DepthMap& depth, std::size_t kernel_size, const WeightingSpec& spec) {
  check_kernel(kernel_size);
  spec.validate();
  depth.validate();
  Tensor out({depth.height, depth.width, kernel_size, kernel_size});
  fill_field(depth.values, depth.height, depth.width, kernel_size, spec, out.data());
  return out;
}

Tensor weight_field(const Tensor& depth, std::size_t kernel_size, const WeightingSpec& spec) {
  check_kernel(kernel_size);
  spec.validate();
  if (!depth.defined()) throw InvalidArgument("weight_field: missing depth map");
  if (depth.rank() != 4 || depth.dim(3) != 1) {
    throw InvalidArgument("weight_field: depth must be (N, H, W, 1), got " + shape_str(depth.shape()));
  }
  const std::size_t n_ = depth.dim(0), h = depth.dim(1), w = depth.dim(2);
  for (double v : depth.data()) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("depth map values must be finite and >= 0");
  }
  const std::size_t ff = kernel_size * kernel_size;
  Tensor out({n_, h, w, ff});
  for (std::size_t n = 0; n < n_; ++n) {
    fill_field(depth.data().subspan(n * h * w, h * w), h, w, kernel_size, spec,
               out.data().subspan(n * h * w * ff, h * w * ff));
  }
  return out;
}

}  // namespace dhi
