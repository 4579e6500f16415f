#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhi/detector.hpp"
#include "dhi/operators.hpp"

namespace dhi {

// Multiply and add each count as one FLOP; activations, pooling, tiling and
// resampling count as zero.
struct LayerProfile {
  std::string name;
  std::string kind;
  Shape output;  // (H, W, C)
  std::size_t params = 0;
  std::uint64_t flops = 0;
};

struct ModelProfile {
  std::vector<LayerProfile> layers;

  std::size_t total_params() const;
  std::uint64_t total_flops() const;
  double gflops() const { return static_cast<double>(total_flops()) * 1e-9; }
};

// 2 * out_h * out_w * out_c * in_c * F^2 (bias adds not counted).
std::uint64_t conv_flops(std::size_t out_h, std::size_t out_w, std::size_t out_c, std::size_t in_c,
                         std::size_t kernel);

LayerProfile profile_conv(const std::string& name, const Conv2dLayer& conv, std::size_t in_h, std::size_t in_w);

// Per-layer table of a detector at its configured input size. The depth
// weighting stage appears as its own row with zero parameters.
ModelProfile profile_model(const Detector& model);

// Published reference for the full model at 416 x 416.
inline constexpr double kReferenceGflops = 26.72;

struct ComparisonRow {
  std::string operator_name;
  std::string count;  // "trainable" or "stored"
  std::vector<std::size_t> values;
};

struct ComparisonTable {
  std::vector<std::size_t> kernel_sizes;
  std::vector<ComparisonRow> rows;
};

ComparisonTable parameter_comparison(const std::vector<OperatorKind>& kinds, const std::vector<std::size_t>& kernel_sizes,
                                     std::size_t in_channels = 3, std::size_t filters = 8, std::size_t groups = 1);

void write_comparison_csv(const std::filesystem::path& path, const ComparisonTable& table);
ComparisonTable read_comparison_csv(const std::filesystem::path& path);
std::string format_comparison(const ComparisonTable& table);

void write_profile_csv(const std::filesystem::path& path, const ModelProfile& profile);
std::string format_profile(const ModelProfile& profile);

}  // namespace dhi
