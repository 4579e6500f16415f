#pragma once

#include <cstddef>

#include "dhi/nn.hpp"

namespace dhi {

struct FusionConfig {
  std::size_t channels = 3;
  std::size_t upsample_factor = 2;
  std::size_t encoder_kernel = 3;
  std::size_t encoder_stride = 2;
  std::size_t decoder_kernel = 3;
  double slope = 0.1;

  void validate() const;
};

// Trainable RGB/depth fusion:
//   r = depth + act(conv3x3(depth))            residual mapping
//   s = rgb + r                                element-wise addition
//   e = act(conv_stride(upsample(s)))          encoder
//   out = tconv(e) + e                         decoder with skip addition
// Output extents equal input extents.
class FusionStage {
 public:
  FusionStage() = default;
  explicit FusionStage(const FusionConfig& config);

  Tensor residual_map(const Tensor& depth_feat) const;
  Tensor fuse(const Tensor& rgb_feat, const Tensor& depth_feat) const;

  void init(Rng& rng);
  void zero();
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const;
  const FusionConfig& config() const { return config_; }

  Conv2dLayer residual;
  Conv2dLayer encoder;
  TransposedConv2dLayer decoder;

 private:
  FusionConfig config_;
};

}  // namespace dhi
