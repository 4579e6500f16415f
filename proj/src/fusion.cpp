#include "dhi/fusion.hpp"

#include "dhi/error.hpp"

namespace dhi {

void FusionConfig::validate() const {
  if (channels == 0) throw InvalidArgument("fusion channels must be >= 1");
  if (upsample_factor == 0) throw InvalidArgument("fusion upsample factor must be >= 1");
  if (encoder_stride != upsample_factor) {
    throw InvalidArgument("fusion encoder stride must equal the upsample factor to preserve shape");
  }
  if (encoder_kernel % 2 == 0 || decoder_kernel % 2 == 0) throw InvalidArgument("fusion kernels must be odd");
}

FusionStage::FusionStage(const FusionConfig& config)
    : residual(config.channels, config.channels, 3),
      encoder(config.channels, config.channels, config.encoder_kernel, config.encoder_stride),
      decoder(config.channels, config.channels, config.decoder_kernel, 1, Padding::Same),
      config_(config) {
  config.validate();
}

Tensor FusionStage::residual_map(const Tensor& depth_feat) const {
  return add(depth_feat, leaky_relu(residual(depth_feat), config_.slope));
}

Tensor FusionStage::fuse(const Tensor& rgb_feat, const Tensor& depth_feat) const {
  if (rgb_feat.shape() != depth_feat.shape()) {
    throw InvalidArgument("fusion: stream shapes differ, rgb " + shape_str(rgb_feat.shape()) + " vs depth " +
                          shape_str(depth_feat.shape()));
  }
  if (rgb_feat.rank() != 4 || rgb_feat.dim(3) != config_.channels) {
    throw InvalidArgument("fusion: expected " + std::to_string(config_.channels) + "-channel rank-4 features");
  }
  const Tensor s = add(rgb_feat, residual_map(depth_feat));
  const Tensor e = leaky_relu(encoder(upsample_nearest(s, config_.upsample_factor)), config_.slope);
  return add(decoder(e), e);
}

void FusionStage::init(Rng& rng) {
  residual.init(rng, 0.5);
  encoder.init(rng);
  decoder.init(rng, 0.5);
}

void FusionStage::zero() {
  residual.zero();
  encoder.zero();
  decoder.zero();
}

void FusionStage::register_params(const std::string& prefix, ParamRegistry& reg) const {
  residual.register_params(prefix + ".residual", reg);
  encoder.register_params(prefix + ".encoder", reg);
  decoder.register_params(prefix + ".decoder", reg);
}

std::size_t FusionStage::param_count() const {
  return residual.param_count() + encoder.param_count() + decoder.param_count();
}

}  // namespace dhi
