#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "dhi/depth_weighting.hpp"
#include "dhi/nn.hpp"

namespace dhi {

// C channels split into G contiguous groups; channel k uses group k / (C / G).
struct GroupSpec {
  std::size_t groups = 1;
  std::size_t channels = 0;

  void validate() const;
  std::size_t group_of(std::size_t channel) const { return channel / (channels / groups); }
};

// Per-position kernels, values (N, H, W, F*F*G) with the last axis ordered (m, n, g).
struct KernelField {
  Tensor values;
  std::size_t kernel_size = 0;
  std::size_t groups = 1;
};

// LiteralBroadcast: N2 emits one scalar per position, broadcast to all F*F*G taps.
// CoordinateModulated: the 6-wide N1 embedding is multiplied elementwise by a
// fixed sinusoidal code of each tap offset before N2, giving F*F distinct taps
// with the same parameters.
enum class GeneratorMode { LiteralBroadcast, CoordinateModulated };

GeneratorMode parse_generator_mode(std::string_view name);
std::string_view to_string(GeneratorMode mode);

inline constexpr std::size_t kEmbeddingWidth = 6;

// (F*F) x 6 row-major offset codes; all ones under LiteralBroadcast.
std::vector<double> offset_encoding(std::size_t kernel_size, GeneratorMode mode);

// Filter-generating hyper-network: three pointwise layers (8, 8, 6 filters,
// each with bias; batch norm + leaky ReLU after the first two) followed by a
// single pointwise filter N2. Its size depends only on the input channel count.
class HyperNetwork {
 public:
  static constexpr std::array<std::size_t, 3> kFilters = {8, 8, 6};
  static constexpr double kSlope = 0.1;

  HyperNetwork() = default;
  explicit HyperNetwork(std::size_t in_channels, GeneratorMode mode = GeneratorMode::CoordinateModulated);

  KernelField generate(const Tensor& input, std::size_t kernel_size, const GroupSpec& groups, Mode mode);

  void init(Rng& rng);
  void zero();
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const;
  std::size_t in_channels() const { return in_channels_; }
  GeneratorMode mode() const { return mode_; }
  void set_mode(GeneratorMode mode) { mode_ = mode; }

  Conv2dLayer layer1, layer2, layer3, n2;
  BatchNormLayer bn1, bn2;

 private:
  std::size_t in_channels_ = 0;
  GeneratorMode mode_ = GeneratorMode::CoordinateModulated;
};

// Kernel generator of plain involution: reduce (1x1, bias) -> BN -> ReLU ->
// span (1x1, bias) to F*F*G channels. Its size grows with F.
class InvolutionGenerator {
 public:
  InvolutionGenerator() = default;
  InvolutionGenerator(std::size_t in_channels, std::size_t reduced_channels, std::size_t kernel_size,
                      std::size_t groups);

  KernelField generate(const Tensor& input, Mode mode);

  void init(Rng& rng);
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const;

  Conv2dLayer reduce, span;
  BatchNormLayer bn;
  std::size_t kernel_size = 0;
  std::size_t groups = 1;
};

// Differentiable in both arguments.
Tensor involution(const Tensor& input, const KernelField& kernels);

// kernels * field, broadcast over groups; field (N, H, W, F*F) is constant.
KernelField apply_weight_field(const KernelField& kernels, const Tensor& field);

// N2 stage: out[p, t, g] = b + sum_e w[e] * emb[p, e] * code[t, e].
Tensor modulated_projection(const Tensor& embedding, const Tensor& weight, const Tensor& bias,
                            const std::vector<double>& codes, std::size_t taps, std::size_t groups);

KernelField generate_kernels(HyperNetwork& net, const Tensor& input, std::size_t kernel_size,
                             const GroupSpec& groups, Mode mode = Mode::Train);
Tensor involution_forward(const Tensor& input, const KernelField& kernels, const GroupSpec& groups);
Tensor hyper_involution_forward(const Tensor& input, HyperNetwork& net, std::size_t kernel_size,
                                const GroupSpec& groups, Mode mode = Mode::Train);
// depth: (N, H, W, 1), spatially aligned with input.
Tensor depth_aware_hyper_involution_forward(const Tensor& input, const Tensor& depth, HyperNetwork& net,
                                            const WeightingSpec& weighting, std::size_t kernel_size,
                                            const GroupSpec& groups, Mode mode = Mode::Train);

enum class OperatorKind { Convolution, Involution, HyperInvolution, DepthAwareHyperInvolution };

std::string_view to_string(OperatorKind kind);

struct OperatorConfig {
  OperatorKind kind = OperatorKind::DepthAwareHyperInvolution;
  std::size_t in_channels = 3;
  std::size_t filters = 8;
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
};

// Trainable scalars of one operator instance. Convolution has no bias;
// Involution reduces to `filters` channels; the hyper-involution family
// counts its hyper-network (the depth weighting adds nothing).
std::size_t count_params(const OperatorConfig& config);
// Same, plus batch-norm running statistics (stored but not trained).
std::size_t count_stored_params(const OperatorConfig& config);

}  // namespace dhi
