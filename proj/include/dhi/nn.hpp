#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dhi/ops.hpp"
#include "dhi/rng.hpp"
#include "dhi/tensor.hpp"

namespace dhi {

enum class Mode { Train, Eval };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for running statistics and fixed buffers
};

// Flat, ordered list of every tensor a model owns. Order is registration
// order, which fixes the weight-file layout and optimizer iteration order.
class ParamRegistry {
 public:
  void add(std::string name, Tensor tensor, bool trainable = true);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  std::size_t trainable_count() const;
  std::size_t stored_count() const;
  const NamedTensor* find(const std::string& name) const;

 private:
  std::vector<NamedTensor> entries_;
};

// He-normal initialised 2-D convolution, weights (out, in, F, F).
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
              Padding padding = Padding::Same, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;
  void init(Rng& rng, double gain = 2.0);
  void zero();
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const;

  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};

// Weights (in, out, F, F); see transposed_conv2d.
class TransposedConv2dLayer {
 public:
  TransposedConv2dLayer() = default;
  TransposedConv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride, Padding padding = Padding::Same, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;
  void init(Rng& rng, double gain = 2.0);
  void zero();
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const;

  Tensor weight;
  Tensor bias;
  std::size_t stride = 2;
  Padding padding = Padding::Same;
};

class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels);

  Tensor operator()(const Tensor& x, Mode mode);
  void register_params(const std::string& prefix, ParamRegistry& reg) const;
  std::size_t param_count() const { return scale.size() + shift.size(); }

  Tensor scale;
  Tensor shift;
  BatchNormState state;
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  // Throws InvalidArgument when a parameter has no gradient.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  std::size_t parameter_scalars() const;
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions options_;
  std::size_t t_ = 0;
};

}  // namespace dhi
