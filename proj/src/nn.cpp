#include "dhi/nn.hpp"

#include <cmath>

#include "dhi/error.hpp"

namespace dhi {

void ParamRegistry::add(std::string name, Tensor tensor, bool trainable) {
  if (!tensor.defined()) return;
  if (find(name)) throw InvalidArgument("duplicate parameter name: " + name);
  entries_.push_back(NamedTensor{std::move(name), std::move(tensor), trainable});
}

std::vector<Tensor> ParamRegistry::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

std::size_t ParamRegistry::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.size();
  return n;
}

std::size_t ParamRegistry::stored_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

const NamedTensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

Conv2dLayer::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                         std::size_t stride_, Padding padding_, bool with_bias)
    : weight(Tensor::zeros({out_channels, in_channels, kernel, kernel})), stride(stride_), padding(padding_) {
  if (kernel % 2 == 0) throw InvalidArgument("Conv2dLayer: kernel size must be odd");
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor::zeros({out_channels}).set_requires_grad(true);
}

Tensor Conv2dLayer::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2dLayer::init(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(weight.dim(1) * weight.dim(2) * weight.dim(3));
  const double std_dev = std::sqrt(gain / fan_in);
  for (auto& v : weight.data()) v = rng.normal() * std_dev;
  if (bias.defined())
    for (auto& v : bias.data()) v = 0.0;
}

void Conv2dLayer::zero() {
  for (auto& v : weight.data()) v = 0.0;
  if (bias.defined())
    for (auto& v : bias.data()) v = 0.0;
}

void Conv2dLayer::register_params(const std::string& prefix, ParamRegistry& reg) const {
  reg.add(prefix + ".weight", weight);
  if (bias.defined()) reg.add(prefix + ".bias", bias);
}

std::size_t Conv2dLayer::param_count() const { return weight.size() + bias.size(); }

TransposedConv2dLayer::TransposedConv2dLayer(std::size_t in_channels, std::size_t out_channels,
                                             std::size_t kernel, std::size_t stride_, Padding padding_,
                                             bool with_bias)
    : weight(Tensor::zeros({in_channels, out_channels, kernel, kernel})), stride(stride_), padding(padding_) {
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor::zeros({out_channels}).set_requires_grad(true);
}

Tensor TransposedConv2dLayer::operator()(const Tensor& x) const {
  return transposed_conv2d(x, weight, bias, stride, padding);
}

void TransposedConv2dLayer::init(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(weight.dim(0) * weight.dim(2) * weight.dim(3));
  const double std_dev = std::sqrt(gain / fan_in);
  for (auto& v : weight.data()) v = rng.normal() * std_dev;
  if (bias.defined())
    for (auto& v : bias.data()) v = 0.0;
}

void TransposedConv2dLayer::zero() {
  for (auto& v : weight.data()) v = 0.0;
  if (bias.defined())
    for (auto& v : bias.data()) v = 0.0;
}

void TransposedConv2dLayer::register_params(const std::string& prefix, ParamRegistry& reg) const {
  reg.add(prefix + ".weight", weight);
  if (bias.defined()) reg.add(prefix + ".bias", bias);
}

std::size_t TransposedConv2dLayer::param_count() const { return weight.size() + bias.size(); }

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : scale(Tensor::ones({channels})), shift(Tensor::zeros({channels})) {
  scale.set_requires_grad(true);
  shift.set_requires_grad(true);
  state.running_mean = Tensor::zeros({channels});
  state.running_var = Tensor::ones({channels});
}

Tensor BatchNormLayer::operator()(const Tensor& x, Mode mode) {
  return batchnorm(x, scale, shift, state, mode == Mode::Train ? BatchNormMode::Train : BatchNormMode::Eval);
}

void BatchNormLayer::register_params(const std::string& prefix, ParamRegistry& reg) const {
  reg.add(prefix + ".scale", scale);
  reg.add(prefix + ".shift", shift);
  reg.add(prefix + ".running_mean", state.running_mean, false);
  reg.add(prefix + ".running_var", state.running_var, false);
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw InvalidArgument("Adam::step: parameter has no gradient");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    auto data = p.data();
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      data[k] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Adam::parameter_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

}  // namespace dhi
