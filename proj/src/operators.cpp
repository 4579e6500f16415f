#include "dhi/operators.hpp"

#include <cmath>
#include <numbers>

#include "dhi/error.hpp"
#include "dhi/parallel.hpp"

namespace dhi {

void GroupSpec::validate() const {
  if (groups == 0) throw InvalidArgument("group count must be >= 1");
  if (channels % groups != 0) {
    throw InvalidArgument("channel count " + std::to_string(channels) + " is not divisible by " +
                          std::to_string(groups) + " groups");
  }
}

GeneratorMode parse_generator_mode(std::string_view name) {
  if (name == "literal" || name == "literal-broadcast" || name == "broadcast") return GeneratorMode::LiteralBroadcast;
  if (name == "coordinate" || name == "coordinate-modulated" || name == "modulated")
    return GeneratorMode::CoordinateModulated;
  throw InvalidArgument("unknown generator mode '" + std::string(name) + "' (expected literal or coordinate)");
}

std::string_view to_string(GeneratorMode mode) {
  return mode == GeneratorMode::LiteralBroadcast ? "literal" : "coordinate";
}

std::vector<double> offset_encoding(std::size_t kernel_size, GeneratorMode mode) {
  const std::size_t taps = kernel_size * kernel_size;
  std::vector<double> codes(taps * kEmbeddingWidth, 1.0);
  if (mode == GeneratorMode::LiteralBroadcast) return codes;
  const double half = static_cast<double>(kernel_size / 2);
  const double norm = half > 0.0 ? half : 1.0;
  constexpr double pi = std::numbers::pi;
  for (std::size_t m = 0; m < kernel_size; ++m)
    for (std::size_t n = 0; n < kernel_size; ++n) {
      const double u = (static_cast<double>(m) - half) / norm;
      const double v = (static_cast<double>(n) - half) / norm;
      double* c = codes.data() + (m * kernel_size + n) * kEmbeddingWidth;
      c[0] = 1.0;
      c[1] = std::sin(0.5 * pi * u);
      c[2] = std::sin(0.5 * pi * v);
      c[3] = std::cos(pi * u);
      c[4] = std::cos(pi * v);
      c[5] = std::sin(0.5 * pi * u) * std::sin(0.5 * pi * v);
    }
  return codes;
}

HyperNetwork::HyperNetwork(std::size_t in_channels, GeneratorMode mode)
    : layer1(in_channels, kFilters[0], 1),
      layer2(kFilters[0], kFilters[1], 1),
      layer3(kFilters[1], kFilters[2], 1),
      n2(kFilters[2], 1, 1),
      bn1(kFilters[0]),
      bn2(kFilters[1]),
      in_channels_(in_channels),
      mode_(mode) {}

KernelField HyperNetwork::generate(const Tensor& input, std::size_t kernel_size, const GroupSpec& groups,
                                   Mode mode) {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw InvalidArgument("kernel size must be odd, got " + std::to_string(kernel_size));
  }
  if (input.rank() != 4) throw InvalidArgument("hyper-network input must be rank 4");
  groups.validate();
  if (groups.channels != input.dim(3)) throw InvalidArgument("group spec channel count does not match input");
  Tensor h = leaky_relu(bn1(layer1(input), mode), kSlope);
  h = leaky_relu(bn2(layer2(h), mode), kSlope);
  const Tensor embedding = layer3(h);
  const auto codes = offset_encoding(kernel_size, mode_);
  Tensor values = modulated_projection(embedding, n2.weight, n2.bias, codes, kernel_size * kernel_size,
                                       groups.groups);
  return KernelField{values, kernel_size, groups.groups};
}

void HyperNetwork::init(Rng& rng) {
  layer1.init(rng);
  layer2.init(rng);
  layer3.init(rng, 1.0);
  n2.init(rng, 1.0);
}

void HyperNetwork::zero() {
  layer1.zero();
  layer2.zero();
  layer3.zero();
  n2.zero();
}

void HyperNetwork::register_params(const std::string& prefix, ParamRegistry& reg) const {
  layer1.register_params(prefix + ".n1.0", reg);
  bn1.register_params(prefix + ".n1.bn0", reg);
  layer2.register_params(prefix + ".n1.1", reg);
  bn2.register_params(prefix + ".n1.bn1", reg);
  layer3.register_params(prefix + ".n1.2", reg);
  n2.register_params(prefix + ".n2", reg);
}

std::size_t HyperNetwork::param_count() const {
  return layer1.param_count() + bn1.param_count() + layer2.param_count() + bn2.param_count() +
         layer3.param_count() + n2.param_count();
}

InvolutionGenerator::InvolutionGenerator(std::size_t in_channels, std::size_t reduced_channels,
                                         std::size_t kernel_size_, std::size_t groups_)
    : reduce(in_channels, reduced_channels, 1),
      span(reduced_channels, kernel_size_ * kernel_size_ * groups_, 1),
      bn(reduced_channels),
      kernel_size(kernel_size_),
      groups(groups_) {
  if (kernel_size == 0 || kernel_size % 2 == 0) throw InvalidArgument("kernel size must be odd");
}

KernelField InvolutionGenerator::generate(const Tensor& input, Mode mode) {
  Tensor values = span(relu(bn(reduce(input), mode)));
  return KernelField{values, kernel_size, groups};
}

void InvolutionGenerator::init(Rng& rng) {
  reduce.init(rng);
  span.init(rng, 1.0);
}

void InvolutionGenerator::register_params(const std::string& prefix, ParamRegistry& reg) const {
  reduce.register_params(prefix + ".reduce", reg);
  bn.register_params(prefix + ".bn", reg);
  span.register_params(prefix + ".span", reg);
}

std::size_t InvolutionGenerator::param_count() const {
  return reduce.param_count() + bn.param_count() + span.param_count();
}

namespace {

void check_field(const Tensor& input, const KernelField& k) {
  if (!input.defined() || input.rank() != 4) throw InvalidArgument("involution: input must be rank 4");
  if (!k.values.defined() || k.values.rank() != 4) throw InvalidArgument("involution: kernel field must be rank 4");
  if (k.kernel_size == 0 || k.kernel_size % 2 == 0) throw InvalidArgument("involution: kernel size must be odd");
  GroupSpec{k.groups, input.dim(3)}.validate();
  const auto& s = input.shape();
  const auto& ks = k.values.shape();
  if (ks[0] != s[0] || ks[1] != s[1] || ks[2] != s[2] || ks[3] != k.kernel_size * k.kernel_size * k.groups) {
    throw InvalidArgument("involution: kernel field " + shape_str(ks) + " is not aligned with input " +
                          shape_str(s));
  }
}

}  // namespace

Tensor involution(const Tensor& input, const KernelField& kernels) {
  check_field(input, kernels);
  const std::size_t n_ = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  const std::size_t f = kernels.kernel_size, g_n = kernels.groups, per_group = c / g_n;
  const std::size_t kw = f * f * g_n;
  const auto half = static_cast<std::ptrdiff_t>(f / 2);
  Tensor out = Tensor::zeros(input.shape());
  const double* x = input.data().data();
  const double* kv = kernels.values.data().data();
  double* y = out.data().data();

  // Calls fn(out_offset, in_offset, kernel_offset) for every in-bounds tap.
  auto taps = [=](std::size_t n, auto&& fn) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = (n * h + i) * w + j;
        for (std::size_t m = 0; m < f; ++m) {
          const auto yy = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(m) - half;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t q = 0; q < f; ++q) {
            const auto xx = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(q) - half;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t src = (n * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx);
            fn(p, src, p * kw + (m * f + q) * g_n);
          }
        }
      }
  };

  parallel_for(n_, [&](std::size_t n) {
    taps(n, [&](std::size_t p, std::size_t src, std::size_t kofs) {
      for (std::size_t k = 0; k < c; ++k) y[p * c + k] += kv[kofs + k / per_group] * x[src * c + k];
    });
  });
  require_finite(out, "involution");

  if (grad_needed({&input, &kernels.values})) {
    out.set_requires_grad(true);
    active_tape().record("involution", out,
                         [=, xi = input.impl(), ki = kernels.values.impl(), oi = out.impl()] {
                           const double* dy = oi->grad.data();
                           auto gx = grad_target(xi);
                           auto gk = grad_target(ki);
                           const double* xs = xi->data.data();
                           const double* ks = ki->data.data();
                           parallel_for(n_, [&](std::size_t n) {
                             taps(n, [&](std::size_t p, std::size_t src, std::size_t kofs) {
                               for (std::size_t k = 0; k < c; ++k) {
                                 const double d = dy[p * c + k];
                                 if (!gx.empty()) gx[src * c + k] += ks[kofs + k / per_group] * d;
                                 if (!gk.empty()) gk[kofs + k / per_group] += xs[src * c + k] * d;
                               }
                             });
                           });
                         });
  }
  return out;
}

KernelField apply_weight_field(const KernelField& kernels, const Tensor& field) {
  const std::size_t ff = kernels.kernel_size * kernels.kernel_size;
  const auto& ks = kernels.values.shape();
  if (!field.defined() || field.rank() != 4 || field.dim(0) != ks[0] || field.dim(1) != ks[1] ||
      field.dim(2) != ks[2] || field.dim(3) != ff) {
    throw InvalidArgument("depth weight field is not aligned with the kernel field");
  }
  const std::size_t g_n = kernels.groups;
  const std::size_t positions = field.size() / ff;
  Tensor out(ks);
  const auto kv = kernels.values.data();
  const auto wv = field.data();
  auto ov = out.data();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t t = 0; t < ff; ++t)
      for (std::size_t g = 0; g < g_n; ++g) {
        const std::size_t idx = (p * ff + t) * g_n + g;
        ov[idx] = kv[idx] * wv[p * ff + t];
      }
  if (grad_needed({&kernels.values})) {
    out.set_requires_grad(true);
    active_tape().record("apply_weight_field", out,
                         [=, ki = kernels.values.impl(), wi = field.impl(), oi = out.impl()] {
                           auto gk = grad_target(ki);
                           if (gk.empty()) return;
                           for (std::size_t p = 0; p < positions; ++p)
                             for (std::size_t t = 0; t < ff; ++t)
                               for (std::size_t g = 0; g < g_n; ++g) {
                                 const std::size_t idx = (p * ff + t) * g_n + g;
                                 gk[idx] += oi->grad[idx] * wi->data[p * ff + t];
                               }
                         });
  }
  return KernelField{out, kernels.kernel_size, g_n};
}

Tensor modulated_projection(const Tensor& embedding, const Tensor& weight, const Tensor& bias,
                            const std::vector<double>& codes, std::size_t taps, std::size_t groups) {
  if (embedding.rank() != 4) throw InvalidArgument("modulated_projection: embedding must be rank 4");
  const std::size_t e_n = embedding.dim(3);
  if (weight.size() != e_n || bias.size() != 1 || codes.size() != taps * e_n) {
    throw InvalidArgument("modulated_projection: inconsistent weight/code sizes");
  }
  const std::size_t positions = embedding.size() / e_n;
  const std::size_t width = taps * groups;
  Tensor out({embedding.dim(0), embedding.dim(1), embedding.dim(2), width});
  const auto em = embedding.data();
  const auto wv = weight.data();
  const double b = bias[0];
  auto ov = out.data();
  std::vector<double> scaled(e_n);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t e = 0; e < e_n; ++e) scaled[e] = wv[e] * em[p * e_n + e];
    for (std::size_t t = 0; t < taps; ++t) {
      double acc = b;
      for (std::size_t e = 0; e < e_n; ++e) acc += scaled[e] * codes[t * e_n + e];
      for (std::size_t g = 0; g < groups; ++g) ov[p * width + t * groups + g] = acc;
    }
  }
  require_finite(out, "modulated_projection");
  if (grad_needed({&embedding, &weight, &bias})) {
    out.set_requires_grad(true);
    active_tape().record("modulated_projection", out,
                         [=, ei = embedding.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl()] {
                           auto ge = grad_target(ei);
                           auto gw = grad_target(wi);
                           auto gb = grad_target(bi);
                           std::vector<double> coeff(e_n);
                           for (std::size_t p = 0; p < positions; ++p) {
                             std::fill(coeff.begin(), coeff.end(), 0.0);
                             for (std::size_t t = 0; t < taps; ++t) {
                               double d = 0.0;
                               for (std::size_t g = 0; g < groups; ++g) d += oi->grad[p * width + t * groups + g];
                               if (!gb.empty()) gb[0] += d;
                               for (std::size_t e = 0; e < e_n; ++e) coeff[e] += d * codes[t * e_n + e];
                             }
                             for (std::size_t e = 0; e < e_n; ++e) {
                               if (!ge.empty()) ge[p * e_n + e] += coeff[e] * wi->data[e];
                               if (!gw.empty()) gw[e] += coeff[e] * ei->data[p * e_n + e];
                             }
                           }
                         });
  }
  return out;
}

KernelField generate_kernels(HyperNetwork& net, const Tensor& input, std::size_t kernel_size,
                             const GroupSpec& groups, Mode mode) {
  return net.generate(input, kernel_size, groups, mode);
}

Tensor involution_forward(const Tensor& input, const KernelField& kernels, const GroupSpec& groups) {
  if (groups.groups != kernels.groups || groups.channels != input.dim(3)) {
    throw InvalidArgument("involution: group spec does not match kernel field/input");
  }
  return involution(input, kernels);
}

Tensor hyper_involution_forward(const Tensor& input, HyperNetwork& net, std::size_t kernel_size,
                                const GroupSpec& groups, Mode mode) {
  return involution(input, net.generate(input, kernel_size, groups, mode));
}

Tensor depth_aware_hyper_involution_forward(const Tensor& input, const Tensor& depth, HyperNetwork& net,
                                            const WeightingSpec& weighting, std::size_t kernel_size,
                                            const GroupSpec& groups, Mode mode) {
  if (!depth.defined()) throw InvalidArgument("depth-aware hyper-involution: missing depth map");
  if (depth.rank() != 4 || depth.dim(0) != input.dim(0) || depth.dim(1) != input.dim(1) ||
      depth.dim(2) != input.dim(2) || depth.dim(3) != 1) {
    throw InvalidArgument("depth map " + shape_str(depth.shape()) + " is not aligned with input " +
                          shape_str(input.shape()));
  }
  const Tensor field = weight_field(depth, kernel_size, weighting);
  const KernelField kernels = net.generate(input, kernel_size, groups, mode);
  return involution(input, apply_weight_field(kernels, field));
}

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::Convolution: return "convolution";
    case OperatorKind::Involution: return "involution";
    case OperatorKind::HyperInvolution: return "hyper_involution";
    case OperatorKind::DepthAwareHyperInvolution: return "depth_aware_hyper_involution";
  }
  return "";
}

namespace {

struct Counts {
  std::size_t trainable = 0;
  std::size_t running = 0;  // batch-norm running mean + variance
};

Counts operator_counts(const OperatorConfig& cfg) {
  const std::size_t f2 = cfg.kernel_size * cfg.kernel_size;
  switch (cfg.kind) {
    case OperatorKind::Convolution:
      return {cfg.in_channels * f2 * cfg.filters, 0};
    case OperatorKind::Involution: {
      const std::size_t reduce = cfg.in_channels * cfg.filters + cfg.filters;
      const std::size_t bn = 2 * cfg.filters;
      const std::size_t span = (cfg.filters + 1) * f2 * cfg.groups;
      return {reduce + bn + span, 2 * cfg.filters};
    }
    case OperatorKind::HyperInvolution:
    case OperatorKind::DepthAwareHyperInvolution: {
      const auto& fl = HyperNetwork::kFilters;
      const std::size_t convs = (cfg.in_channels + 1) * fl[0] + (fl[0] + 1) * fl[1] + (fl[1] + 1) * fl[2] +
                                (fl[2] + 1) * 1;
      const std::size_t bn = 2 * (fl[0] + fl[1]);
      return {convs + bn, 2 * (fl[0] + fl[1])};
    }
  }
  return {};
}

}  // namespace

std::size_t count_params(const OperatorConfig& config) { return operator_counts(config).trainable; }

std::size_t count_stored_params(const OperatorConfig& config) {
  const auto c = operator_counts(config);
  return c.trainable + c.running;
}

}  // namespace dhi
