#include "dhi/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dhi/detector.hpp"
#include "dhi/error.hpp"
#include "dhi/fusion.hpp"
#include "dhi/loss.hpp"
#include "dhi/operators.hpp"
#include "dhi/rng.hpp"

namespace dhi {

GradCheckResult check_gradient(const std::string& op, std::uint64_t seed, const std::vector<Tensor>& inputs,
                               const ScalarFn& fn, const GradCheckOptions& options) {
  GradCheckResult r;
  r.op = op;
  r.seed = seed;

  std::vector<bool> previous;
  for (auto t : inputs) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  active_tape().clear();
  const Tensor loss = fn(inputs);
  if (loss.size() != 1) throw InvalidArgument("gradcheck: function must return a scalar");
  backward(loss);

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  {
    NoGradGuard guard;
    for (auto t : inputs) {
      auto data = t.data();
      const auto grad = t.grad();
      auto central = [&](std::size_t i, double h) {
        const double orig = data[i];
        data[i] = orig + h;
        const double up = fn(inputs).item();
        data[i] = orig - h;
        const double down = fn(inputs).item();
        data[i] = orig;
        return (up - down) / (2.0 * h);
      };
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double analytic = grad.empty() ? 0.0 : grad[i];
        double numeric = central(i, options.step);
        const auto off = [&](double n) {
          return std::abs(analytic - n) > options.tolerance * std::max(std::abs(analytic), std::abs(n)) + 1e-10;
        };
        // Inside a deep piecewise-smooth network a step can straddle kinks
        // (ReLU, max-pool). Such a coordinate is accepted only if the
        // difference quotient converges to the analytic value as the step shrinks.
        if (off(numeric) && options.refinements > 0) {
          double h = options.step, best = numeric;
          for (std::size_t k = 0; k < options.refinements; ++k) {
            h *= 0.1;
            const double n = central(i, h);
            if (std::abs(analytic - n) >= std::abs(analytic - best)) break;
            best = n;
          }
          if (!off(best)) {
            numeric = best;
            ++r.refined;
          }
        }
        diff2 += (analytic - numeric) * (analytic - numeric);
        a2 += analytic * analytic;
        n2 += numeric * numeric;
        ++r.checked;
      }
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    t.zero_grad();
    t.set_requires_grad(previous[k]);
  }
  r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  r.passed = std::isfinite(r.rel_error) && r.rel_error <= options.tolerance && r.checked > 0 &&
             r.refined * 10 <= r.checked;
  return r;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

Tensor random_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an arbitrary output with fixed random weights.
Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

struct Case {
  std::string name;
  std::function<GradCheckResult(std::uint64_t, const GradCheckOptions&)> run;
};

GradCheckResult unary_case(const std::string& name, std::uint64_t seed, const GradCheckOptions& o,
                           const std::function<Tensor(const Tensor&)>& op) {
  Rng rng(mix_seed(seed, 11));
  Tensor x = random_tensor(rng, {2, 3, 4, 2});
  Tensor r = random_tensor(rng, op(x).shape());
  return check_gradient(name, seed, {x}, [&](const auto& in) { return project(op(in[0]), r); }, o);
}

std::vector<Case> make_cases(bool inject_fault) {
  std::vector<Case> cases;
  cases.push_back({"conv2d", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 1));
                     const std::size_t stride = 1 + seed % 2;
                     const Padding pad = seed % 3 == 2 ? Padding::Valid : Padding::Same;
                     Tensor x = random_tensor(rng, {2, 5, 6, 2});
                     Tensor w = random_tensor(rng, {3, 2, 3, 3}, 0.5);
                     Tensor b = random_tensor(rng, {3});
                     Tensor r = random_tensor(rng, conv2d(x, w, b, stride, pad).shape());
                     return check_gradient("conv2d", seed, {x, w, b}, [&](const auto& in) {
                       return project(conv2d(in[0], in[1], in[2], stride, pad), r);
                     }, o);
                   }});
  cases.push_back({"transposed_conv2d", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 2));
                     const std::size_t stride = 1 + seed % 2;
                     const Padding pad = seed % 2 == 0 ? Padding::Same : Padding::Valid;
                     Tensor x = random_tensor(rng, {1, 3, 4, 2});
                     Tensor w = random_tensor(rng, {2, 3, 3, 3}, 0.5);
                     Tensor b = random_tensor(rng, {3});
                     Tensor r = random_tensor(rng, transposed_conv2d(x, w, b, stride, pad).shape());
                     return check_gradient("transposed_conv2d", seed, {x, w, b}, [&](const auto& in) {
                       return project(transposed_conv2d(in[0], in[1], in[2], stride, pad), r);
                     }, o);
                   }});
  cases.push_back({"maxpool2d", [](std::uint64_t seed, const GradCheckOptions& o) {
                     return unary_case("maxpool2d", seed, o, [](const Tensor& x) { return maxpool2d(x); });
                   }});
  cases.push_back({"upsample_nearest", [](std::uint64_t seed, const GradCheckOptions& o) {
                     return unary_case("upsample_nearest", seed, o, [](const Tensor& x) { return upsample_nearest(x, 2); });
                   }});
  cases.push_back({"batchnorm", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 3));
                     Tensor x = random_tensor(rng, {2, 3, 3, 3}, 2.0);
                     Tensor scale = random_tensor(rng, {3});
                     Tensor shift = random_tensor(rng, {3});
                     Tensor r = random_tensor(rng, x.shape());
                     BatchNormState state{Tensor::zeros({3}), Tensor::ones({3})};
                     const auto mode = seed % 2 == 0 ? BatchNormMode::Train : BatchNormMode::Eval;
                     return check_gradient(std::string("batchnorm"), seed, {x, scale, shift}, [&](const auto& in) {
                       return project(batchnorm(in[0], in[1], in[2], state, mode), r);
                     }, o);
                   }});
  cases.push_back({"relu", [](std::uint64_t seed, const GradCheckOptions& o) {
                     return unary_case("relu", seed, o, [](const Tensor& x) { return relu(x); });
                   }});
  cases.push_back({"leaky_relu", [](std::uint64_t seed, const GradCheckOptions& o) {
                     return unary_case("leaky_relu", seed, o, [](const Tensor& x) { return leaky_relu(x, 0.1); });
                   }});
  cases.push_back({"sigmoid", [](std::uint64_t seed, const GradCheckOptions& o) {
                     return unary_case("sigmoid", seed, o, [](const Tensor& x) { return sigmoid(x); });
                   }});
  cases.push_back({"elementwise", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 4));
                     Tensor a = random_tensor(rng, {1, 3, 3, 2});
                     Tensor b = random_tensor(rng, {1, 3, 3, 2});
                     Tensor r = random_tensor(rng, {1, 3, 3, 6});
                     return check_gradient("elementwise", seed, {a, b}, [&](const auto& in) {
                       return project(tile_channels(add(mul(in[0], in[1]), scale(in[0], 0.7)), 3), r);
                     }, o);
                   }});
  cases.push_back({"involution", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 5));
                     const std::size_t f = seed % 2 == 0 ? 3 : 5, g = 1 + seed % 2;
                     Tensor x = random_tensor(rng, {1, 5, 5, 4});
                     Tensor k = random_tensor(rng, {1, 5, 5, f * f * g});
                     Tensor r = random_tensor(rng, x.shape());
                     return check_gradient("involution", seed, {x, k}, [&](const auto& in) {
                       return project(involution(in[0], KernelField{in[1], f, g}), r);
                     }, o);
                   }});
  cases.push_back({"hyper_involution", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 6));
                     HyperNetwork net(3, seed % 2 == 0 ? GeneratorMode::CoordinateModulated
                                                       : GeneratorMode::LiteralBroadcast);
                     net.init(rng);
                     Tensor x = random_tensor(rng, {2, 4, 4, 3});
                     Tensor r = random_tensor(rng, x.shape());
                     const GroupSpec groups{seed % 3 == 0 ? 3u : 1u, 3};
                     std::vector<Tensor> inputs{x, net.layer1.weight, net.layer1.bias, net.layer2.weight,
                                                net.layer3.weight, net.n2.weight, net.n2.bias, net.bn1.scale,
                                                net.bn2.shift};
                     return check_gradient("hyper_involution", seed, inputs, [&](const auto& in) {
                       return project(hyper_involution_forward(in[0], net, 3, groups, Mode::Train), r);
                     }, o);
                   }});
  cases.push_back({"depth_aware_hyper_involution", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 7));
                     HyperNetwork net(3);
                     net.init(rng);
                     Tensor x = random_tensor(rng, {1, 5, 5, 3});
                     Tensor depth = random_uniform(rng, {1, 5, 5, 1}, 1.0, 1.3);
                     Tensor r = random_tensor(rng, x.shape());
                     WeightingSpec ws;
                     ws.kind = static_cast<WeightingKind>(seed % 4);
                     std::vector<Tensor> inputs{x, net.layer1.weight, net.layer3.bias, net.n2.weight, net.bn2.scale};
                     return check_gradient("depth_aware_hyper_involution", seed, inputs, [&](const auto& in) {
                       return project(depth_aware_hyper_involution_forward(in[0], depth, net, ws, 3, GroupSpec{1, 3},
                                                                           Mode::Train),
                                      r);
                     }, o);
                   }});
  cases.push_back({"fusion", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 8));
                     FusionStage fusion{FusionConfig{}};
                     fusion.init(rng);
                     Tensor a = random_tensor(rng, {1, 4, 4, 3});
                     Tensor b = random_tensor(rng, {1, 4, 4, 3});
                     Tensor r = random_tensor(rng, a.shape());
                     std::vector<Tensor> inputs{a, b, fusion.residual.weight, fusion.encoder.weight,
                                                fusion.decoder.weight, fusion.decoder.bias};
                     return check_gradient("fusion", seed, inputs,
                                           [&](const auto& in) { return project(fusion.fuse(in[0], in[1]), r); }, o);
                   }});
  cases.push_back({"detection_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                     Rng rng(mix_seed(seed, 9));
                     const std::size_t classes = 3, grid = 3;
                     AnchorSet anchors = default_anchors(2);
                     Tensor head = random_tensor(rng, {2, grid, grid, anchors.size() * (5 + classes)}, 0.7);
                     std::vector<std::vector<GroundTruthBox>> truths(2);
                     for (auto& t : truths) {
                       const std::size_t n = 1 + rng.below(3);
                       for (std::size_t i = 0; i < n; ++i) {
                         GroundTruthBox b;
                         b.class_id = static_cast<int>(rng.below(classes));
                         b.box = Box{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.1, 0.5),
                                     rng.uniform(0.1, 0.5)};
                         t.push_back(b);
                       }
                     }
                     LossWeights exact;
                     exact.iou_target_gradient = true;  // finite differences see the IoU target move
                     return check_gradient("detection_loss", seed, {head}, [&](const auto& in) {
                       return detection_loss(in[0], truths, anchors, classes, exact);
                     }, o);
                   }});
  cases.push_back({"detector", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ModelConfig cfg;
                     cfg.input_size = 32;
                     cfg.backbone_channels.assign(13, 4);
                     cfg.anchors = 2;
                     cfg.classes = 2;
                     Detector model(cfg, default_anchors(2));
                     model.init(seed);
                     Rng rng(mix_seed(seed, 10));
                     Tensor rgb = random_uniform(rng, {1, 32, 32, 3}, 0.0, 1.0);
                     Tensor depth = random_uniform(rng, {1, 32, 32, 1}, 1.0, 4.0);
                     std::vector<std::vector<GroundTruthBox>> truths{{GroundTruthBox{1, Box{0.4, 0.6, 0.3, 0.5}}}};
                     std::vector<Tensor> inputs{model.depth_hyper.layer1.weight, model.depth_hyper.n2.weight,
                                                model.depth_hyper.n2.bias};
                     LossWeights exact;
                     exact.iou_target_gradient = true;
                     return check_gradient("detector", seed, inputs, [&](const auto&) {
                       return detection_loss(model.forward(rgb, depth, Mode::Eval), truths, model.anchors(), 2,
                                             exact);
                     }, o);
                   }});
  if (inject_fault) {
    cases.push_back({"faulty_identity", [](std::uint64_t seed, const GradCheckOptions& o) {
                       return unary_case("faulty_identity", seed, o,
                                         [](const Tensor& x) { return faulty_identity(x, 1.5); });
                     }});
  }
  return cases;
}

}  // namespace

std::vector<std::string> gradient_suite_ops(bool inject_fault) {
  std::vector<std::string> names;
  for (const auto& c : make_cases(inject_fault)) names.push_back(c.name);
  return names;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options) {
  if (options.seeds == 0) throw InvalidArgument("gradcheck: need at least one seed");
  std::vector<GradCheckResult> results;
  for (const auto& c : make_cases(options.inject_fault))
    for (std::size_t s = 0; s < options.seeds; ++s) results.push_back(c.run(mix_seed(options.base_seed, s), options));
  return results;
}

}  // namespace dhi
