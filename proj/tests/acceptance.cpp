// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "dhi/depth_weighting.hpp"
#include "dhi/detector.hpp"
#include "dhi/gradcheck.hpp"
#include "dhi/loss.hpp"
#include "dhi/metrics.hpp"
#include "dhi/operators.hpp"
#include "dhi/profiler.hpp"
#include "dhi/rng.hpp"
#include "dhi/train.hpp"
#include "oracles.hpp"

using namespace dhi;
namespace fs = std::filesystem;

namespace {

constexpr double kOracleTol = 1e-12;
constexpr double kLossTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradSeeds = 5;
constexpr double kGradSeconds = 120.0;
constexpr double kCountSeconds = 1.0;
constexpr std::size_t kWeightSamples = 10000;
constexpr double kTargetMap = 0.50;
constexpr double kUntrainedMap = 0.10;
constexpr std::size_t kMaxEpochs = 200;
constexpr double kTrainSeconds = 1800.0;

// Desk-scale end-to-end setup.
constexpr std::size_t kTrainImages = 200;
constexpr std::size_t kTestImages = 50;
constexpr std::size_t kClasses = 3;
constexpr std::size_t kImageSize = 96;
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kTrainSeed = 3;
constexpr double kLearningRate = 1e-3;
constexpr std::size_t kEvalEvery = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s %2d  %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Runs a criterion body; an exception is a failure of that criterion only.
void criterion(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

void param_counts() {
  const auto t0 = Clock::now();
  std::vector<std::size_t> got;
  for (std::size_t f : {3, 5, 7}) got.push_back(count_params(OperatorConfig{OperatorKind::Convolution, 3, 8, f, 1}));
  const double s = seconds_since(t0);
  report(1, got == std::vector<std::size_t>{216, 600, 1176} && s < kCountSeconds,
         fmt("conv(3->8) params F=3/5/7: %zu/%zu/%zu, want 216/600/1176 (%.3f s)", got[0], got[1], got[2], s));
}

void kernel_size_independence() {
  std::vector<std::size_t> dahi, inv;
  const std::vector<std::size_t> fs_{1, 3, 5, 7, 9};
  for (auto f : fs_) {
    dahi.push_back(count_params(OperatorConfig{OperatorKind::DepthAwareHyperInvolution, 3, 8, f, 1}));
    inv.push_back(count_stored_params(OperatorConfig{OperatorKind::Involution, 3, 8, f, 1}));
  }
  const bool constant = std::all_of(dahi.begin(), dahi.end(), [&](auto v) { return v == dahi[0]; });
  bool increasing = true, affine = true;
  // count(F) = a + b F^2  <=>  equal increments per unit of F^2
  const auto slope = [&](std::size_t i) {
    return static_cast<double>(inv[i] - inv[0]) / static_cast<double>(fs_[i] * fs_[i] - fs_[0] * fs_[0]);
  };
  for (std::size_t i = 1; i < inv.size(); ++i) {
    increasing = increasing && inv[i] > inv[i - 1];
    affine = affine && slope(i) == slope(1);
  }
  const std::size_t trainable5 = count_params(OperatorConfig{OperatorKind::Involution, 3, 8, 5, 1});
  report(2, constant && increasing && affine,
         fmt("depth-aware hyper-involution %zu at F=1..9; involution stored %zu/%zu/%zu at F=3/5/7 "
             "(+%.0f per F^2); published depth-aware figure 273 vs %zu here (delta %+ld, not asserted); "
             "involution trainable at F=5 is %zu",
             dahi[0], inv[1], inv[2], inv[3], slope(1), dahi[0], static_cast<long>(dahi[0]) - 273L, trainable5));
}

void gradient_suite() {
  GradCheckOptions o;
  o.step = kGradStep;
  o.tolerance = kGradTol;
  o.seeds = kGradSeeds;
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite(o);
  const double s = seconds_since(t0);
  std::size_t failed = 0;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    if (r.rel_error >= worst) worst = r.rel_error, worst_op = r.op;
  }
  const std::size_t ops = gradient_suite_ops().size();
  report(3, failed == 0 && results.size() == ops * kGradSeeds && s < kGradSeconds,
         fmt("%zu ops x %zu seeds, %zu failed, worst rel error %.2e (%s), %.1f s", ops, kGradSeeds, failed, worst,
             worst_op.c_str(), s));
}

void oracle_equivalence() {
  double worst_inv = 0.0, worst_dahi = 0.0;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(100 + seed);
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9), c = 1 + rng.below(4);
    const std::size_t f = 1 + 2 * rng.below(4);
    const std::size_t g = c % 2 == 0 && seed % 2 == 0 ? 2 : 1;
    Tensor x = oracle::random(rng, {1, h, w, c});
    Tensor k = oracle::random(rng, {1, h, w, f * f * g});
    const Tensor got = involution(x, KernelField{k, f, g});
    const Tensor want = oracle::involution(x, k, f, g);
    for (std::size_t i = 0; i < got.size(); ++i) worst_inv = std::max(worst_inv, std::abs(got[i] - want[i]));

    HyperNetwork net = oracle::random_net(rng);
    Tensor x3 = oracle::random(rng, {1, h, w, 3});
    Tensor depth({1, h, w, 1});
    for (auto& v : depth.data()) v = rng.uniform(0.5, 4.0);
    const Tensor got2 = depth_aware_hyper_involution_forward(x3, depth, net, WeightingSpec{}, f, GroupSpec{1, 3},
                                                             Mode::Eval);
    const Tensor want2 = oracle::depth_aware_hyper_involution(net, x3, depth, f, WeightingSpec{}.gamma);
    for (std::size_t i = 0; i < got2.size(); ++i) worst_dahi = std::max(worst_dahi, std::abs(got2[i] - want2[i]));
    ++cases;
  }
  report(4, worst_inv <= kOracleTol && worst_dahi <= kOracleTol,
         fmt("%zu random cases up to 9x9: involution max |diff| %.1e, depth-aware %.1e (tol %.0e)", cases, worst_inv,
             worst_dahi, kOracleTol));
}

void depth_degeneracy() {
  std::size_t mismatched = 0, compared = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(200 + seed);
    HyperNetwork net = oracle::random_net(rng);
    const std::size_t f = 1 + 2 * (seed % 4);
    Tensor x = oracle::random(rng, {2, 7, 6, 3});
    Tensor depth({2, 7, 6, 1}, rng.uniform(0.5, 5.0));
    for (auto mode : {Mode::Eval, Mode::Train}) {
      const Tensor plain = hyper_involution_forward(x, net, f, GroupSpec{1, 3}, mode);
      const Tensor aware = depth_aware_hyper_involution_forward(x, depth, net, WeightingSpec{}, f, GroupSpec{1, 3}, mode);
      for (std::size_t i = 0; i < plain.size(); ++i, ++compared) mismatched += plain[i] != aware[i];
    }
  }
  report(5, mismatched == 0, fmt("constant depth: %zu of %zu outputs differ from plain hyper-involution", mismatched,
                                 compared));
}

void weighting_properties() {
  Rng rng(7);
  std::size_t unit_fail = 0, mono_fail = 0, support_fail = 0;
  const WeightingKind kinds[] = {WeightingKind::InverseMultiquadric, WeightingKind::Gaussian, WeightingKind::Triangular,
                                 WeightingKind::WendlandC2};
  for (auto kind : kinds) {
    WeightingSpec s{kind};
    for (double d : {0.0, 0.5, 3.0, 100.0}) unit_fail += depth_weight(s, d, d) != 1.0;
  }
  std::vector<double> diffs(kWeightSamples);
  // magnitudes where the two gamma kernels are still representable above zero
  for (auto& d : diffs) d = rng.uniform(0.0, 2.5);
  std::sort(diffs.begin(), diffs.end());
  for (auto kind : {WeightingKind::InverseMultiquadric, WeightingKind::Gaussian}) {
    WeightingSpec s{kind};
    double prev = depth_weight(s, 0.0, 0.0);
    double prev_d = 0.0;
    for (double d : diffs) {
      const double v = depth_weight(s, 1.0 + d, 1.0);
      if (d > prev_d && !(v < prev)) ++mono_fail;
      if (depth_weight(s, 1.0, 1.0 + d) != v) ++mono_fail;  // symmetric in sign
      prev = v;
      prev_d = d;
    }
  }
  WeightingSpec tri{WeightingKind::Triangular};
  for (std::size_t i = 0; i < kWeightSamples; ++i) {
    const double d = rng.uniform(0.0, 3.0);
    const double v = depth_weight(tri, 2.0 + d, 2.0);
    if ((d < 1.0) != (v > 0.0)) ++support_fail;
  }
  support_fail += depth_weight(tri, 1.0, 0.0) != 0.0;
  support_fail += !(depth_weight(tri, std::nextafter(1.0, 0.0), 0.0) > 0.0);
  report(6, unit_fail == 0 && mono_fail == 0 && support_fail == 0,
         fmt("%zu samples: W(0)!=1 %zu, monotonicity violations %zu, triangular support violations %zu",
             kWeightSamples, unit_fail, mono_fail, support_fail));
}

void loss_hand_cases() {
  const AnchorSet anchor{{{0.3, 0.3}}};
  const auto targets = assign_targets({GroundTruthBox{0, Box{0.5, 0.5, 0.16, 0.16}}}, 1, anchor, 2);
  const auto empty = assign_targets({}, 1, anchor, 2);
  PredictionGrid pred;
  pred.grid = 1;
  pred.anchors = 1;
  pred.classes = 2;
  DecodedSlot s;
  s.x = 0.5, s.y = 0.5, s.w = 0.16, s.h = 0.16, s.confidence = 1.0, s.class_probs = {1.0, 0.0};
  pred.slots = {s};

  auto p = pred;
  p.slots[0].class_probs = {0.6, 0.4};
  const double cls = classification_loss(p, targets);
  p = pred;
  p.slots[0].x = 0.6;
  const double loc_centre = localization_loss(p, targets, LossWeights{});
  p = pred;
  p.slots[0].w = 0.25;
  const double loc_size = localization_loss(p, targets, LossWeights{});
  p = pred;
  p.slots[0].confidence = 0.4;
  const double conf = confidence_loss(p, empty, LossWeights{});

  p = pred;
  p.slots[0].class_probs = {0.6, 0.4};
  p.slots[0].x = 0.6;
  p.slots[0].confidence = 0.7;
  const auto b = total_loss(p, targets, LossWeights{});
  const bool exact_sum = b.total == b.classification + b.localization + b.confidence;

  const bool ok = std::abs(cls - 0.32) <= kLossTol && std::abs(loc_centre - 0.05) <= kLossTol &&
                  std::abs(loc_size - 0.05) <= kLossTol && std::abs(conf - 0.08) <= kLossTol && exact_sum;
  report(7, ok,
         fmt("classification %.15g (0.32), localization %.15g / %.15g (0.05), confidence %.15g (0.08), "
             "total is exact sum: %s",
             cls, loc_centre, loc_size, conf, exact_sum ? "yes" : "no"));
}

void map_oracle() {
  std::size_t mismatched = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    std::vector<GroundTruth> gts;
    std::vector<ScoredDetection> dets;
    const std::size_t images = 1 + rng.below(3);
    const std::size_t n_gt = 1 + rng.below(5), n_det = rng.below(11);
    auto box = [&] {
      return Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
    };
    for (std::size_t i = 0; i < n_gt; ++i) gts.push_back(GroundTruth{rng.below(images), 0, box()});
    for (std::size_t i = 0; i < n_det; ++i) {
      Box b = rng.uniform() < 0.6 ? gts[rng.below(n_gt)].box : box();
      b.cx += rng.uniform(-0.05, 0.05);
      b.cy += rng.uniform(-0.05, 0.05);
      // coarse confidences so ties occur
      dets.push_back(ScoredDetection{rng.below(images), Detection{0, std::round(rng.uniform() * 4) / 4, b}});
    }
    const double got = average_precision(dets, gts).ap;
    const double want = oracle::voc_ap(dets, gts, 0.5);
    mismatched += got != want;
    worst = std::max(worst, std::abs(got - want));
  }
  report(8, mismatched == 0, fmt("20 micro-scenarios: %zu differ from the exhaustive reference (max |diff| %.1e)",
                                 mismatched, worst));
}

void end_to_end(const fs::path& scratch) {
  DatasetOptions d;
  d.count = kTrainImages + kTestImages;
  d.test_count = kTestImages;
  d.classes = kClasses;
  d.seed = kDataSeed;
  d.image_size = kImageSize;
  const auto manifest = generate_dataset(scratch / "desk", d);
  const auto train = load_split(manifest, "train", kImageSize);
  const auto test = load_split(manifest, "test", kImageSize);

  ModelConfig cfg;
  cfg.input_size = kImageSize;
  cfg.classes = kClasses;
  cfg.backbone_channels = {8, 8, 16, 16, 32, 32, 32, 64, 64, 64, 64, 64, 64};
  Detector model(cfg, default_anchors(cfg.anchors));
  model.init(kTrainSeed);
  const double untrained = evaluate_model(model, test, {}).report.map.value_or(0.0);

  TrainOptions o;
  o.epochs = kMaxEpochs;
  o.lr = kLearningRate;
  o.seed = kTrainSeed;
  double best = 0.0;
  std::size_t reached = 0;
  const auto t0 = Clock::now();
  const auto history = train_detector(model, train, o, {}, [&](const EpochStats& e) {
    if (e.epoch % kEvalEvery != 0 && e.epoch != kMaxEpochs) return false;
    const double m = evaluate_model(model, test, {}).report.map.value_or(0.0);
    std::printf("       epoch %3zu  loss %.4f  test mAP %.4f  (%.0f s)\n", e.epoch, e.loss.total, m, seconds_since(t0));
    std::fflush(stdout);
    best = std::max(best, m);
    if (m >= kTargetMap) reached = e.epoch;
    return m >= kTargetMap;
  });
  const double s = seconds_since(t0);
  report(9, reached > 0 && untrained < kUntrainedMap,
         fmt("%zu/%zu images at %zu px: untrained mAP %.4f (< %.2f); %s; best test mAP %.4f after %zu epochs, "
             "%.0f s (target %.0f s%s)",
             train.size(), test.size(), kImageSize, untrained, kUntrainedMap,
             reached ? fmt("mAP@0.5 >= %.2f at epoch %zu", kTargetMap, reached).c_str()
                     : fmt("mAP@0.5 never reached %.2f", kTargetMap).c_str(),
             best, history.size(), s, kTrainSeconds, s < kTrainSeconds ? "" : ", exceeded"));
}

void flop_accounting() {
  struct Case {
    std::size_t h, w, out_c, in_c, f;
    std::uint64_t want;
  };
  // 2 * H * W * Cout * Cin * F^2
  const Case cases[] = {{5, 5, 2, 1, 3, 900}, {16, 16, 8, 3, 3, 2ull * 16 * 16 * 8 * 3 * 9},
                        {7, 5, 12, 5, 5, 2ull * 7 * 5 * 12 * 5 * 25}};
  std::size_t bad = 0;
  for (const auto& c : cases) {
    bad += conv_flops(c.h, c.w, c.out_c, c.in_c, c.f) != c.want;
    Conv2dLayer conv(c.in_c, c.out_c, c.f, 1, Padding::Same, true);
    bad += profile_conv("c", conv, c.h, c.w).flops != c.want;
  }
  ModelConfig cfg;
  Detector model(cfg, default_anchors(cfg.anchors));
  const double g = profile_model(model).gflops();
  report(10, bad == 0,
         fmt("3 micro-configs, %zu mismatches; full model at %zu px: %.2f GFLOPs vs published %.2f (delta %+.2f, "
             "reported only)",
             bad, cfg.input_size, g, kReferenceGflops, g - kReferenceGflops));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void determinism(const fs::path& scratch) {
  DatasetOptions d;
  d.count = 24;
  d.test_count = 4;
  d.classes = kClasses;
  d.seed = 5;
  d.image_size = 64;
  const auto manifest = generate_dataset(scratch / "det", d);
  const auto train = load_split(manifest, "train", 64);
  std::vector<fs::path> files;
  for (int run = 0; run < 2; ++run) {
    ModelConfig cfg;
    cfg.input_size = 64;
    cfg.backbone_channels = {4, 4, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8};
    Detector model(cfg, default_anchors(cfg.anchors));
    TrainOptions o;
    o.epochs = 3;
    o.batch_size = 4;
    o.lr = 1e-3;
    o.seed = 17;
    train_detector(model, train, o);
    files.push_back(scratch / ("run" + std::to_string(run) + ".bin"));
    model.save(files.back());
  }
  const auto a = read_bytes(files[0]), b = read_bytes(files[1]);
  report(11, !a.empty() && a == b, fmt("two seeded training runs: weight files %zu and %zu bytes, %s", a.size(),
                                       b.size(), a == b ? "identical" : "different"));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path scratch = fs::temp_directory_path() / "dhi_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const bool skip_training = argc > 1 && std::string(argv[1]) == "--skip-training";

  criterion(1, param_counts);
  criterion(2, kernel_size_independence);
  criterion(3, gradient_suite);
  criterion(4, oracle_equivalence);
  criterion(5, depth_degeneracy);
  criterion(6, weighting_properties);
  criterion(7, loss_hand_cases);
  criterion(8, map_oracle);
  if (skip_training) {
    std::printf("SKIP  9  end-to-end training skipped on request\n");
  } else {
    criterion(9, [&] { end_to_end(scratch); });
  }
  criterion(10, flop_accounting);
  criterion(11, [&] { determinism(scratch); });

  fs::remove_all(scratch);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
