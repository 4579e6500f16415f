#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dhi/detector.hpp"
#include "dhi/error.hpp"
#include "dhi/loss.hpp"
#include "oracles.hpp"

using namespace dhi;

namespace {

ModelConfig tiny(std::size_t input = 64) {
  ModelConfig c;
  c.input_size = input;
  c.backbone_channels.assign(13, 4);
  c.anchors = 2;
  c.classes = 3;
  return c;
}

std::pair<Tensor, Tensor> inputs(Rng& rng, std::size_t n, std::size_t s) {
  Tensor rgb({n, s, s, 3}), depth({n, s, s, 1});
  for (auto& v : rgb.data()) v = rng.uniform();
  for (auto& v : depth.data()) v = rng.uniform(1.0, 4.0);
  return {rgb, depth};
}

// O(n^2) reference: a box survives when no surviving higher-ranked box of its
// class overlaps it above the threshold.
std::vector<Detection> reference_nms(std::vector<Detection> d, double thr) {
  std::stable_sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<bool> keep(d.size(), true);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (keep[j] && d[j].class_id == d[i].class_id && iou(d[i].box, d[j].box) > thr) keep[i] = false;
  std::vector<Detection> out;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (keep[i]) out.push_back(d[i]);
  return out;
}

}  // namespace

TEST(ModelConfig, GridUsesFloorDivision) {
  ModelConfig c;
  EXPECT_EQ(c.grid_size(), 13u);
  c.input_size = 415;
  EXPECT_EQ(c.grid_size(), 12u);
  EXPECT_EQ(c.head_channels(), 5u * 8u);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny();
  c.backbone_channels.pop_back();
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny();
  c.kernel_size = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny();
  c.groups = 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny(16);
  EXPECT_THROW(c.validate(), InvalidArgument);  // grid would be 0
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig c = tiny();
  c.weighting.kind = WeightingKind::Gaussian;
  c.weighting.gamma = 3.25;
  c.generator_mode = GeneratorMode::LiteralBroadcast;
  ModelConfig back;
  auto rest = apply_model_keys(back, model_key_values(c));
  EXPECT_TRUE(rest.empty());
  EXPECT_EQ(back.input_size, 64u);
  EXPECT_EQ(back.backbone_channels, c.backbone_channels);
  EXPECT_EQ(back.weighting.kind, WeightingKind::Gaussian);
  EXPECT_EQ(back.weighting.gamma, 3.25);
  EXPECT_EQ(back.generator_mode, GeneratorMode::LiteralBroadcast);

  auto left = apply_model_keys(back, {{"epochs", "3"}});
  EXPECT_EQ(left.count("epochs"), 1u);
  EXPECT_THROW(apply_model_keys(back, {{"kernel_size", "three"}}), InvalidArgument);
}

TEST(ModelConfig, KeyValueFile) {
  auto p = std::filesystem::temp_directory_path() / "dhi_test_cfg.txt";
  std::ofstream(p) << "# comment\ninput_size = 96\n\nweighting=triangular\n";
  auto kv = read_key_values(p);
  EXPECT_EQ(kv.at("input_size"), "96");
  EXPECT_EQ(kv.at("weighting"), "triangular");
  std::ofstream(p) << "no equals sign\n";
  EXPECT_THROW(read_key_values(p), InvalidArgument);
  std::filesystem::remove(p);
}

TEST(Detector, BackboneIsThirteenThreeByThreeConvs) {
  Detector d(ModelConfig{}, default_anchors(5));
  ASSERT_EQ(d.backbone.size(), 13u);
  for (const auto& c : d.backbone) {
    EXPECT_EQ(c.weight.dim(2), 3u);
    EXPECT_EQ(c.weight.dim(3), 3u);
    EXPECT_EQ(c.stride, 1u);
    EXPECT_EQ(c.padding, Padding::Same);
  }
}

TEST(Detector, OutputShape) {
  for (std::size_t s : {64u, 96u}) {
    Detector d(tiny(s), default_anchors(2));
    d.init(1);
    Rng rng(2);
    auto [rgb, depth] = inputs(rng, 2, s);
    Tensor out = d.forward(rgb, depth, Mode::Eval);
    EXPECT_EQ(out.shape(), (Shape{2, s / 32, s / 32, 2 * 8}));
  }
}

TEST(Detector, ZeroModelPredictsHalfConfidence) {
  Detector d(tiny(), default_anchors(2));
  d.zero();
  Rng rng(3);
  auto [rgb, depth] = inputs(rng, 1, 64);
  Tensor head = d.forward(rgb, depth, Mode::Eval);
  auto grid = decode_grid(head, 0, d.anchors(), 3);
  for (const auto& s : grid.slots) EXPECT_EQ(s.confidence, 0.5);
}

TEST(Detector, DecodedRangesAndInputChecks) {
  Detector d(tiny(), default_anchors(2));
  d.init(4);
  Rng rng(4);
  auto [rgb, depth] = inputs(rng, 1, 64);
  Tensor head = d.forward(rgb, depth, Mode::Eval);
  auto grid = decode_grid(head, 0, d.anchors(), 3);
  for (std::size_t i = 0; i < grid.slots.size(); ++i) {
    const auto& s = grid.slots[i];
    EXPECT_GT(s.x, 0.0);
    EXPECT_LT(s.x, 1.0);
    EXPECT_GT(s.w, 0.0);
    EXPECT_GT(s.confidence, 0.0);
    EXPECT_LT(s.confidence, 1.0);
    double p = 0.0;
    for (double c : s.class_probs) p += c;
    EXPECT_NEAR(p, 1.0, 1e-12);
  }
  EXPECT_THROW(d.forward(Tensor({1, 32, 32, 3}), Tensor({1, 32, 32, 1}), Mode::Eval), InvalidArgument);
  EXPECT_THROW(d.forward(rgb, Tensor({1, 64, 63, 1}), Mode::Eval), InvalidArgument);
}

TEST(Detector, DepthStreamIsLive) {
  Detector d(tiny(), default_anchors(2));
  d.init(5);
  Rng rng(5);
  auto [rgb, depth] = inputs(rng, 1, 64);
  Tensor a = d.forward(rgb, depth, Mode::Eval).clone();
  d.depth_hyper.zero();
  Tensor b = d.forward(rgb, depth, Mode::Eval);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Detector, LossGradientReachesDepthHyperNetwork) {
  Detector d(tiny(), default_anchors(2));
  d.init(6);
  Rng rng(6);
  auto [rgb, depth] = inputs(rng, 1, 64);
  Tensor head = d.forward(rgb, depth, Mode::Train);
  backward(detection_loss(head, {{GroundTruthBox{1, Box{0.3, 0.6, 0.2, 0.3}}}}, d.anchors(), 3, LossWeights{}));
  double g = 0.0;
  for (double v : d.depth_hyper.layer1.weight.grad()) g += v * v;
  EXPECT_GT(g, 0.0);
}

TEST(Detector, SaveLoadRoundTrip) {
  Detector a(tiny(), default_anchors(2));
  a.init(7);
  a.set_anchors(AnchorSet{{{0.11, 0.22}, {0.33, 0.44}}});
  auto p = std::filesystem::temp_directory_path() / "dhi_test_weights.bin";
  a.save(p);
  Detector b(tiny(), default_anchors(2));
  b.load(p);
  EXPECT_EQ(b.anchors().shapes, a.anchors().shapes);
  Rng rng(7);
  auto [rgb, depth] = inputs(rng, 1, 64);
  Tensor ya = a.forward(rgb, depth, Mode::Eval), yb = b.forward(rgb, depth, Mode::Eval);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
  ModelConfig other = tiny();
  other.backbone_channels[3] = 5;
  Detector wrong(other, default_anchors(2));
  EXPECT_THROW(wrong.load(p), DataError);
  std::filesystem::remove(p);
}

TEST(Detector, SameSeedSameParameters) {
  Detector a(tiny(), default_anchors(2)), b(tiny(), default_anchors(2));
  a.init(9);
  b.init(9);
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i)
    for (std::size_t k = 0; k < ea[i].tensor.size(); ++k) ASSERT_EQ(ea[i].tensor[k], eb[i].tensor[k]);
}

TEST(Anchors, KMeansIdenticalBoxes) {
  std::vector<std::pair<double, double>> boxes(20, {0.2, 0.4});
  auto a = kmeans_anchors(boxes, 1, 0);
  EXPECT_NEAR(a.shapes[0].first, 0.2, 1e-12);
  EXPECT_NEAR(a.shapes[0].second, 0.4, 1e-12);
}

TEST(Anchors, KMeansSeparatedBoxesAreCentroids) {
  std::vector<std::pair<double, double>> boxes = {{0.05, 0.05}, {0.3, 0.1}, {0.6, 0.7}};
  auto a = kmeans_anchors(boxes, 3, 1);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.shapes[i].first, boxes[i].first, 1e-12);
    EXPECT_NEAR(a.shapes[i].second, boxes[i].second, 1e-12);
  }
}

TEST(Anchors, KMeansTwoClusters) {
  std::vector<std::pair<double, double>> boxes(50, {0.1, 0.1});
  boxes.insert(boxes.end(), 50, {0.5, 0.5});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto a = kmeans_anchors(boxes, 2, seed);
    EXPECT_NEAR(a.shapes[0].first, 0.1, 1e-12);
    EXPECT_NEAR(a.shapes[1].second, 0.5, 1e-12);
  }
  EXPECT_THROW(kmeans_anchors(std::vector<std::pair<double, double>>(1, {0.1, 0.1}), 2, 0), InvalidArgument);
}

TEST(Nms, HandCases) {
  std::vector<Detection> one = {{0, 0.7, Box{0.5, 0.5, 0.2, 0.2}}};
  EXPECT_EQ(nms(one, 0.5).size(), 1u);
  std::vector<Detection> two = {{0, 0.8, Box{0.5, 0.5, 0.2, 0.2}}, {0, 0.9, Box{0.5, 0.5, 0.2, 0.2}}};
  auto kept = nms(two, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.9);
  two[1].class_id = 1;
  EXPECT_EQ(nms(two, 0.5).size(), 2u);
  EXPECT_THROW(nms(two, 1.0), InvalidArgument);
}

TEST(Nms, MatchesBruteForceAndIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    std::vector<Detection> d;
    for (int i = 0; i < 5; ++i)
      d.push_back({static_cast<int>(rng.below(2)), rng.uniform(),
                   Box{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)}});
    auto got = nms(d, 0.3);
    auto want = reference_nms(d, 0.3);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].confidence, want[i].confidence);
      EXPECT_EQ(got[i].box.cx, want[i].box.cx);
    }
    auto again = nms(got, 0.3);
    EXPECT_EQ(again.size(), got.size());
  }
}
