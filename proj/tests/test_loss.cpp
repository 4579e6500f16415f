#include <gtest/gtest.h>

#include <algorithm>

#include "dhi/error.hpp"
#include "dhi/loss.hpp"
#include "oracles.hpp"

using namespace dhi;

namespace {

AnchorSet one_anchor() { return AnchorSet{{{0.3, 0.3}}}; }

// 1x1 grid, one anchor, two classes, one object of class 0 at the centre.
struct SingleSlot {
  PredictionGrid pred;
  TargetAssignment targets;

  SingleSlot() {
    targets = assign_targets({GroundTruthBox{0, Box{0.5, 0.5, 0.16, 0.16}}}, 1, one_anchor(), 2);
    pred.grid = 1;
    pred.anchors = 1;
    pred.classes = 2;
    DecodedSlot s;
    s.x = 0.5;
    s.y = 0.5;
    s.w = 0.16;
    s.h = 0.16;
    s.confidence = 1.0;
    s.class_probs = {1.0, 0.0};
    pred.slots = {s};
  }
};

}  // namespace

TEST(Assignment, CentreCellAndBestAnchor) {
  AnchorSet anchors{{{0.1, 0.1}, {0.5, 0.2}, {0.3, 0.6}}};
  auto t = assign_targets({GroundTruthBox{2, Box{0.8, 0.3, 0.45, 0.25}}}, 4, anchors, 3);
  ASSERT_EQ(t.object_count(), 1u);
  const auto& s = t.slots[t.index(1, 3, 1)];
  EXPECT_TRUE(s.object);
  EXPECT_EQ(s.class_id, 2);
  EXPECT_NEAR(s.x, 0.2, 1e-12);
  EXPECT_NEAR(s.y, 0.2, 1e-12);
  EXPECT_EQ(t.dropped, 0u);
}

TEST(Assignment, CollisionFallsBackThenDrops) {
  auto t = assign_targets({GroundTruthBox{0, Box{0.5, 0.5, 0.2, 0.2}}, GroundTruthBox{1, Box{0.51, 0.5, 0.2, 0.2}},
                           GroundTruthBox{1, Box{0.52, 0.5, 0.2, 0.2}}},
                          1, AnchorSet{{{0.2, 0.2}, {0.9, 0.9}}}, 2);
  EXPECT_EQ(t.object_count(), 2u);
  EXPECT_EQ(t.dropped, 1u);
}

TEST(Assignment, RejectsBadInput) {
  EXPECT_THROW(assign_targets({GroundTruthBox{3, Box{0.5, 0.5, 0.1, 0.1}}}, 2, one_anchor(), 3), InvalidArgument);
  EXPECT_THROW(assign_targets({}, 0, one_anchor(), 3), InvalidArgument);
}

TEST(ClassificationLoss, HandCases) {
  SingleSlot c;
  EXPECT_EQ(classification_loss(c.pred, c.targets), 0.0);
  c.pred.slots[0].class_probs = {0.6, 0.4};
  EXPECT_NEAR(classification_loss(c.pred, c.targets), 0.32, 1e-12);
  auto empty = assign_targets({}, 1, one_anchor(), 2);
  EXPECT_EQ(classification_loss(c.pred, empty), 0.0);
}

TEST(LocalizationLoss, HandCases) {
  SingleSlot c;
  EXPECT_EQ(localization_loss(c.pred, c.targets, LossWeights{}), 0.0);
  c.pred.slots[0].x = 0.6;
  EXPECT_NEAR(localization_loss(c.pred, c.targets, LossWeights{}), 0.05, 1e-12);
  c.pred.slots[0].x = 0.5;
  c.pred.slots[0].w = 0.25;
  EXPECT_NEAR(localization_loss(c.pred, c.targets, LossWeights{}), 0.05, 1e-12);
  c.pred.slots[0].w = -0.01;
  EXPECT_THROW(localization_loss(c.pred, c.targets, LossWeights{}), NumericalError);
}

TEST(ConfidenceLoss, HandCases) {
  SingleSlot c;
  // identical boxes: IoU is 1 up to rounding in the overlap arithmetic
  EXPECT_NEAR(confidence_loss(c.pred, c.targets, LossWeights{}), 0.0, 1e-12);
  c.pred.slots[0].confidence = 0.0;
  EXPECT_NEAR(confidence_loss(c.pred, c.targets, LossWeights{}), 1.0, 1e-12);
  auto empty = assign_targets({}, 1, one_anchor(), 2);
  c.pred.slots[0].confidence = 0.4;
  EXPECT_NEAR(confidence_loss(c.pred, empty, LossWeights{}), 0.08, 1e-12);
}

TEST(TotalLoss, IsExactSumOfParts) {
  SingleSlot c;
  c.pred.slots[0].class_probs = {0.6, 0.4};
  c.pred.slots[0].x = 0.6;
  c.pred.slots[0].confidence = 0.7;
  const auto b = total_loss(c.pred, c.targets, LossWeights{});
  EXPECT_EQ(b.total, b.classification + b.localization + b.confidence);
  EXPECT_EQ(b.classification, classification_loss(c.pred, c.targets));
  EXPECT_EQ(b.localization, localization_loss(c.pred, c.targets, LossWeights{}));
  EXPECT_EQ(b.confidence, confidence_loss(c.pred, c.targets, LossWeights{}));
}

TEST(TotalLoss, RandomCasesDecomposeAndStayNonNegative) {
  AnchorSet anchors{{{0.2, 0.3}, {0.4, 0.2}}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor head = oracle::random(rng, {1, 3, 3, 2 * 8});
    std::vector<GroundTruthBox> truths;
    for (int i = 0; i < 3; ++i)
      truths.push_back({static_cast<int>(rng.below(3)),
                        Box{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)}});
    auto pred = decode_grid(head, 0, anchors, 3);
    auto targets = assign_targets(truths, 3, anchors, 3);
    const auto b = total_loss(pred, targets, LossWeights{});
    EXPECT_GE(b.classification, 0.0);
    EXPECT_GE(b.localization, 0.0);
    EXPECT_GE(b.confidence, 0.0);
    EXPECT_EQ(b.total, b.classification + b.localization + b.confidence);

    LossBreakdown fused;
    Tensor l = detection_loss(head, {truths}, anchors, 3, LossWeights{}, &fused);
    EXPECT_NEAR(l.item(), b.total, 1e-12);
    EXPECT_NEAR(fused.total, b.total, 1e-12);

    // permutation invariance
    std::reverse(truths.begin(), truths.end());
    EXPECT_EQ(detection_loss(head, {truths}, anchors, 3, LossWeights{}).item(), l.item());
  }
}

TEST(DetectionLoss, AveragesOverBatch) {
  Rng rng(3);
  AnchorSet anchors{{{0.2, 0.3}}};
  Tensor head = oracle::random(rng, {2, 2, 2, 7});
  std::vector<std::vector<GroundTruthBox>> truths = {{{0, Box{0.3, 0.3, 0.2, 0.2}}}, {{1, Box{0.7, 0.6, 0.3, 0.1}}}};
  const double a = total_loss(decode_grid(head, 0, anchors, 2), assign_targets(truths[0], 2, anchors, 2), LossWeights{}).total;
  const double b = total_loss(decode_grid(head, 1, anchors, 2), assign_targets(truths[1], 2, anchors, 2), LossWeights{}).total;
  EXPECT_NEAR(detection_loss(head, truths, anchors, 2, LossWeights{}).item(), 0.5 * (a + b), 1e-12);
  EXPECT_THROW(detection_loss(head, {truths[0]}, anchors, 2, LossWeights{}), InvalidArgument);
}

TEST(DetectionLoss, IouTargetIsHeldConstantByDefault) {
  // box gradient of the single object slot, as a function of the raw confidence
  auto box_grad = [](double raw_conf, bool through_iou) {
    Tensor head({1, 1, 1, 7});
    const double raw[7] = {0.3, -0.2, 0.4, -0.1, raw_conf, 0.5, -0.5};
    for (std::size_t i = 0; i < 7; ++i) head[i] = raw[i];
    head.set_requires_grad(true);
    LossWeights w;
    w.iou_target_gradient = through_iou;
    backward(detection_loss(head, {{{0, Box{0.5, 0.5, 0.3, 0.3}}}}, one_anchor(), 2, w));
    return std::vector<double>(head.grad().begin(), head.grad().begin() + 4);
  };
  EXPECT_EQ(box_grad(-1.0, false), box_grad(1.0, false));
  EXPECT_NE(box_grad(-1.0, true), box_grad(1.0, true));
  // the loss value itself does not depend on the flag
  Rng rng(4);
  Tensor head = oracle::random(rng, {1, 2, 2, 7});
  LossWeights w;
  w.iou_target_gradient = true;
  const std::vector<std::vector<GroundTruthBox>> truths{{{1, Box{0.3, 0.6, 0.2, 0.4}}}};
  EXPECT_EQ(detection_loss(head, truths, one_anchor(), 2, w).item(),
            detection_loss(head, truths, one_anchor(), 2, LossWeights{}).item());
}

TEST(LossWeights, MustBePositive) {
  EXPECT_THROW((LossWeights{0.0, 0.5}.validate()), InvalidArgument);
  EXPECT_THROW((LossWeights{5.0, -1.0}.validate()), InvalidArgument);
  EXPECT_EQ(LossWeights{}.coord, 5.0);
  EXPECT_EQ(LossWeights{}.noobj, 0.5);
}
