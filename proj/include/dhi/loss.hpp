#pragma once

#include <cstddef>
#include <vector>

#include "dhi/detector.hpp"
#include "dhi/metrics.hpp"
#include "dhi/tensor.hpp"

namespace dhi {

struct LossWeights {
  double coord = 5.0;
  double noobj = 0.5;
  // The object-slot confidence target is the IoU of the predicted box. By
  // default it is held constant during backprop; set this to differentiate
  // through it as well.
  bool iou_target_gradient = false;

  void validate() const;
};

struct GroundTruthBox {
  int class_id = 0;
  Box box;  // normalised to the image
};

// Target of one (cell, anchor) slot. x, y are offsets inside the cell, w, h
// are normalised to the image.
struct SlotTarget {
  bool object = false;
  int class_id = 0;
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct TargetAssignment {
  std::size_t grid = 0;
  std::size_t anchors = 0;
  std::size_t classes = 0;
  std::vector<SlotTarget> slots;  // (cy, cx, anchor) row-major
  std::size_t dropped = 0;        // truths left without a free slot

  std::size_t index(std::size_t cy, std::size_t cx, std::size_t a) const { return (cy * grid + cx) * anchors + a; }
  std::size_t object_count() const;
};

// Each truth goes to the cell holding its centre and, inside it, to the
// anchor of highest shape IoU. Truths are visited in a canonical order (area
// descending, then coordinates) so the result does not depend on input order;
// when the best anchor is taken the next best free one is used.
TargetAssignment assign_targets(const std::vector<GroundTruthBox>& truths, std::size_t grid,
                                const AnchorSet& anchors, std::size_t classes);

// Decoded predictions of one image, same slot order as TargetAssignment.
struct PredictionGrid {
  std::size_t grid = 0;
  std::size_t anchors = 0;
  std::size_t classes = 0;
  std::vector<DecodedSlot> slots;

  std::size_t index(std::size_t cy, std::size_t cx, std::size_t a) const { return (cy * grid + cx) * anchors + a; }
  // Predicted box of a slot in image coordinates.
  Box box(std::size_t slot) const;
};

PredictionGrid decode_grid(const Tensor& head, std::size_t n, const AnchorSet& anchors, std::size_t classes);

// Box of a target slot in image coordinates.
Box target_box(const TargetAssignment& targets, std::size_t slot);

double classification_loss(const PredictionGrid& pred, const TargetAssignment& targets);
double localization_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w);
// Object slots aim at C = IoU(predicted box, truth); every other slot at 0.
double confidence_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w);

struct LossBreakdown {
  double classification = 0.0;
  double localization = 0.0;
  double confidence = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
};

LossBreakdown total_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w);

// Differentiable loss on the raw head (N, S, S, A * (5 + K)), averaged over
// the batch. truths[n] lists the boxes of image n. The optional breakdown
// receives the batch-averaged parts.
Tensor detection_loss(const Tensor& head, const std::vector<std::vector<GroundTruthBox>>& truths,
                      const AnchorSet& anchors, std::size_t classes, const LossWeights& w,
                      LossBreakdown* breakdown = nullptr);

}  // namespace dhi
