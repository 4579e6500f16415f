#include "dhi/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <tuple>

#include "dhi/error.hpp"

namespace dhi {

void LossWeights::validate() const {
  if (!(coord > 0.0) || !(noobj > 0.0)) throw InvalidArgument("loss weights must be positive");
}

std::size_t TargetAssignment::object_count() const {
  return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.object; }));
}

namespace {

double shape_overlap(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

std::size_t cell_of(double c, std::size_t grid) {
  const double g = static_cast<double>(grid);
  return std::min(grid - 1, static_cast<std::size_t>(std::max(0.0, std::floor(c * g))));
}

// IoU and its gradient with respect to (cx, cy, w, h) of box a.
double iou_with_grad(const Box& a, const Box& b, std::array<double, 4>& d) {
  d = {0.0, 0.0, 0.0, 0.0};
  const double r = std::min(a.right(), b.right());
  const double l = std::max(a.left(), b.left());
  const double bt = std::min(a.bottom(), b.bottom());
  const double t = std::max(a.top(), b.top());
  const double iw = r - l;
  const double ih = bt - t;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  // d right/d(cx, w) = (1, 0.5), d left/d(cx, w) = (1, -0.5) when box a is the limiting side.
  const double dr = a.right() < b.right() ? 1.0 : 0.0;
  const double dl = a.left() > b.left() ? 1.0 : 0.0;
  const double db = a.bottom() < b.bottom() ? 1.0 : 0.0;
  const double dt = a.top() > b.top() ? 1.0 : 0.0;
  const double diw_dcx = dr - dl;
  const double diw_dw = 0.5 * (dr + dl);
  const double dih_dcy = db - dt;
  const double dih_dh = 0.5 * (db + dt);
  const double di[4] = {diw_dcx * ih, dih_dcy * iw, diw_dw * ih, dih_dh * iw};
  const double da[4] = {0.0, 0.0, a.h, a.w};
  for (int k = 0; k < 4; ++k) {
    const double du = da[k] - di[k];
    d[k] = (di[k] * uni - inter * du) / (uni * uni);
  }
  return inter / uni;
}

struct SlotParts {
  double classification = 0.0;
  double localization = 0.0;
  double confidence = 0.0;
};

// Loss parts of one slot from its decoded prediction; when grad is given the
// derivative with respect to the raw slot values is written into it.
SlotParts slot_loss(const DecodedSlot& p, const SlotTarget& t, const Box& pred_box, const Box& truth_box,
                    std::size_t grid, const LossWeights& w, double* grad) {
  SlotParts parts;
  const std::size_t k_n = p.class_probs.size();
  if (!t.object) {
    parts.confidence = w.noobj * p.confidence * p.confidence;
    if (grad) {
      std::fill(grad, grad + 5 + k_n, 0.0);
      grad[4] = w.noobj * 2.0 * p.confidence * p.confidence * (1.0 - p.confidence);
    }
    return parts;
  }

  for (std::size_t k = 0; k < k_n; ++k) {
    const double g = static_cast<int>(k) == t.class_id ? 1.0 : 0.0;
    parts.classification += (p.class_probs[k] - g) * (p.class_probs[k] - g);
  }
  const double sw = std::sqrt(p.w), sh = std::sqrt(p.h);
  const double gw = std::sqrt(t.w), gh = std::sqrt(t.h);
  parts.localization = w.coord * ((p.x - t.x) * (p.x - t.x) + (p.y - t.y) * (p.y - t.y) + (sw - gw) * (sw - gw) +
                                  (sh - gh) * (sh - gh));
  std::array<double, 4> d_iou{};
  const double target_c = iou_with_grad(pred_box, truth_box, d_iou);
  const double ce = p.confidence - target_c;
  parts.confidence = ce * ce;
  if (!w.iou_target_gradient) d_iou.fill(0.0);

  if (grad) {
    const double s = static_cast<double>(grid);
    const double dx = p.x * (1.0 - p.x);
    const double dy = p.y * (1.0 - p.y);
    grad[0] = w.coord * 2.0 * (p.x - t.x) * dx - 2.0 * ce * d_iou[0] * dx / s;
    grad[1] = w.coord * 2.0 * (p.y - t.y) * dy - 2.0 * ce * d_iou[1] * dy / s;
    grad[2] = w.coord * 2.0 * (sw - gw) * 0.5 * sw - 2.0 * ce * d_iou[2] * p.w;
    grad[3] = w.coord * 2.0 * (sh - gh) * 0.5 * sh - 2.0 * ce * d_iou[3] * p.h;
    grad[4] = 2.0 * ce * p.confidence * (1.0 - p.confidence);
    double dot = 0.0;
    std::vector<double> gp(k_n);
    for (std::size_t k = 0; k < k_n; ++k) {
      const double g = static_cast<int>(k) == t.class_id ? 1.0 : 0.0;
      gp[k] = 2.0 * (p.class_probs[k] - g);
      dot += gp[k] * p.class_probs[k];
    }
    for (std::size_t k = 0; k < k_n; ++k) grad[5 + k] = p.class_probs[k] * (gp[k] - dot);
  }
  return parts;
}

void check_compatible(const PredictionGrid& pred, const TargetAssignment& targets) {
  if (pred.grid != targets.grid || pred.anchors != targets.anchors || pred.classes != targets.classes ||
      pred.slots.size() != targets.slots.size()) {
    throw InvalidArgument("loss: prediction grid and target assignment differ in layout");
  }
}

}  // namespace

TargetAssignment assign_targets(const std::vector<GroundTruthBox>& truths, std::size_t grid,
                                const AnchorSet& anchors, std::size_t classes) {
  if (grid == 0) throw InvalidArgument("assign_targets: grid must be >= 1");
  anchors.validate();
  TargetAssignment out;
  out.grid = grid;
  out.anchors = anchors.size();
  out.classes = classes;
  out.slots.resize(grid * grid * anchors.size());

  std::vector<GroundTruthBox> sorted = truths;
  for (const auto& t : sorted) {
    if (t.class_id < 0 || static_cast<std::size_t>(t.class_id) >= classes) {
      throw InvalidArgument("assign_targets: class id " + std::to_string(t.class_id) + " out of range");
    }
    if (!(t.box.w > 0.0 && t.box.h > 0.0)) throw InvalidArgument("assign_targets: box sizes must be positive");
  }
  std::sort(sorted.begin(), sorted.end(), [](const GroundTruthBox& a, const GroundTruthBox& b) {
    return std::make_tuple(-a.box.area(), a.box.cx, a.box.cy, a.box.w, a.box.h, a.class_id) <
           std::make_tuple(-b.box.area(), b.box.cx, b.box.cy, b.box.w, b.box.h, b.class_id);
  });

  const double g = static_cast<double>(grid);
  for (const auto& t : sorted) {
    const std::size_t cx = cell_of(t.box.cx, grid);
    const std::size_t cy = cell_of(t.box.cy, grid);
    std::vector<std::size_t> order(anchors.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return shape_overlap(t.box.w, t.box.h, anchors.shapes[a].first, anchors.shapes[a].second) >
             shape_overlap(t.box.w, t.box.h, anchors.shapes[b].first, anchors.shapes[b].second);
    });
    bool placed = false;
    for (std::size_t a : order) {
      auto& slot = out.slots[out.index(cy, cx, a)];
      if (slot.object) continue;
      slot.object = true;
      slot.class_id = t.class_id;
      slot.x = t.box.cx * g - static_cast<double>(cx);
      slot.y = t.box.cy * g - static_cast<double>(cy);
      slot.w = t.box.w;
      slot.h = t.box.h;
      placed = true;
      break;
    }
    if (!placed) ++out.dropped;
  }
  return out;
}

Box PredictionGrid::box(std::size_t slot) const {
  const std::size_t cell = slot / anchors;
  const double g = static_cast<double>(grid);
  const auto& s = slots[slot];
  return Box{(static_cast<double>(cell % grid) + s.x) / g, (static_cast<double>(cell / grid) + s.y) / g, s.w, s.h};
}

Box target_box(const TargetAssignment& targets, std::size_t slot) {
  const std::size_t cell = slot / targets.anchors;
  const double g = static_cast<double>(targets.grid);
  const auto& s = targets.slots[slot];
  return Box{(static_cast<double>(cell % targets.grid) + s.x) / g, (static_cast<double>(cell / targets.grid) + s.y) / g,
             s.w, s.h};
}

PredictionGrid decode_grid(const Tensor& head, std::size_t n, const AnchorSet& anchors, std::size_t classes) {
  if (head.rank() != 4 || head.dim(1) != head.dim(2)) throw InvalidArgument("decode_grid: head must be (N, S, S, C)");
  const std::size_t stride = 5 + classes;
  if (head.dim(3) != anchors.size() * stride) throw InvalidArgument("decode_grid: head channels do not match");
  if (n >= head.dim(0)) throw InvalidArgument("decode_grid: image index out of range");
  PredictionGrid out;
  out.grid = head.dim(1);
  out.anchors = anchors.size();
  out.classes = classes;
  const auto raw = head.data();
  const std::size_t per_image = out.grid * out.grid * head.dim(3);
  for (std::size_t cell = 0; cell < out.grid * out.grid; ++cell)
    for (std::size_t a = 0; a < out.anchors; ++a) {
      out.slots.push_back(
          decode_slot(raw.subspan(n * per_image + cell * head.dim(3) + a * stride, stride), anchors.shapes[a], classes));
    }
  return out;
}

double classification_loss(const PredictionGrid& pred, const TargetAssignment& targets) {
  check_compatible(pred, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.slots.size(); ++i) {
    if (!targets.slots[i].object) continue;
    const auto& p = pred.slots[i].class_probs;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = static_cast<int>(k) == targets.slots[i].class_id ? 1.0 : 0.0;
      total += (p[k] - g) * (p[k] - g);
    }
  }
  return total;
}

double localization_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w) {
  check_compatible(pred, targets);
  w.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < pred.slots.size(); ++i) {
    const auto& t = targets.slots[i];
    if (!t.object) continue;
    const auto& p = pred.slots[i];
    if (p.w < 0.0 || p.h < 0.0) throw NumericalError("localization_loss: negative predicted box size");
    const double dw = std::sqrt(p.w) - std::sqrt(t.w);
    const double dh = std::sqrt(p.h) - std::sqrt(t.h);
    total += (p.x - t.x) * (p.x - t.x) + (p.y - t.y) * (p.y - t.y) + dw * dw + dh * dh;
  }
  return w.coord * total;
}

double confidence_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w) {
  check_compatible(pred, targets);
  w.validate();
  double obj = 0.0, noobj = 0.0;
  for (std::size_t i = 0; i < pred.slots.size(); ++i) {
    const double c = pred.slots[i].confidence;
    if (targets.slots[i].object) {
      const double e = c - iou(pred.box(i), target_box(targets, i));
      obj += e * e;
    } else {
      noobj += c * c;
    }
  }
  return obj + w.noobj * noobj;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  classification += o.classification;
  localization += o.localization;
  confidence += o.confidence;
  total += o.total;
  return *this;
}

LossBreakdown total_loss(const PredictionGrid& pred, const TargetAssignment& targets, const LossWeights& w) {
  LossBreakdown b;
  b.classification = classification_loss(pred, targets);
  b.localization = localization_loss(pred, targets, w);
  b.confidence = confidence_loss(pred, targets, w);
  b.total = b.classification + b.localization + b.confidence;
  return b;
}

Tensor detection_loss(const Tensor& head, const std::vector<std::vector<GroundTruthBox>>& truths,
                      const AnchorSet& anchors, std::size_t classes, const LossWeights& w,
                      LossBreakdown* breakdown) {
  w.validate();
  anchors.validate();
  if (head.rank() != 4 || head.dim(1) != head.dim(2) || head.dim(3) != anchors.size() * (5 + classes)) {
    throw InvalidArgument("detection_loss: head " + shape_str(head.shape()) + " does not match " +
                          std::to_string(anchors.size()) + " anchors and " + std::to_string(classes) + " classes");
  }
  const std::size_t n_img = head.dim(0);
  if (truths.size() != n_img) throw InvalidArgument("detection_loss: need one truth list per image");
  const std::size_t grid = head.dim(1);
  const std::size_t stride = 5 + classes;
  const std::size_t per_image = grid * grid * head.dim(3);
  const bool want_grad = grad_needed({&head});

  std::vector<double> draw(want_grad ? head.size() : 0, 0.0);
  const auto raw = head.data();
  double cls = 0.0, loc = 0.0, conf = 0.0;
  for (std::size_t n = 0; n < n_img; ++n) {
    const auto targets = assign_targets(truths[n], grid, anchors, classes);
    for (std::size_t cell = 0; cell < grid * grid; ++cell)
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const std::size_t base = n * per_image + cell * head.dim(3) + a * stride;
        const std::size_t slot = cell * anchors.size() + a;
        const auto p = decode_slot(raw.subspan(base, stride), anchors.shapes[a], classes);
        const double g = static_cast<double>(grid);
        const Box pb{(static_cast<double>(cell % grid) + p.x) / g, (static_cast<double>(cell / grid) + p.y) / g, p.w,
                     p.h};
        const auto parts = slot_loss(p, targets.slots[slot], pb, target_box(targets, slot), grid, w,
                                     want_grad ? draw.data() + base : nullptr);
        cls += parts.classification;
        loc += parts.localization;
        conf += parts.confidence;
      }
  }
  const double inv_n = 1.0 / static_cast<double>(n_img);
  LossBreakdown b;
  b.classification = cls * inv_n;
  b.localization = loc * inv_n;
  b.confidence = conf * inv_n;
  b.total = b.classification + b.localization + b.confidence;
  if (breakdown) *breakdown = b;

  Tensor out = Tensor::scalar(b.total);
  require_finite(out, "detection_loss");
  if (want_grad) {
    for (auto& v : draw) v *= inv_n;
    out.set_requires_grad(true);
    active_tape().record("detection_loss", out, [hi = head.impl(), oi = out.impl(), d = std::move(draw)] {
      auto gh = grad_target(hi);
      const double go = oi->grad[0];
      for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += go * d[i];
    });
  }
  return out;
}

}  // namespace dhi
