#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dhi {

// Axis-aligned box, centre/size normalised to the image.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  double bottom() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

double iou(const Box& a, const Box& b);

struct Detection {
  int class_id = 0;
  double confidence = 0.0;
  Box box;
};

struct ScoredDetection {
  std::size_t image = 0;
  Detection det;
};

struct GroundTruth {
  std::size_t image = 0;
  int class_id = 0;
  Box box;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ApResult {
  double ap = 0.0;
  std::size_t num_truths = 0;
  std::vector<PrPoint> curve;  // one point per ranked detection
};

// VOC2007 protocol for one class: detections ranked by confidence (ties keep
// input order), each compared with the ground truth of highest
// IoU in its image; a match needs IoU > iou_threshold and a ground truth not
// already taken, otherwise it is a false positive. AP is the 11-point
// interpolated precision at recall {0, 0.1, ..., 1}.
ApResult average_precision(std::span<const ScoredDetection> detections, std::span<const GroundTruth> truths,
                           double iou_threshold = 0.5);

// 11-point interpolation of a precision/recall sequence.
double eleven_point_ap(std::span<const PrPoint> curve);

struct EvalReport {
  std::vector<std::optional<double>> class_ap;  // nullopt: class has no ground truth
  std::vector<ApResult> class_results;
  std::optional<double> map;                    // nullopt: no class has ground truth
};

EvalReport evaluate_detections(std::span<const ScoredDetection> detections, std::span<const GroundTruth> truths,
                               std::size_t num_classes, double iou_threshold = 0.5);

// Arithmetic mean over the classes that have a value.
std::optional<double> mean_ap(std::span<const std::optional<double>> class_ap);
double mean_ap(std::span<const double> class_ap);

// CSV with header "recall,precision".
void write_pr_curve_csv(const std::filesystem::path& path, const ApResult& result);
std::vector<PrPoint> read_pr_curve_csv(const std::filesystem::path& path);

void write_ap_table_csv(const std::filesystem::path& path, const EvalReport& report);
std::string format_ap_table(const EvalReport& report);

}  // namespace dhi
