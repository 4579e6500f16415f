#include "dhi/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dhi/error.hpp"

namespace dhi {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double eleven_point_ap(std::span<const PrPoint> curve) {
  double total = 0.0;
  for (int t = 0; t <= 10; ++t) {
    const double r = t / 10.0;
    double best = 0.0;
    for (const auto& p : curve)
      if (p.recall >= r) best = std::max(best, p.precision);
    total += best;
  }
  return total / 11.0;
}

ApResult average_precision(std::span<const ScoredDetection> detections, std::span<const GroundTruth> truths,
                           double iou_threshold) {
  ApResult result;
  result.num_truths = truths.size();
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].det.confidence > detections[b].det.confidence;
  });

  std::vector<bool> taken(truths.size(), false);
  std::size_t tp = 0, fp = 0;
  for (std::size_t idx : order) {
    const auto& d = detections[idx];
    double best = -1.0;
    std::size_t best_gt = truths.size();
    for (std::size_t g = 0; g < truths.size(); ++g) {
      if (truths[g].image != d.image) continue;
      const double o = iou(d.det.box, truths[g].box);
      if (o > best) {
        best = o;
        best_gt = g;
      }
    }
    if (best_gt < truths.size() && best > iou_threshold && !taken[best_gt]) {
      taken[best_gt] = true;
      ++tp;
    } else {
      ++fp;
    }
    const double recall = truths.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(truths.size());
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    result.curve.push_back({recall, precision});
  }
  result.ap = truths.empty() ? 0.0 : eleven_point_ap(result.curve);
  return result;
}

EvalReport evaluate_detections(std::span<const ScoredDetection> detections, std::span<const GroundTruth> truths,
                               std::size_t num_classes, double iou_threshold) {
  EvalReport report;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<ScoredDetection> dets;
    std::vector<GroundTruth> gts;
    for (const auto& d : detections)
      if (d.det.class_id == static_cast<int>(c)) dets.push_back(d);
    for (const auto& g : truths)
      if (g.class_id == static_cast<int>(c)) gts.push_back(g);
    auto r = average_precision(dets, gts, iou_threshold);
    report.class_ap.push_back(gts.empty() ? std::nullopt : std::optional<double>(r.ap));
    report.class_results.push_back(std::move(r));
  }
  report.map = mean_ap(report.class_ap);
  return report;
}

std::optional<double> mean_ap(std::span<const std::optional<double>> class_ap) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ap : class_ap) {
    if (!ap) continue;
    total += *ap;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

double mean_ap(std::span<const double> class_ap) {
  if (class_ap.empty()) return 0.0;
  return std::accumulate(class_ap.begin(), class_ap.end(), 0.0) / static_cast<double>(class_ap.size());
}

void write_pr_curve_csv(const std::filesystem::path& path, const ApResult& result) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "recall,precision\n";
  char buf[64];
  for (const auto& p : result.curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.recall, p.precision);
    os << buf;
  }
}

std::vector<PrPoint> read_pr_curve_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "recall,precision") throw DataError("unexpected PR curve header in " + path.string());
  std::vector<PrPoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("malformed PR curve row: " + line);
    out.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return out;
}

void write_ap_table_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "class,ground_truths,ap\n";
  for (std::size_t c = 0; c < report.class_ap.size(); ++c) {
    os << c << ',' << report.class_results[c].num_truths << ',';
    if (report.class_ap[c]) os << *report.class_ap[c];
    os << '\n';
  }
  os << "mAP,,";
  if (report.map) os << *report.map;
  os << '\n';
}

std::string format_ap_table(const EvalReport& report) {
  std::ostringstream os;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-8s %14s %10s\n", "class", "ground truths", "AP@IoU");
  os << buf;
  for (std::size_t c = 0; c < report.class_ap.size(); ++c) {
    if (report.class_ap[c]) {
      std::snprintf(buf, sizeof buf, "%-8zu %14zu %10.4f\n", c, report.class_results[c].num_truths,
                    *report.class_ap[c]);
    } else {
      std::snprintf(buf, sizeof buf, "%-8zu %14zu %10s\n", c, std::size_t{0}, "n/a");
    }
    os << buf;
  }
  if (report.map) {
    std::snprintf(buf, sizeof buf, "%-8s %14s %10.4f\n", "mAP", "", *report.map);
  } else {
    std::snprintf(buf, sizeof buf, "%-8s %14s %10s\n", "mAP", "", "undefined");
  }
  os << buf;
  return os.str();
}

}  // namespace dhi
