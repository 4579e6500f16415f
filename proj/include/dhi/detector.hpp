#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dhi/depth_weighting.hpp"
#include "dhi/fusion.hpp"
#include "dhi/metrics.hpp"
#include "dhi/operators.hpp"

namespace dhi {

struct ModelConfig {
  std::size_t input_size = 416;
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
  WeightingSpec weighting;
  GeneratorMode generator_mode = GeneratorMode::CoordinateModulated;
  // 13 backbone convolutions (3x3, stride 1, same padding), each followed by
  // batch norm and leaky ReLU; a 2x2/2 max-pool follows the listed layers
  // (1-based). Together with the per-stream pool the grid is input / 32.
  std::vector<std::size_t> backbone_channels = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
  std::vector<std::size_t> pool_after = {2, 4, 7, 10};
  std::size_t anchors = 5;
  std::size_t classes = 3;
  std::size_t fusion_channels = 3;
  double leaky_slope = 0.1;
  // Multiplier applied to metric depth before the depth stream; the depth
  // weighting always sees raw depth.
  double depth_input_scale = 0.1;

  void validate() const;
  // Spatial extent after each 2x2/2 pool (floor division).
  std::size_t grid_size() const;
  std::size_t head_channels() const { return anchors * (5 + classes); }
};

// Flat key=value text. Unknown keys are an error; '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);
// Applies the model keys it recognises and returns the rest.
std::map<std::string, std::string> apply_model_keys(ModelConfig& cfg, std::map<std::string, std::string> kv);
std::map<std::string, std::string> model_key_values(const ModelConfig& cfg);

// Prior box shapes (w, h), normalised.
struct AnchorSet {
  std::vector<std::pair<double, double>> shapes;

  std::size_t size() const { return shapes.size(); }
  void validate() const;
};

// YOLOv2-style default priors rescaled to a unit image, used until k-means
// anchors are fitted.
AnchorSet default_anchors(std::size_t count);

// k-means over (w, h) with distance 1 - IoU of origin-centred boxes.
// Seeded k-means++ initialisation, at most 100 iterations; centroids are
// returned sorted by area.
AnchorSet kmeans_anchors(std::span<const std::pair<double, double>> boxes, std::size_t count, std::uint64_t seed);

// Greedy per-class suppression of boxes with IoU > iou_threshold against a
// higher-ranked kept box. Ranking is confidence descending, then input index.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold);

// Decoded view of one head slot.
struct DecodedSlot {
  double x = 0.0;  // offset within the cell, (0, 1)
  double y = 0.0;
  double w = 0.0;  // normalised to the image
  double h = 0.0;
  double confidence = 0.0;
  std::vector<double> class_probs;
};

// Sigmoid on centre offsets and objectness, anchor * exp on size, softmax
// over classes. head is (N, S, S, A * (5 + K)).
DecodedSlot decode_slot(std::span<const double> raw, const std::pair<double, double>& anchor, std::size_t classes);

// All detections of image n with score (objectness * class probability)
// at least min_confidence, before NMS.
std::vector<Detection> decode_detections(const Tensor& head, std::size_t n, const AnchorSet& anchors,
                                         std::size_t classes, double min_confidence);

// Two-stream single-stage detector:
//   RGB   -> depth-aware hyper-involution -> 2x2 pool
//   depth -> hyper-involution              -> 2x2 pool
//   fusion -> 13-conv backbone -> 1x1 head with A * (5 + K) outputs per cell.
class Detector {
 public:
  Detector(ModelConfig config, AnchorSet anchors);

  // rgb (N, H, W, 3) in [0, 1]; depth (N, H, W, 1) in metres; H = W = input_size.
  Tensor forward(const Tensor& rgb, const Tensor& depth, Mode mode);

  // Intermediate stream outputs of the last forward call are not kept; this
  // runs the two streams only (used by tests and the profiler).
  std::pair<Tensor, Tensor> stream_features(const Tensor& rgb, const Tensor& depth, Mode mode);

  void init(std::uint64_t seed);
  void zero();
  std::vector<Detection> detect(const Tensor& rgb, const Tensor& depth, double min_confidence,
                                double nms_threshold);

  const ParamRegistry& params() const { return registry_; }
  const ModelConfig& config() const { return config_; }
  const AnchorSet& anchors() const { return anchors_; }
  void set_anchors(AnchorSet anchors);

  void save(const std::filesystem::path& weights) const;
  // Loads weights (and the stored anchors) into an already-configured model.
  void load(const std::filesystem::path& weights);

  HyperNetwork rgb_hyper;
  HyperNetwork depth_hyper;
  FusionStage fusion;
  std::vector<Conv2dLayer> backbone;
  std::vector<BatchNormLayer> backbone_bn;
  Conv2dLayer head;

 private:
  void build_registry();

  ModelConfig config_;
  AnchorSet anchors_;
  Tensor anchor_tensor_;
  ParamRegistry registry_;
};

}  // namespace dhi
