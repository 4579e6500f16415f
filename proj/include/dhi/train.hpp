#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "dhi/detector.hpp"
#include "dhi/loss.hpp"
#include "dhi/metrics.hpp"
#include "dhi/synth.hpp"

namespace dhi {

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  bool fit_anchors = true;  // k-means over the training boxes before the first epoch
  // Random flips and transposition of each sample (RGB, depth and boxes
  // together), drawn per epoch from the seed.
  bool augment = true;
  LossWeights loss;
  std::optional<std::size_t> limit;  // use only the first N training samples
};

struct EpochStats {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over batches
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;
// Checked after each epoch's callback; returning true ends training there.
using StopRule = std::function<bool(const EpochStats&)>;

// Samples of one split, loaded and resized to the model input.
std::vector<Sample> load_split(const Manifest& manifest, std::string_view split, std::size_t input_size,
                               std::optional<std::size_t> limit = {});

// One of the eight flips/transpositions of a sample: bit 0 mirrors x, bit 1
// mirrors y, bit 2 swaps the axes (applied last).
Sample dihedral(const Sample& sample, unsigned variant);

// Initialises the model from options.seed and trains it with Adam.
std::vector<EpochStats> train_detector(Detector& model, const std::vector<Sample>& train, const TrainOptions& options,
                                       const EpochCallback& on_epoch = {}, const StopRule& stop = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history);

struct EvalOptions {
  double iou_threshold = 0.5;  // for matching
  double nms_threshold = 0.5;
  double min_confidence = 0.005;
};

struct EvalOutput {
  EvalReport report;
  std::vector<ScoredDetection> detections;
  std::vector<GroundTruth> truths;
};

EvalOutput evaluate_model(Detector& model, const std::vector<Sample>& samples, const EvalOptions& options);

}  // namespace dhi
