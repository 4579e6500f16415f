#include "dhi/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dhi/error.hpp"
#include "dhi/nn.hpp"
#include "dhi/parallel.hpp"

namespace dhi {

std::vector<Sample> load_split(const Manifest& manifest, std::string_view split, std::size_t input_size,
                               std::optional<std::size_t> limit) {
  const auto& records = manifest.split(split);
  const std::size_t n = limit ? std::min(*limit, records.size()) : records.size();
  std::vector<Sample> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = resize_sample(load_sample(manifest.root, records[i]), input_size); });
  return out;
}

namespace {

std::pair<Tensor, Tensor> stack(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
  const std::size_t h = samples[idx[0]].depth.height, w = samples[idx[0]].depth.width;
  Tensor rgb({idx.size(), h, w, 3});
  Tensor depth({idx.size(), h, w, 1});
  auto rd = rgb.data();
  auto dd = depth.data();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = samples[idx[b]];
    std::copy(s.rgb.data().begin(), s.rgb.data().end(), rd.begin() + static_cast<std::ptrdiff_t>(b * h * w * 3));
    std::copy(s.depth.values.begin(), s.depth.values.end(), dd.begin() + static_cast<std::ptrdiff_t>(b * h * w));
  }
  return {rgb, depth};
}

std::vector<GroundTruthBox> truths_of(const Sample& s) {
  std::vector<GroundTruthBox> out;
  for (const auto& a : s.annotations) out.push_back({a.class_id, a.box});
  return out;
}

}  // namespace

Sample dihedral(const Sample& s, unsigned variant) {
  const bool fx = variant & 1u, fy = variant & 2u, tr = variant & 4u;
  const std::size_t h = s.depth.height, w = s.depth.width;
  if (tr && h != w) throw InvalidArgument("transposition needs a square sample");
  Sample out;
  out.rgb = Tensor({1, h, w, 3});
  out.depth = DepthMap(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t a = tr ? x : y, b = tr ? y : x;
      const std::size_t sy = fy ? h - 1 - a : a, sx = fx ? w - 1 - b : b;
      for (std::size_t c = 0; c < 3; ++c) out.rgb.at(0, y, x, c) = s.rgb.at(0, sy, sx, c);
      out.depth.at(y, x) = s.depth.at(sy, sx);
    }
  for (auto a : s.annotations) {
    if (fx) a.box.cx = 1.0 - a.box.cx;
    if (fy) a.box.cy = 1.0 - a.box.cy;
    if (tr) {
      std::swap(a.box.cx, a.box.cy);
      std::swap(a.box.w, a.box.h);
    }
    out.annotations.push_back(a);
  }
  return out;
}

std::vector<EpochStats> train_detector(Detector& model, const std::vector<Sample>& train, const TrainOptions& options,
                                       const EpochCallback& on_epoch, const StopRule& stop) {
  if (train.empty()) throw DataError("training split is empty");
  if (options.batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (!(options.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  const auto& cfg = model.config();
  for (const auto& s : train) {
    if (s.depth.height != cfg.input_size || s.depth.width != cfg.input_size) {
      throw InvalidArgument("training samples must be resized to the model input size");
    }
    for (const auto& a : s.annotations)
      if (a.class_id < 0 || static_cast<std::size_t>(a.class_id) >= cfg.classes) {
        throw DataError("annotation class " + std::to_string(a.class_id) + " exceeds model classes");
      }
  }

  model.init(options.seed);
  if (options.fit_anchors) {
    std::vector<std::pair<double, double>> sizes;
    for (const auto& s : train)
      for (const auto& a : s.annotations) sizes.emplace_back(a.box.w, a.box.h);
    if (sizes.size() >= cfg.anchors) model.set_anchors(kmeans_anchors(sizes, cfg.anchors, options.seed));
  }

  AdamOptions ao;
  ao.lr = options.lr;
  Adam adam(model.params().trainable(), ao);
  std::vector<EpochStats> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = shuffled_indices(train.size(), mix_seed(options.seed, 1000 + epoch));
    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += options.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), first + options.batch_size)));
      std::vector<Sample> augmented;
      std::vector<std::size_t> pick = idx;
      if (options.augment) {
        for (std::size_t b = 0; b < idx.size(); ++b) {
          Rng rng(mix_seed(options.seed, (2000 + epoch) * order.size() + first + b));
          augmented.push_back(dihedral(train[idx[b]], static_cast<unsigned>(rng.below(8))));
          pick[b] = b;
        }
      }
      const auto& source = options.augment ? augmented : train;
      auto [rgb, depth] = stack(source, pick);
      std::vector<std::vector<GroundTruthBox>> truths;
      for (auto i : pick) truths.push_back(truths_of(source[i]));
      adam.zero_grad();
      LossBreakdown parts;
      const Tensor loss = detection_loss(model.forward(rgb, depth, Mode::Train), truths, model.anchors(),
                                         cfg.classes, options.loss, &parts);
      backward(loss);
      adam.step();
      sum += parts;
      ++batches;
    }
    EpochStats st;
    st.epoch = epoch + 1;
    const double inv = 1.0 / static_cast<double>(batches);
    st.loss.classification = sum.classification * inv;
    st.loss.localization = sum.localization * inv;
    st.loss.confidence = sum.confidence * inv;
    st.loss.total = sum.total * inv;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(st.loss.total)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(st.epoch));
    }
    history.push_back(st);
    if (on_epoch) on_epoch(st);
    if (stop && stop(st)) break;
  }
  return history;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,total,classification,localization,confidence\n";
  char buf[160];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.loss.total, e.loss.classification,
                  e.loss.localization, e.loss.confidence);
    os << buf;
  }
}

EvalOutput evaluate_model(Detector& model, const std::vector<Sample>& samples, const EvalOptions& options) {
  if (!(options.iou_threshold > 0.0 && options.iou_threshold < 1.0)) {
    throw InvalidArgument("IoU threshold must be in (0, 1)");
  }
  EvalOutput out;
  std::vector<std::vector<Detection>> per_image(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    per_image[i] = model.detect(samples[i].rgb, samples[i].depth.to_tensor(), options.min_confidence,
                                options.nms_threshold);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& d : per_image[i]) out.detections.push_back({i, d});
    for (const auto& a : samples[i].annotations) out.truths.push_back({i, a.class_id, a.box});
  }
  out.report = evaluate_detections(out.detections, out.truths, model.config().classes, options.iou_threshold);
  return out;
}

}  // namespace dhi
