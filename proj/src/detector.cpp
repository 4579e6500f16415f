#include "dhi/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dhi/error.hpp"
#include "dhi/serialize.hpp"

namespace dhi {

void ModelConfig::validate() const {
  if (kernel_size == 0 || kernel_size % 2 == 0) throw InvalidArgument("kernel_size must be odd");
  if (groups == 0 || 3 % groups != 0) throw InvalidArgument("groups must divide the 3 input channels");
  weighting.validate();
  if (backbone_channels.size() != 13) {
    throw InvalidArgument("backbone must have exactly 13 convolution layers, got " +
                          std::to_string(backbone_channels.size()));
  }
  for (auto c : backbone_channels)
    if (c == 0) throw InvalidArgument("backbone channel counts must be positive");
  for (auto p : pool_after)
    if (p < 1 || p > 13) throw InvalidArgument("pool_after entries must be in [1, 13]");
  if (anchors == 0) throw InvalidArgument("anchors must be >= 1");
  if (classes == 0) throw InvalidArgument("classes must be >= 1");
  if (fusion_channels != 3) throw InvalidArgument("fusion_channels must match the 3 stream channels");
  if (!(depth_input_scale > 0.0)) throw InvalidArgument("depth_input_scale must be positive");
  if (grid_size() == 0) throw InvalidArgument("input_size too small for the pooling plan");
}

std::size_t ModelConfig::grid_size() const {
  std::size_t s = input_size;
  auto pool = [&s] { s = s >= 2 ? (s - 2) / 2 + 1 : 0; };
  pool();
  for (std::size_t i = 0; i < pool_after.size(); ++i) pool();
  return s;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config file " + path.string());
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw InvalidArgument("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidArgument("config key " + key + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_size(key, item));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(xs[i]);
  }
  return s;
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> apply_model_keys(ModelConfig& cfg, std::map<std::string, std::string> kv) {
  std::map<std::string, std::string> rest;
  for (auto& [k, v] : kv) {
    if (k == "input_size") cfg.input_size = parse_size(k, v);
    else if (k == "kernel_size") cfg.kernel_size = parse_size(k, v);
    else if (k == "groups") cfg.groups = parse_size(k, v);
    else if (k == "weighting") cfg.weighting.kind = parse_weighting_kind(v);
    else if (k == "gamma") cfg.weighting.gamma = parse_real(k, v);
    else if (k == "wendland_literal") cfg.weighting.wendland_literal = parse_size(k, v) != 0;
    else if (k == "generator_mode") cfg.generator_mode = parse_generator_mode(v);
    else if (k == "backbone_channels") cfg.backbone_channels = parse_list(k, v);
    else if (k == "pool_after") cfg.pool_after = parse_list(k, v);
    else if (k == "anchors") cfg.anchors = parse_size(k, v);
    else if (k == "classes") cfg.classes = parse_size(k, v);
    else if (k == "fusion_channels") cfg.fusion_channels = parse_size(k, v);
    else if (k == "leaky_slope") cfg.leaky_slope = parse_real(k, v);
    else if (k == "depth_input_scale") cfg.depth_input_scale = parse_real(k, v);
    else rest.emplace(k, v);
  }
  return rest;
}

std::map<std::string, std::string> model_key_values(const ModelConfig& cfg) {
  return {
      {"input_size", std::to_string(cfg.input_size)},
      {"kernel_size", std::to_string(cfg.kernel_size)},
      {"groups", std::to_string(cfg.groups)},
      {"weighting", std::string(to_string(cfg.weighting.kind))},
      {"gamma", fmt_real(cfg.weighting.gamma)},
      {"wendland_literal", cfg.weighting.wendland_literal ? "1" : "0"},
      {"generator_mode", std::string(to_string(cfg.generator_mode))},
      {"backbone_channels", join(cfg.backbone_channels)},
      {"pool_after", join(cfg.pool_after)},
      {"anchors", std::to_string(cfg.anchors)},
      {"classes", std::to_string(cfg.classes)},
      {"fusion_channels", std::to_string(cfg.fusion_channels)},
      {"leaky_slope", fmt_real(cfg.leaky_slope)},
      {"depth_input_scale", fmt_real(cfg.depth_input_scale)},
  };
}

void AnchorSet::validate() const {
  if (shapes.empty()) throw InvalidArgument("anchor set is empty");
  for (const auto& [w, h] : shapes)
    if (!(w > 0.0 && h > 0.0) || !std::isfinite(w) || !std::isfinite(h))
      throw InvalidArgument("anchor shapes must be positive");
}

AnchorSet default_anchors(std::size_t count) {
  static constexpr std::pair<double, double> voc[] = {
      {1.3221, 1.73145}, {3.19275, 4.00944}, {5.05587, 8.09892}, {9.47112, 4.84053}, {11.2364, 10.0071}};
  AnchorSet set;
  for (std::size_t i = 0; i < count; ++i) {
    if (i < 5) {
      set.shapes.emplace_back(voc[i].first / 13.0, voc[i].second / 13.0);
    } else {
      const double s = 0.1 + 0.8 * static_cast<double>(i) / static_cast<double>(count);
      set.shapes.emplace_back(s, s);
    }
  }
  return set;
}

namespace {

double shape_iou(const std::pair<double, double>& a, const std::pair<double, double>& b) {
  const double inter = std::min(a.first, b.first) * std::min(a.second, b.second);
  return inter / (a.first * a.second + b.first * b.second - inter);
}

}  // namespace

AnchorSet kmeans_anchors(std::span<const std::pair<double, double>> boxes, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("kmeans_anchors: count must be >= 1");
  if (boxes.size() < count) {
    throw InvalidArgument("kmeans_anchors: need at least " + std::to_string(count) + " boxes, got " +
                          std::to_string(boxes.size()));
  }
  for (const auto& [w, h] : boxes)
    if (!(w > 0.0 && h > 0.0)) throw InvalidArgument("kmeans_anchors: box sizes must be positive");

  Rng rng(mix_seed(seed, 0xA9C));
  std::vector<std::pair<double, double>> centroids;
  centroids.push_back(boxes[rng.below(boxes.size())]);
  std::vector<double> dist(boxes.size());
  while (centroids.size() < count) {
    double total = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, 1.0 - shape_iou(boxes[i], c));
      dist[i] = best * best;
      total += dist[i];
    }
    if (total <= 0.0) {
      // Fewer distinct shapes than clusters: duplicate the last centroid.
      centroids.push_back(centroids.back());
      continue;
    }
    double pick = rng.uniform() * total;
    std::size_t chosen = boxes.size() - 1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      pick -= dist[i];
      if (pick < 0.0 && dist[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    centroids.push_back(boxes[chosen]);
  }

  std::vector<std::size_t> assign(boxes.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = 1.0 - shape_iou(boxes[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (iter == 0 || assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<double> sw(count, 0.0), sh(count, 0.0);
    std::vector<std::size_t> n(count, 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      sw[assign[i]] += boxes[i].first;
      sh[assign[i]] += boxes[i].second;
      ++n[assign[i]];
    }
    for (std::size_t c = 0; c < count; ++c)
      if (n[c] > 0) centroids[c] = {sw[c] / static_cast<double>(n[c]), sh[c] / static_cast<double>(n[c])};
  }
  std::stable_sort(centroids.begin(), centroids.end(),
                   [](const auto& a, const auto& b) { return a.first * a.second < b.first * b.second; });
  return AnchorSet{centroids};
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw InvalidArgument("nms: threshold must be in (0, 1)");
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const auto& d = detections[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

DecodedSlot decode_slot(std::span<const double> raw, const std::pair<double, double>& anchor, std::size_t classes) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  DecodedSlot s;
  s.x = sig(raw[0]);
  s.y = sig(raw[1]);
  s.w = anchor.first * std::exp(raw[2]);
  s.h = anchor.second * std::exp(raw[3]);
  s.confidence = sig(raw[4]);
  s.class_probs.resize(classes);
  double mx = raw[5];
  for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, raw[5 + k]);
  double z = 0.0;
  for (std::size_t k = 0; k < classes; ++k) z += (s.class_probs[k] = std::exp(raw[5 + k] - mx));
  for (auto& p : s.class_probs) p /= z;
  return s;
}

std::vector<Detection> decode_detections(const Tensor& head, std::size_t n, const AnchorSet& anchors,
                                         std::size_t classes, double min_confidence) {
  const std::size_t s = head.dim(1);
  const std::size_t a_n = anchors.size();
  const std::size_t stride = 5 + classes;
  if (head.dim(3) != a_n * stride) throw InvalidArgument("head channels do not match anchors/classes");
  std::vector<Detection> out;
  const auto raw = head.data();
  for (std::size_t cy = 0; cy < s; ++cy)
    for (std::size_t cx = 0; cx < s; ++cx)
      for (std::size_t a = 0; a < a_n; ++a) {
        const std::size_t base = ((n * s + cy) * head.dim(2) + cx) * head.dim(3) + a * stride;
        const auto slot = decode_slot(raw.subspan(base, stride), anchors.shapes[a], classes);
        const auto best = static_cast<std::size_t>(
            std::max_element(slot.class_probs.begin(), slot.class_probs.end()) - slot.class_probs.begin());
        const double score = slot.confidence * slot.class_probs[best];
        if (score < min_confidence) continue;
        Detection d;
        d.class_id = static_cast<int>(best);
        d.confidence = score;
        d.box = Box{(static_cast<double>(cx) + slot.x) / static_cast<double>(s),
                    (static_cast<double>(cy) + slot.y) / static_cast<double>(s), slot.w, slot.h};
        out.push_back(d);
      }
  return out;
}

Detector::Detector(ModelConfig config, AnchorSet anchors)
    : rgb_hyper(3, config.generator_mode),
      depth_hyper(3, config.generator_mode),
      config_(std::move(config)),
      anchors_(std::move(anchors)) {
  config_.validate();
  anchors_.validate();
  if (anchors_.size() != config_.anchors) {
    throw InvalidArgument("anchor set has " + std::to_string(anchors_.size()) + " shapes, config expects " +
                          std::to_string(config_.anchors));
  }
  FusionConfig fc;
  fc.channels = config_.fusion_channels;
  fc.slope = config_.leaky_slope;
  fusion = FusionStage(fc);
  std::size_t in = config_.fusion_channels;
  for (std::size_t c : config_.backbone_channels) {
    backbone.emplace_back(in, c, 3, 1, Padding::Same, false);
    backbone_bn.emplace_back(c);
    in = c;
  }
  head = Conv2dLayer(in, config_.head_channels(), 1);
  anchor_tensor_ = Tensor::zeros({anchors_.size(), 2});
  set_anchors(anchors_);
  build_registry();
}

void Detector::build_registry() {
  registry_ = ParamRegistry();
  rgb_hyper.register_params("rgb.hyper", registry_);
  depth_hyper.register_params("depth.hyper", registry_);
  fusion.register_params("fusion", registry_);
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    backbone[i].register_params("backbone." + std::to_string(i) + ".conv", registry_);
    backbone_bn[i].register_params("backbone." + std::to_string(i) + ".bn", registry_);
  }
  head.register_params("head", registry_);
  registry_.add("anchors", anchor_tensor_, false);
}

void Detector::set_anchors(AnchorSet anchors) {
  anchors.validate();
  if (anchors.size() != config_.anchors) throw InvalidArgument("anchor count does not match config");
  anchors_ = std::move(anchors);
  auto d = anchor_tensor_.data();
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    d[2 * a] = anchors_.shapes[a].first;
    d[2 * a + 1] = anchors_.shapes[a].second;
  }
}

std::pair<Tensor, Tensor> Detector::stream_features(const Tensor& rgb, const Tensor& depth, Mode mode) {
  if (rgb.rank() != 4 || rgb.dim(3) != 3) throw InvalidArgument("rgb input must be (N, H, W, 3)");
  if (depth.rank() != 4 || depth.dim(3) != 1 || depth.dim(0) != rgb.dim(0) || depth.dim(1) != rgb.dim(1) ||
      depth.dim(2) != rgb.dim(2)) {
    throw InvalidArgument("depth " + shape_str(depth.shape()) + " is not aligned with rgb " +
                          shape_str(rgb.shape()));
  }
  const GroupSpec groups{config_.groups, 3};
  Tensor rgb_feat = maxpool2d(depth_aware_hyper_involution_forward(rgb, depth, rgb_hyper, config_.weighting,
                                                                   config_.kernel_size, groups, mode));
  const Tensor depth_in = tile_channels(scale(depth, config_.depth_input_scale), 3);
  Tensor depth_feat = maxpool2d(hyper_involution_forward(depth_in, depth_hyper, config_.kernel_size, groups, mode));
  return {rgb_feat, depth_feat};
}

Tensor Detector::forward(const Tensor& rgb, const Tensor& depth, Mode mode) {
  if (rgb.rank() == 4 && (rgb.dim(1) != config_.input_size || rgb.dim(2) != config_.input_size)) {
    throw InvalidArgument("input must be resized to " + std::to_string(config_.input_size) + "x" +
                          std::to_string(config_.input_size) + ", got " + shape_str(rgb.shape()));
  }
  auto [rgb_feat, depth_feat] = stream_features(rgb, depth, mode);
  Tensor x = fusion.fuse(rgb_feat, depth_feat);
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    x = leaky_relu(backbone_bn[i](backbone[i](x), mode), config_.leaky_slope);
    if (std::find(config_.pool_after.begin(), config_.pool_after.end(), i + 1) != config_.pool_after.end()) {
      x = maxpool2d(x);
    }
  }
  return head(x);
}

void Detector::init(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  rgb_hyper.init(rng);
  depth_hyper.init(rng);
  fusion.init(rng);
  for (auto& conv : backbone) conv.init(rng);
  head.init(rng, 0.1);
}

void Detector::zero() {
  rgb_hyper.zero();
  depth_hyper.zero();
  fusion.zero();
  for (auto& conv : backbone) conv.zero();
  head.zero();
}

std::vector<Detection> Detector::detect(const Tensor& rgb, const Tensor& depth, double min_confidence,
                                        double nms_threshold) {
  NoGradGuard guard;
  const Tensor out = forward(rgb, depth, Mode::Eval);
  return nms(decode_detections(out, 0, anchors_, config_.classes, min_confidence), nms_threshold);
}

void Detector::save(const std::filesystem::path& weights) const { write_weights(weights, snapshot(registry_)); }

void Detector::load(const std::filesystem::path& weights) {
  auto rest = restore(registry_, read_weights(weights));
  if (!rest.empty()) throw DataError("weights file has unexpected tensor " + rest.front().name);
  AnchorSet loaded;
  const auto d = anchor_tensor_.data();
  for (std::size_t a = 0; a < config_.anchors; ++a) loaded.shapes.emplace_back(d[2 * a], d[2 * a + 1]);
  loaded.validate();
  anchors_ = std::move(loaded);
}

}  // namespace dhi
