#include "dhi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "dhi/error.hpp"
#include "dhi/parallel.hpp"
#include "dhi/png_io.hpp"
#include "dhi/rng.hpp"

namespace dhi {

std::string_view to_string(BackgroundKind kind) {
  switch (kind) {
    case BackgroundKind::Gradient: return "gradient";
    case BackgroundKind::Noise: return "noise";
    case BackgroundKind::Checker: return "checker";
  }
  return "?";
}

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Rect: return "rect";
    case ShapeKind::Disc: return "disc";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

ShapeKind shape_for_class(int class_id) {
  if (class_id < 0) throw InvalidArgument("class id must be non-negative");
  return static_cast<ShapeKind>(class_id % 3);
}

void SceneSpec::validate() const {
  if (width == 0 || height == 0) throw InvalidArgument("scene extents must be positive");
  if (!(background_depth > 0.0) || background_depth * 1000.0 > 65535.0) {
    throw InvalidArgument("background depth must be in (0, 65.535] metres");
  }
  for (const auto& o : objects) {
    if (!(o.half_w > 0.0 && o.half_h > 0.0)) throw InvalidArgument("object extents must be positive");
    if (!(o.depth > 0.0) || o.depth > background_depth) {
      throw InvalidArgument("object depth must lie in (0, background depth]");
    }
    if (o.class_id < 0) throw InvalidArgument("object class must be non-negative");
  }
}

namespace {

bool covers(const SceneObject& o, double u, double v) {
  const double dx = u - o.cx;
  const double dy = v - o.cy;
  switch (o.shape) {
    case ShapeKind::Rect:
      return std::abs(dx) <= o.half_w && std::abs(dy) <= o.half_h;
    case ShapeKind::Disc: {
      const double r = std::min(o.half_w, o.half_h);
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::Triangle: {
      // apex up, base at the bottom edge
      const double t = (dy + o.half_h) / (2.0 * o.half_h);
      return t >= 0.0 && t <= 1.0 && std::abs(dx) <= o.half_w * t;
    }
  }
  return false;
}

double shape_area(const SceneObject& o) {
  switch (o.shape) {
    case ShapeKind::Rect: return 4.0 * o.half_w * o.half_h;
    case ShapeKind::Disc: {
      const double r = std::min(o.half_w, o.half_h);
      return std::numbers::pi * r * r;
    }
    case ShapeKind::Triangle: return 2.0 * o.half_w * o.half_h;
  }
  return 0.0;
}

std::array<double, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += v - c;
  return rgb;
}

std::uint8_t quantize8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace

RenderedScene render(const SceneSpec& spec) {
  spec.validate();
  const std::size_t w = spec.width, h = spec.height;
  RenderedScene out;
  out.width = w;
  out.height = h;
  out.rgb.assign(w * h * 3, 0.0);
  out.depth = DepthMap(h, w, spec.background_depth);
  out.owner.assign(w * h, -1);

  Rng rng(mix_seed(spec.seed, 0xB6));
  std::array<double, 3> c0{}, c1{};
  for (int k = 0; k < 3; ++k) {
    c0[k] = rng.uniform(0.1, 0.5);
    c1[k] = rng.uniform(0.3, 0.7);
  }
  const std::size_t cell = 8 + rng.below(9);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double* px = &out.rgb[(y * w + x) * 3];
      switch (spec.background) {
        case BackgroundKind::Gradient: {
          const double t = static_cast<double>(x + y) / static_cast<double>(w + h);
          for (int k = 0; k < 3; ++k) px[k] = c0[k] + (c1[k] - c0[k]) * t;
          break;
        }
        case BackgroundKind::Noise:
          for (int k = 0; k < 3; ++k) px[k] = c0[k] + 0.2 * rng.uniform();
          break;
        case BackgroundKind::Checker: {
          const bool odd = ((x / cell) + (y / cell)) % 2 == 1;
          for (int k = 0; k < 3; ++k) px[k] = odd ? c1[k] : c0[k];
          break;
        }
      }
    }

  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!covers(o, (static_cast<double>(x) + 0.5) / fw, (static_cast<double>(y) + 0.5) / fh)) continue;
        double& d = out.depth.at(y, x);
        if (o.depth > d) continue;
        d = o.depth;
        out.owner[y * w + x] = static_cast<int>(i);
        for (int k = 0; k < 3; ++k) out.rgb[(y * w + x) * 3 + k] = std::clamp(o.color[k] * spec.lighting, 0.0, 1.0);
      }
  }

  const std::size_t n_obj = spec.objects.size();
  std::vector<std::size_t> count(n_obj, 0), x0(n_obj, w), x1(n_obj, 0), y0(n_obj, h), y1(n_obj, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const int o = out.owner[y * w + x];
      if (o < 0) continue;
      const auto i = static_cast<std::size_t>(o);
      ++count[i];
      x0[i] = std::min(x0[i], x);
      x1[i] = std::max(x1[i], x);
      y0[i] = std::min(y0[i], y);
      y1[i] = std::max(y1[i], y);
    }
  for (std::size_t i = 0; i < n_obj; ++i) {
    const double full = shape_area(spec.objects[i]) * fw * fh;
    const double frac = full > 0.0 ? static_cast<double>(count[i]) / full : 0.0;
    out.visible_fraction.push_back(frac);
    if (count[i] == 0 || frac < 0.25) continue;
    Annotation a;
    a.class_id = spec.objects[i].class_id;
    a.box.w = static_cast<double>(x1[i] + 1 - x0[i]) / fw;
    a.box.h = static_cast<double>(y1[i] + 1 - y0[i]) / fh;
    a.box.cx = static_cast<double>(x0[i] + x1[i] + 1) / (2.0 * fw);
    a.box.cy = static_cast<double>(y0[i] + y1[i] + 1) / (2.0 * fh);
    out.annotations.push_back(a);
  }
  return out;
}

SceneSpec random_scene(std::size_t size, std::size_t classes, std::uint64_t seed, std::uint64_t index,
                       std::size_t max_objects) {
  if (classes == 0) throw InvalidArgument("random_scene: classes must be >= 1");
  if (max_objects == 0) throw InvalidArgument("random_scene: max_objects must be >= 1");
  Rng rng(mix_seed(seed, index));
  SceneSpec spec;
  spec.width = spec.height = size;
  spec.background = static_cast<BackgroundKind>(rng.below(3));
  spec.lighting = rng.uniform(0.8, 1.2);
  spec.seed = rng.next();
  const std::size_t n = 1 + rng.below(max_objects);
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject o;
    // the first object cycles through the classes so small datasets stay balanced
    const std::uint64_t draw = rng.below(classes);
    o.class_id = static_cast<int>(i == 0 ? index % classes : draw);
    o.shape = shape_for_class(o.class_id);
    const double half = rng.uniform(0.08, 0.2);
    switch (o.shape) {
      case ShapeKind::Rect:
        o.half_w = half * rng.uniform(0.7, 1.3);
        o.half_h = half * rng.uniform(0.7, 1.3);
        break;
      case ShapeKind::Disc:
        o.half_w = o.half_h = half;
        break;
      case ShapeKind::Triangle:
        o.half_w = half;
        o.half_h = half * rng.uniform(0.8, 1.2);
        break;
    }
    o.cx = rng.uniform(0.15, 0.85);
    o.cy = rng.uniform(0.15, 0.85);
    o.depth = rng.uniform(1.0, 8.0);
    const double hue = 0.61803398874989485 * static_cast<double>(o.class_id) + rng.uniform(-0.04, 0.04);
    o.color = hsv(hue, rng.uniform(0.6, 0.9), rng.uniform(0.7, 0.95));
    spec.objects.push_back(o);
  }
  return spec;
}

void DatasetOptions::validate() const {
  if (count < 1) throw InvalidArgument("count must be >= 1");
  if (classes < 1) throw InvalidArgument("classes must be >= 1");
  if (image_size < 8) throw InvalidArgument("image size must be >= 8");
  if (tests() > count) throw InvalidArgument("test count exceeds count");
  if (max_objects < 1) throw InvalidArgument("max_objects must be >= 1");
}

const std::vector<SampleRecord>& Manifest::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw InvalidArgument("unknown split '" + std::string(name) + "' (expected train or test)");
}

std::uint16_t depth_to_png(double metres) {
  if (!(metres >= 0.0) || metres * 1000.0 > 65535.0) throw InvalidArgument("depth out of 16-bit millimetre range");
  return static_cast<std::uint16_t>(std::lround(metres * 1000.0));
}

std::string format_annotations(const std::vector<Annotation>& annotations) {
  std::string out;
  char buf[160];
  for (const auto& a : annotations) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g\n", a.class_id, a.box.cx, a.box.cy, a.box.w, a.box.h);
    out += buf;
  }
  return out;
}

std::vector<Annotation> parse_annotations(const std::string& text) {
  std::vector<Annotation> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Annotation a;
    if (!(ls >> a.class_id >> a.box.cx >> a.box.cy >> a.box.w >> a.box.h)) {
      throw DataError("malformed annotation line: " + line);
    }
    if (a.class_id < 0 || !(a.box.w > 0.0 && a.box.h > 0.0)) throw DataError("invalid annotation: " + line);
    out.push_back(a);
  }
  return out;
}

Manifest generate_dataset(const std::filesystem::path& out, const DatasetOptions& options) {
  options.validate();
  try {
    for (const char* sub : {"rgb", "depth", "labels"}) std::filesystem::create_directories(out / sub);
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError("cannot create output directory " + out.string() + ": " + e.what());
  }

  Manifest m;
  m.root = out;
  m.image_size = options.image_size;
  m.classes = options.classes;
  m.seed = options.seed;
  std::vector<SampleRecord> records(options.count);
  parallel_for(options.count, [&](std::size_t i) {
    const auto scene = render(random_scene(options.image_size, options.classes, options.seed, i, options.max_objects));
    const std::string name = index_name(i);
    SampleRecord rec{"rgb/" + name + ".png", "depth/" + name + ".png", "labels/" + name + ".txt"};
    RgbImage rgb{scene.width, scene.height, {}};
    rgb.pixels.reserve(scene.rgb.size());
    for (double v : scene.rgb) rgb.pixels.push_back(quantize8(v));
    Gray16Image depth{scene.width, scene.height, {}};
    depth.pixels.reserve(scene.depth.values.size());
    for (double v : scene.depth.values) depth.pixels.push_back(depth_to_png(v));
    write_png(out / rec.rgb, rgb);
    write_png(out / rec.depth, depth);
    std::ofstream os(out / rec.annotations, std::ios::binary);
    if (!os) throw DataError("cannot write " + (out / rec.annotations).string());
    os << format_annotations(scene.annotations);
    records[i] = std::move(rec);
  });
  const std::size_t n_train = options.count - options.tests();
  m.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.test.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train), records.end());

  nlohmann::json j;
  j["format"] = "dhi-synth";
  j["version"] = 1;
  j["image_size"] = m.image_size;
  j["classes"] = m.classes;
  j["seed"] = m.seed;
  for (const char* split : {"train", "test"}) {
    auto arr = nlohmann::json::array();
    for (const auto& r : m.split(split)) arr.push_back({{"rgb", r.rgb}, {"depth", r.depth}, {"annotations", r.annotations}});
    j[split] = std::move(arr);
  }
  std::ofstream os(out / "manifest.json", std::ios::binary);
  if (!os) throw DataError("cannot write " + (out / "manifest.json").string());
  os << j.dump(2) << '\n';
  return m;
}

Manifest read_manifest(const std::filesystem::path& dataset_dir_or_file) {
  const auto file = std::filesystem::is_directory(dataset_dir_or_file) ? dataset_dir_or_file / "manifest.json"
                                                                        : dataset_dir_or_file;
  std::ifstream is(file);
  if (!is) throw DataError("missing dataset manifest " + file.string());
  Manifest m;
  m.root = file.parent_path();
  try {
    const auto j = nlohmann::json::parse(is);
    m.image_size = j.at("image_size").get<std::size_t>();
    m.classes = j.at("classes").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const char* split : {"train", "test"}) {
      auto& dst = std::string_view(split) == "train" ? m.train : m.test;
      for (const auto& r : j.value(split, nlohmann::json::array())) {
        dst.push_back({r.at("rgb").get<std::string>(), r.at("depth").get<std::string>(),
                       r.at("annotations").get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + file.string() + ": " + e.what());
  }
  return m;
}

Sample load_sample(const std::filesystem::path& root, const SampleRecord& record) {
  const auto rgb = read_png_rgb8(root / record.rgb);
  const auto depth = read_png_gray16(root / record.depth);
  if (rgb.width != depth.width || rgb.height != depth.height) {
    throw DataError("rgb " + record.rgb + " and depth " + record.depth + " differ in extent");
  }
  Sample s;
  s.rgb = Tensor({1, rgb.height, rgb.width, 3});
  auto d = s.rgb.data();
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) d[i] = static_cast<double>(rgb.pixels[i]) / 255.0;
  s.depth = DepthMap(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.pixels.size(); ++i) s.depth.values[i] = depth_from_png(depth.pixels[i]);
  std::ifstream is(root / record.annotations);
  if (!is) throw DataError("missing annotation file " + (root / record.annotations).string());
  std::stringstream ss;
  ss << is.rdbuf();
  s.annotations = parse_annotations(ss.str());
  return s;
}

Sample resize_sample(const Sample& sample, std::size_t size) {
  const std::size_t h = sample.depth.height, w = sample.depth.width;
  if (h == size && w == size) return sample;
  Sample out;
  out.annotations = sample.annotations;
  out.rgb = Tensor({1, size, size, 3});
  out.depth = DepthMap(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t sy = y * h / size, sx = x * w / size;
      for (std::size_t c = 0; c < 3; ++c) out.rgb.at(0, y, x, c) = sample.rgb.at(0, sy, sx, c);
      out.depth.at(y, x) = sample.depth.at(sy, sx);
    }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5F));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

DatasetLoader::DatasetLoader(Manifest manifest, std::string_view split, std::optional<std::uint64_t> shuffle_seed)
    : manifest_(std::move(manifest)), records_(manifest_.split(split)) {
  if (shuffle_seed) {
    order_ = shuffled_indices(records_.size(), *shuffle_seed);
  } else {
    order_.resize(records_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

Sample DatasetLoader::operator[](std::size_t i) const { return load_sample(manifest_.root, records_.at(order_.at(i))); }

void DatasetLoader::reshuffle(std::uint64_t seed) { order_ = shuffled_indices(records_.size(), seed); }

}  // namespace dhi
