#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dhi/depth_weighting.hpp"
#include "dhi/metrics.hpp"
#include "dhi/tensor.hpp"

namespace dhi {

enum class BackgroundKind { Gradient, Noise, Checker };
enum class ShapeKind { Rect, Disc, Triangle };

std::string_view to_string(BackgroundKind kind);
std::string_view to_string(ShapeKind kind);

// Class k is drawn as shape k % 3.
ShapeKind shape_for_class(int class_id);

struct SceneObject {
  ShapeKind shape = ShapeKind::Rect;
  int class_id = 0;
  double cx = 0.5;  // centre, normalised
  double cy = 0.5;
  double half_w = 0.1;  // half extents, normalised (discs use the smaller one)
  double half_h = 0.1;
  double depth = 2.0;  // metres, fronto-parallel plane
  std::array<double, 3> color = {1.0, 1.0, 1.0};
};

struct SceneSpec {
  std::size_t width = 128;
  std::size_t height = 128;
  BackgroundKind background = BackgroundKind::Gradient;
  double background_depth = 10.0;
  double lighting = 1.0;  // multiplies object colours
  std::vector<SceneObject> objects;  // later objects are drawn on ties
  std::uint64_t seed = 0;            // background noise

  void validate() const;
};

struct Annotation {
  int class_id = 0;
  Box box;  // normalised
};

struct RenderedScene {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> rgb;  // row-major RGB in [0, 1]
  DepthMap depth;
  std::vector<int> owner;   // index of the visible object per pixel, -1 for background
  std::vector<Annotation> annotations;  // bounding box of each object's visible mask
  std::vector<double> visible_fraction;  // per object, visible / full area
};

// Per-pixel depth test: the nearest plane wins in RGB and depth. Objects with
// less than a quarter of their area visible are left out of the annotations.
RenderedScene render(const SceneSpec& spec);

// Scene with 1..max_objects random objects; deterministic in (seed, index).
// The first object has class index % classes.
SceneSpec random_scene(std::size_t size, std::size_t classes, std::uint64_t seed, std::uint64_t index,
                       std::size_t max_objects = 3);

struct DatasetOptions {
  std::size_t count = 0;
  std::size_t classes = 3;
  std::uint64_t seed = 0;
  std::size_t image_size = 128;
  std::optional<std::size_t> test_count;  // default count / 5
  std::size_t max_objects = 3;

  void validate() const;
  std::size_t tests() const { return test_count ? *test_count : count / 5; }
};

struct SampleRecord {
  std::string rgb;          // paths relative to the dataset root
  std::string depth;
  std::string annotations;
};

struct Manifest {
  std::filesystem::path root;
  std::size_t image_size = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;

  const std::vector<SampleRecord>& split(std::string_view name) const;
};

// Writes rgb/NNNNNN.png (8-bit RGB), depth/NNNNNN.png (16-bit millimetres),
// labels/NNNNNN.txt ("class cx cy w h" per line) and manifest.json.
Manifest generate_dataset(const std::filesystem::path& out, const DatasetOptions& options);

Manifest read_manifest(const std::filesystem::path& dataset_dir_or_file);

std::string format_annotations(const std::vector<Annotation>& annotations);
std::vector<Annotation> parse_annotations(const std::string& text);

struct Sample {
  Tensor rgb;    // (1, H, W, 3) in [0, 1]
  DepthMap depth;  // metres
  std::vector<Annotation> annotations;
};

// millimetres -> metres
inline double depth_from_png(std::uint16_t mm) { return static_cast<double>(mm) / 1000.0; }
std::uint16_t depth_to_png(double metres);

Sample load_sample(const std::filesystem::path& root, const SampleRecord& record);

// Nearest-neighbour resize of a sample to size x size.
Sample resize_sample(const Sample& sample, std::size_t size);

// Iterates a split in a permutation fixed by the shuffle seed (identity order
// when no seed is given).
class DatasetLoader {
 public:
  DatasetLoader(Manifest manifest, std::string_view split, std::optional<std::uint64_t> shuffle_seed = {});

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  const std::vector<std::size_t>& order() const { return order_; }
  Sample operator[](std::size_t i) const;
  void reshuffle(std::uint64_t seed);

 private:
  Manifest manifest_;
  std::vector<SampleRecord> records_;
  std::vector<std::size_t> order_;
};

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace dhi
