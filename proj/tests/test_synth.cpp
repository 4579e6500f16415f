#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dhi/error.hpp"
#include "dhi/png_io.hpp"
#include "dhi/synth.hpp"
#include "dhi/train.hpp"

using namespace dhi;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dhi_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Independent point-in-shape test on pixel centres.
bool inside(const SceneObject& o, double u, double v) {
  if (o.shape == ShapeKind::Rect) return std::abs(u - o.cx) <= o.half_w && std::abs(v - o.cy) <= o.half_h;
  if (o.shape == ShapeKind::Disc) return std::hypot(u - o.cx, v - o.cy) <= std::min(o.half_w, o.half_h);
  // triangle: apex (cx, cy - hh), base corners (cx +- hw, cy + hh)
  const double top = o.cy - o.half_h, bottom = o.cy + o.half_h;
  if (v < top || v > bottom) return false;
  const double half_width = o.half_w * (v - top) / (bottom - top);
  return std::abs(u - o.cx) <= half_width;
}

}  // namespace

TEST(Render, DiscDepthHandCase) {
  SceneSpec s;
  s.width = s.height = 32;
  s.background_depth = 10.0;
  SceneObject disc;
  disc.shape = ShapeKind::Disc;
  disc.class_id = 1;
  disc.half_w = disc.half_h = 0.25;
  disc.depth = 2.0;
  s.objects = {disc};
  auto r = render(s);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const bool in = inside(disc, (x + 0.5) / 32.0, (y + 0.5) / 32.0);
      EXPECT_EQ(r.depth.at(y, x), in ? 2.0 : 10.0);
    }
}

TEST(Render, RectAnnotationHandCase) {
  SceneSpec s;
  s.width = s.height = 8;
  SceneObject rect;
  rect.half_w = rect.half_h = 0.25;
  s.objects = {rect};
  auto r = render(s);
  ASSERT_EQ(r.annotations.size(), 1u);
  EXPECT_EQ(r.annotations[0].box.cx, 0.5);
  EXPECT_EQ(r.annotations[0].box.w, 0.5);
  EXPECT_EQ(r.annotations[0].box.h, 0.5);
}

TEST(Render, DepthIsNearestCoveringPlane) {
  for (std::uint64_t i = 0; i < 25; ++i) {
    auto spec = random_scene(48, 3, 9, i, 4);
    auto r = render(spec);
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x) {
        double want = spec.background_depth;
        for (const auto& o : spec.objects)
          if (inside(o, (x + 0.5) / 48.0, (y + 0.5) / 48.0)) want = std::min(want, o.depth);
        ASSERT_EQ(r.depth.at(y, x), want) << "scene " << i << " pixel " << y << "," << x;
      }
  }
}

TEST(Render, AnnotationsAreTightAroundVisibleMasks) {
  for (std::uint64_t i = 0; i < 25; ++i) {
    auto spec = random_scene(64, 3, 4, i, 4);
    auto r = render(spec);
    std::size_t a = 0;
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
      std::size_t x0 = 64, x1 = 0, y0 = 64, y1 = 0, n = 0;
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
          if (r.owner[y * 64 + x] == static_cast<int>(k)) {
            ++n;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
          }
      if (r.visible_fraction[k] < 0.25) continue;
      ASSERT_GT(n, 0u);
      ASSERT_LT(a, r.annotations.size());
      const Box& b = r.annotations[a++].box;
      EXPECT_NEAR(b.left() * 64, x0, 1.0);
      EXPECT_NEAR(b.right() * 64, x1 + 1, 1.0);
      EXPECT_NEAR(b.top() * 64, y0, 1.0);
      EXPECT_NEAR(b.bottom() * 64, y1 + 1, 1.0);
    }
    EXPECT_EQ(a, r.annotations.size());
  }
}

TEST(Render, HiddenObjectIsNotAnnotated) {
  SceneSpec s;
  s.width = s.height = 32;
  SceneObject back, front;
  back.half_w = back.half_h = 0.1;
  back.depth = 5.0;
  front.half_w = front.half_h = 0.3;
  front.depth = 1.0;
  front.class_id = 2;
  s.objects = {back, front};
  auto r = render(s);
  ASSERT_EQ(r.annotations.size(), 1u);
  EXPECT_EQ(r.annotations[0].class_id, 2);
  EXPECT_EQ(r.visible_fraction[0], 0.0);
}

TEST(Render, RejectsBadScenes) {
  SceneSpec s;
  s.objects.push_back(SceneObject{});
  s.objects[0].depth = 20.0;
  EXPECT_THROW(render(s), InvalidArgument);
  s.objects[0].depth = 2.0;
  s.objects[0].half_w = 0.0;
  EXPECT_THROW(render(s), InvalidArgument);
}

TEST(RandomScene, ClassHistogramIsRoughlyUniform) {
  std::array<std::size_t, 3> hist{};
  for (std::uint64_t i = 0; i < 100; ++i)
    for (const auto& o : random_scene(32, 3, 21, i).objects) ++hist[static_cast<std::size_t>(o.class_id)];
  const double mean = (hist[0] + hist[1] + hist[2]) / 3.0;
  for (auto h : hist) EXPECT_NEAR(static_cast<double>(h), mean, 0.2 * mean);
}

TEST(Dataset, SameSeedGivesIdenticalBytes) {
  DatasetOptions o;
  o.count = 3;
  o.seed = 7;
  o.image_size = 32;
  auto a = scratch("gen_a"), b = scratch("gen_b");
  generate_dataset(a, o);
  generate_dataset(b, o);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, RoundTripKeepsAnnotationsAndSplits) {
  DatasetOptions o;
  o.count = 10;
  o.seed = 2;
  o.image_size = 40;
  auto dir = scratch("roundtrip");
  auto written = generate_dataset(dir, o);
  auto m = read_manifest(dir);
  EXPECT_EQ(m.train.size(), 8u);
  EXPECT_EQ(m.test.size(), 2u);
  DatasetLoader loader(m, "train");
  for (std::size_t i = 0; i < loader.size(); ++i) {
    auto s = loader[i];
    auto r = render(random_scene(40, 3, 2, i));
    ASSERT_EQ(s.annotations.size(), r.annotations.size());
    for (std::size_t k = 0; k < s.annotations.size(); ++k) {
      EXPECT_EQ(s.annotations[k].class_id, r.annotations[k].class_id);
      EXPECT_EQ(s.annotations[k].box.cx, r.annotations[k].box.cx);
      EXPECT_EQ(s.annotations[k].box.w, r.annotations[k].box.w);
    }
    for (std::size_t p = 0; p < s.depth.values.size(); ++p) EXPECT_NEAR(s.depth.values[p], r.depth.values[p], 5e-4);
  }
  fs::remove_all(dir);
}

TEST(Dataset, DepthPngIsMillimetres) {
  auto dir = scratch("depth_png");
  fs::create_directories(dir);
  write_png(dir / "d.png", Gray16Image{1, 1, {1234}});
  EXPECT_EQ(depth_from_png(read_png_gray16(dir / "d.png").pixels[0]), 1.234);
  EXPECT_EQ(depth_to_png(1.234), 1234);
  fs::remove_all(dir);
}

TEST(Dataset, ExtentMismatchAndMissingFiles) {
  auto dir = scratch("mismatch");
  fs::create_directories(dir);
  write_png(dir / "rgb.png", RgbImage{2, 2, std::vector<std::uint8_t>(12, 0)});
  write_png(dir / "d.png", Gray16Image{3, 2, std::vector<std::uint16_t>(6, 0)});
  std::ofstream(dir / "l.txt") << "";
  EXPECT_THROW(load_sample(dir, SampleRecord{"rgb.png", "d.png", "l.txt"}), DataError);
  EXPECT_THROW(load_sample(dir, SampleRecord{"nope.png", "d.png", "l.txt"}), DataError);
  EXPECT_THROW(read_manifest(dir), DataError);
  fs::remove_all(dir);
}

TEST(Dataset, EmptySplitAndShuffle) {
  Manifest m;
  DatasetLoader empty(m, "test");
  EXPECT_TRUE(empty.empty());
  auto a = shuffled_indices(20, 5), b = shuffled_indices(20, 5);
  EXPECT_EQ(a, b);
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a[i], i);
  EXPECT_THROW(DatasetLoader(m, "val"), InvalidArgument);
}

TEST(Annotations, ParseAndFormatRoundTrip) {
  std::vector<Annotation> a = {{1, Box{0.1, 0.2, 0.3, 0.4}}, {0, Box{1.0 / 3.0, 0.5, 0.25, 0.125}}};
  auto b = parse_annotations(format_annotations(a));
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].box.cx, 1.0 / 3.0);
  EXPECT_THROW(parse_annotations("1 0.5 0.5\n"), DataError);
  EXPECT_THROW(parse_annotations("1 0.5 0.5 -1 0.1\n"), DataError);
}

TEST(Augmentation, DihedralMovesBoxesWithPixels) {
  for (unsigned v = 0; v < 8; ++v) {
    SceneSpec s;
    s.width = s.height = 32;
    SceneObject o;
    o.shape = ShapeKind::Triangle;
    o.cx = 0.3;
    o.cy = 0.6;
    o.half_w = 0.15;
    o.half_h = 0.2;
    s.objects = {o};
    auto r = render(s);
    Sample sample;
    sample.rgb = Tensor({1, 32, 32, 3});
    sample.depth = r.depth;
    sample.annotations = r.annotations;
    Sample t = dihedral(sample, v);
    std::size_t x0 = 32, x1 = 0, y0 = 32, y1 = 0;
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        if (t.depth.at(y, x) < s.background_depth)
          x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    const Box& b = t.annotations[0].box;
    EXPECT_NEAR(b.left() * 32, x0, 1e-9) << v;
    EXPECT_NEAR(b.right() * 32, x1 + 1, 1e-9) << v;
    EXPECT_NEAR(b.top() * 32, y0, 1e-9) << v;
    EXPECT_NEAR(b.bottom() * 32, y1 + 1, 1e-9) << v;
  }
}
