#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dhi {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples
};

struct Gray16Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> pixels;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const Gray16Image& image);
// Errors (missing file, wrong bit depth or colour type) raise DataError.
RgbImage read_png_rgb8(const std::filesystem::path& path);
Gray16Image read_png_gray16(const std::filesystem::path& path);

}  // namespace dhi
