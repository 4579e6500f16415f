#include "dhi/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "dhi/error.hpp"

namespace dhi {
namespace {

struct File {
  std::FILE* f = nullptr;
  ~File() {
    if (f) std::fclose(f);
  }
};

[[noreturn]] void on_png_error(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

void write_rows(const std::filesystem::path& path, std::size_t width, std::size_t height, int bit_depth,
                int color_type, const std::vector<png_bytep>& rows) {
  File file{std::fopen(path.c_str(), "wb")};
  if (!file.f) throw DataError("cannot write " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("writing " + path.string() + ": " + message);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows are host (little-endian) order
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <class Pixel>
std::vector<Pixel> read_rows(const std::filesystem::path& path, int want_depth, int want_type, std::size_t& width,
                             std::size_t& height) {
  File file{std::fopen(path.c_str(), "rb")};
  if (!file.f) throw DataError("cannot read " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + " is not a PNG file");
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  std::vector<Pixel> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("reading " + path.string() + ": " + message);
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth != want_depth || type != want_type) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": unexpected bit depth " + std::to_string(depth) + " / colour type " +
                    std::to_string(type));
  }
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  if (depth == 16) png_set_swap(png);
  const std::size_t per_row = png_get_rowbytes(png, info) / sizeof(Pixel);
  pixels.resize(per_row * height);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = reinterpret_cast<png_bytep>(pixels.data() + y * per_row);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
    throw InvalidArgument("write_png: RGB buffer does not match its extents");
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * 3);
  write_rows(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_png(const std::filesystem::path& path, const Gray16Image& image) {
  if (image.pixels.size() != image.width * image.height || image.width == 0 || image.height == 0) {
    throw InvalidArgument("write_png: depth buffer does not match its extents");
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(image.pixels.data() + y * image.width));
  write_rows(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

RgbImage read_png_rgb8(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = read_rows<std::uint8_t>(path, 8, PNG_COLOR_TYPE_RGB, img.width, img.height);
  return img;
}

Gray16Image read_png_gray16(const std::filesystem::path& path) {
  Gray16Image img;
  img.pixels = read_rows<std::uint16_t>(path, 16, PNG_COLOR_TYPE_GRAY, img.width, img.height);
  return img;
}

}  // namespace dhi
