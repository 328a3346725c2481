#include "mvccl/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mvccl/errors.hpp"

namespace mvccl {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
  auto* error = static_cast<std::string*>(png_get_error_ptr(png));
  if (error) *error = message;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image '" + path + "'");

  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed for '" + path + "'");
  }

  Image image;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  bool colour = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode '" + path + "': " + error);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color_type = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // host order; only little-endian hosts are supported
    png_read_update_info(png, info);
    image = Image(png_get_image_height(png, info), png_get_image_width(png, info));
    const std::size_t bytes = depth == 16 ? 2 : 1;
    buffer.resize(image.height * image.width * bytes);
    rows.resize(image.height);
    for (std::size_t r = 0; r < image.height; ++r) rows[r] = buffer.data() + r * image.width * bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    if (depth == 16) {
      const auto* px = reinterpret_cast<const std::uint16_t*>(buffer.data());
      for (std::size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = static_cast<float>(px[i] / 65535.0);
    } else {
      for (std::size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = static_cast<float>(buffer[i] / 255.0);
    }
  } else {
    colour = true;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (colour) throw DataError("'" + path + "' is not a grayscale PNG");
  return image;
}

void write_png16(const std::string& path, const Image& image) {
  if (image.empty()) throw DataError("refusing to write empty image to '" + path + "'");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image '" + path + "'");

  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed for '" + path + "'");
  }

  std::vector<std::uint16_t> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image.pixels[i]), 0.0, 1.0);
    buffer[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t r = 0; r < image.height; ++r) {
    rows[r] = reinterpret_cast<png_bytep>(buffer.data() + r * image.width);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode '" + path + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mvccl
