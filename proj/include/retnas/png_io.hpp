#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "retnas/common.hpp"

namespace retnas {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image {
  int w = 0, h = 0;
  std::vector<uint8_t> rgb;

  uint8_t& at(int y, int x, int c) {
    return rgb[static_cast<size_t>((y * w + x) * 3 + c)];
  }
  uint8_t at(int y, int x, int c) const {
    return rgb[static_cast<size_t>((y * w + x) * 3 + c)];
  }
};

inline void write_png_rgb8(const std::string& path, const Image& img) {
  RETNAS_CHECK(img.w > 0 && img.h > 0 &&
                   img.rgb.size() == static_cast<size_t>(img.w) * img.h * 3,
               "write_png: bad image buffer for ", path);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw std::runtime_error(cat("cannot open for write: ", path));

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    if (png != nullptr) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error(cat("png write failed: ", path));
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.h; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.rgb[static_cast<size_t>(y) *
                                                      img.w * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Decodes any PNG color type to RGB8 (palette expanded, 16-bit narrowed,
// gray promoted, alpha dropped). Throws ParseError for undecodable input.
inline Image read_png_rgb8(const std::string& path) {
  Image img;  // constructed before setjmp so a longjmp never skips cleanup
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (fp == nullptr) throw ParseError(path, "cannot open");

  uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw ParseError(path, "not a PNG file");
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    if (png != nullptr) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError(path, "corrupt PNG data");
  }

  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (w == 0 || h == 0 || png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError(path, "unsupported PNG layout");
  }

  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y)
    png_read_row(png, &img.rgb[static_cast<size_t>(y) * w * 3], nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace retnas
