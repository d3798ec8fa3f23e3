#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace bit {

namespace detail {

inline void write_png(const std::filesystem::path& path, int width, int height, int color_type,
                      int channels, std::span<const std::uint8_t> interleaved) {
  if (interleaved.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("write_png: buffer size does not match image shape");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(interleaved.data() +
                                             static_cast<std::size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace detail

/// Planar (3, H, W) bytes to an RGB png.
inline void write_png_rgb_planar(const std::filesystem::path& path, int width, int height,
                                 std::span<const std::uint8_t> planar) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  if (planar.size() != 3 * plane) throw std::invalid_argument("write_png_rgb_planar: bad size");
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb[3 * i + c] = planar[c * plane + i];
  detail::write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, rgb);
}

inline void write_png_rgb(const std::filesystem::path& path, int width, int height,
                          std::span<const std::uint8_t> interleaved) {
  detail::write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, interleaved);
}

inline void write_png_gray(const std::filesystem::path& path, int width, int height,
                           std::span<const std::uint8_t> gray) {
  detail::write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 1, gray);
}

}  // namespace bit
