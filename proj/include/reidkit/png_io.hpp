#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "reidkit/array.hpp"
#include "reidkit/error.hpp"

namespace reidkit::png {

namespace detail {
inline void write(const std::string& path, int width, int height, png_uint_32 format,
                  const std::vector<std::uint8_t>& pixels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, "png write failed for " + path + ": " + img.message);
  }
}

inline std::vector<std::uint8_t> read(const std::string& path, png_uint_32 format, int& width,
                                      int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorCode::kIo, "png open failed for " + path + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::kIo, "png decode failed for " + path + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return buf;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}
}  // namespace detail

/// RGB image with values in [0,1], quantised to 8 bits.
inline void write_rgb(const std::string& path, const Image& image) {
  require(image.channels == 3, ErrorCode::kShape, "write_rgb needs 3 channels");
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = detail::to_byte(image.data[i]);
  detail::write(path, image.width, image.height, PNG_FORMAT_RGB, px);
}

inline Image read_rgb(const std::string& path) {
  int w = 0, h = 0;
  auto px = detail::read(path, PNG_FORMAT_RGB, w, h);
  Image out(h, w, 3);
  for (std::size_t i = 0; i < px.size(); ++i) out.data[i] = px[i] / 255.0f;
  return out;
}

/// Single-channel 8-bit map (parsing labels).
inline void write_gray(const std::string& path, const Array2<int>& values) {
  std::vector<std::uint8_t> px(values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    require(values.data[i] >= 0 && values.data[i] <= 255, ErrorCode::kShape,
            "gray value out of 8-bit range");
    px[i] = static_cast<std::uint8_t>(values.data[i]);
  }
  detail::write(path, values.width, values.height, PNG_FORMAT_GRAY, px);
}

inline Array2<int> read_gray(const std::string& path) {
  int w = 0, h = 0;
  auto px = detail::read(path, PNG_FORMAT_GRAY, w, h);
  Array2<int> out(h, w);
  for (std::size_t i = 0; i < px.size(); ++i) out.data[i] = px[i];
  return out;
}

}  // namespace reidkit::png
