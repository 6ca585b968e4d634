// SPDX-License-Identifier: Apache-2.0
/**
 * @file   png_io.hpp
 * @brief  8-bit PNG encode/decode (libpng simplified API), [0,1] <-> [0,255]
 *         conversion and atomic file writes.
 */
#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "image.hpp"

namespace cgan {

/// Interleaved 8-bit pixels, row-major, 3 (RGB) or 4 (RGBA) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 4;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
inline double from_byte(std::uint8_t b) { return b / 255.0; }

/// Writes `bytes` to a temporary sibling and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string encode_png(const Image8& img) {
  if (img.channels != 3 && img.channels != 4) throw ArgumentError("encode_png: expected 3 or 4 channels");
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pi.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pi.message);
  out.resize(size);
  return out;
}

/// Decodes any PNG to 8-bit RGBA.
inline Image8 decode_png(const std::string& bytes, const std::string& name = "<memory>") {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw IoError("cannot decode '" + name + "': " + pi.message);
  pi.format = PNG_FORMAT_RGBA;
  Image8 img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.channels = 4;
  img.pixels.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("cannot decode '" + name + "': " + pi.message);
  }
  return img;
}

inline Image8 read_png(const std::filesystem::path& path) { return decode_png(read_file(path), path.string()); }

inline void write_png(const std::filesystem::path& path, const Image8& img) { write_file_atomic(path, encode_png(img)); }

// Conversions between batch items and 8-bit images.

template <typename T>
Image8 to_image8(const Composite<T>& c, int item = 0) {
  Image8 img{c.shape.width, c.shape.height, 3, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  const auto base = static_cast<Eigen::Index>(item) * c.shape.pixels_per_item();
  for (Eigen::Index p = 0; p < c.shape.pixels_per_item(); ++p)
    for (int ch = 0; ch < 3; ++ch) img.pixels[p * 3 + ch] = to_byte(static_cast<double>(c.rgb(ch, base + p)));
  return img;
}

template <typename T>
Image8 to_image8(const LayerImage<T>& l, int item = 0) {
  Image8 img{l.shape.width, l.shape.height, 4, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 4);
  const auto base = static_cast<Eigen::Index>(item) * l.shape.pixels_per_item();
  for (Eigen::Index p = 0; p < l.shape.pixels_per_item(); ++p) {
    for (int ch = 0; ch < 3; ++ch) img.pixels[p * 4 + ch] = to_byte(static_cast<double>(l.rgb(ch, base + p)));
    img.pixels[p * 4 + 3] = to_byte(static_cast<double>(l.alpha(base + p)));
  }
  return img;
}

/// RGBA image as a one-item layer.
template <typename T>
LayerImage<T> to_layer(const Image8& img) {
  LayerImage<T> l({1, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto p = static_cast<Eigen::Index>(y) * img.width + x;
      for (int ch = 0; ch < 3; ++ch) l.rgb(ch, p) = static_cast<T>(from_byte(img.at(x, y, ch)));
      l.alpha(p) = img.channels == 4 ? static_cast<T>(from_byte(img.at(x, y, 3))) : T(1);
    }
  return l;
}

/// Colour channels of an image, ignoring alpha.
template <typename T>
Composite<T> to_composite(const Image8& img) {
  Composite<T> c({1, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch)
        c.rgb(ch, static_cast<Eigen::Index>(y) * img.width + x) = static_cast<T>(from_byte(img.at(x, y, ch)));
  return c;
}

} // namespace cgan
