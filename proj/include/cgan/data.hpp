// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data.hpp
 * @brief  Training data: image directories resized with area averaging, and
 *         synthetic layered scenes with ground-truth RGBA layers.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "compositor.hpp"
#include "png_io.hpp"

namespace cgan {

namespace detail {

/// Area-averaging weights mapping `in` samples onto `out` samples: row o
/// holds the overlap of output cell o with each input cell, normalized.
inline Matrix<double> area_weights(int in, int out) {
  Matrix<double> w = Matrix<double>::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
      const double overlap = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
      if (overlap > 0) w(o, i) = overlap;
    }
    w.row(o) /= w.row(o).sum();
  }
  return w;
}

} // namespace detail

/// Antialiased resize of each channel by exact area coverage.
inline std::vector<Matrix<double>> resize_area(const std::vector<Matrix<double>>& channels, int out_h, int out_w) {
  if (channels.empty()) return {};
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_area: target size must be positive");
  const auto wy = detail::area_weights(static_cast<int>(channels.front().rows()), out_h);
  const auto wx = detail::area_weights(static_cast<int>(channels.front().cols()), out_w);
  std::vector<Matrix<double>> out;
  out.reserve(channels.size());
  for (const auto& c : channels) out.push_back(wy * c * wx.transpose());
  return out;
}

/// RGBA image flattened over a white background and resized to size x size.
template <typename T>
Composite<T> prepare_image(const Image8& img, int size) {
  std::vector<Matrix<double>> ch(3, Matrix<double>(img.height, img.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double a = img.channels == 4 ? from_byte(img.at(x, y, 3)) : 1.0;
      for (int c = 0; c < 3; ++c) ch[c](y, x) = from_byte(img.at(x, y, c)) * a + (1 - a);
    }
  const auto r = resize_area(ch, size, size);
  Composite<T> out({1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.rgb(c, static_cast<Eigen::Index>(y) * size + x) = static_cast<T>(r[c](y, x));
  return out;
}

// ---------------------------------------------------------------------------

enum class ShapeKind { circle, triangle, rectangle };

/// Random scenes: an opaque background layer followed by shape layers.
struct SyntheticRecipe {
  int layers = 3;  // k, including the background
  int resolution = 32;
  std::vector<std::array<double, 3>> background_palette = {
      {0.85, 0.85, 0.80}, {0.20, 0.30, 0.45}, {0.35, 0.55, 0.35}, {0.75, 0.60, 0.40}};
  std::vector<ShapeKind> shapes = {ShapeKind::circle, ShapeKind::triangle, ShapeKind::rectangle};
  double min_scale = 0.15;  // shape half-extent as a fraction of the resolution
  double max_scale = 0.35;
  std::uint64_t seed = 1;

  void validate() const {
    if (layers < 1) throw ArgumentError("synthetic recipe: need at least one layer");
    if (resolution < 4) throw ArgumentError("synthetic recipe: resolution too small");
    if (background_palette.empty() || (layers > 1 && shapes.empty()))
      throw ArgumentError("synthetic recipe: empty palette or shape vocabulary");
    if (!(min_scale > 0 && min_scale <= max_scale)) throw ArgumentError("synthetic recipe: invalid scale range");
  }
};

template <typename T>
struct SyntheticSet {
  Composite<T> images;               // count items
  std::vector<LayerImage<T>> layers; // k layer batches, background first
};

namespace detail {

inline bool inside_shape(ShapeKind kind, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  switch (kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::rectangle: return std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
    case ShapeKind::triangle: {
      // Upward isosceles triangle inscribed in the [-r, r] box.
      if (dy < -r || dy > r) return false;
      const double half_width = r * (dy + r) / (2 * r);
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

} // namespace detail

template <typename T>
SyntheticSet<T> make_synthetic(const SyntheticRecipe& recipe, int count) {
  recipe.validate();
  if (count < 1) throw ArgumentError("make_synthetic: count must be at least 1");
  std::mt19937_64 rng(recipe.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int r = recipe.resolution;
  const ImageShape shape{count, r, r};
  SyntheticSet<T> set;
  set.layers.assign(recipe.layers, LayerImage<T>(shape));
  const auto per = shape.pixels_per_item();
  for (int b = 0; b < count; ++b) {
    const auto& bg = recipe.background_palette[static_cast<std::size_t>(unit(rng) * recipe.background_palette.size()) %
                                               recipe.background_palette.size()];
    for (Eigen::Index p = 0; p < per; ++p) {
      for (int c = 0; c < 3; ++c) set.layers[0].rgb(c, b * per + p) = static_cast<T>(bg[c]);
      set.layers[0].alpha(b * per + p) = T(1);
    }
    for (int k = 1; k < recipe.layers; ++k) {
      const auto kind = recipe.shapes[static_cast<std::size_t>(unit(rng) * recipe.shapes.size()) % recipe.shapes.size()];
      const double scale = recipe.min_scale + (recipe.max_scale - recipe.min_scale) * unit(rng);
      const double rad = scale * r;
      const double cx = (0.2 + 0.6 * unit(rng)) * r, cy = (0.2 + 0.6 * unit(rng)) * r;
      const std::array<double, 3> color{unit(rng), unit(rng), unit(rng)};
      auto& layer = set.layers[k];
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
          const auto p = b * per + static_cast<Eigen::Index>(y) * r + x;
          for (int c = 0; c < 3; ++c) layer.rgb(c, p) = static_cast<T>(color[c]);
          layer.alpha(p) = detail::inside_shape(kind, x + 0.5, y + 0.5, cx, cy, rad) ? T(1) : T(0);
        }
    }
  }
  set.images = compose_stack(set.layers).final();
  return set;
}

// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::variant<std::filesystem::path, SyntheticRecipe> source;
  int resolution = 64;
  int synthetic_count = 2000;
  std::uint64_t shuffle_seed = 0;
};

/// Sorted list of PNG files in a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Every image of a directory (sorted by name), prepared at `resolution`.
template <typename T>
Composite<T> load_image_dir(const std::filesystem::path& dir, int resolution) {
  const auto files = list_pngs(dir);
  if (files.empty()) throw ArgumentError("dataset directory '" + dir.string() + "' contains no PNG images");
  std::vector<Composite<T>> items;
  items.reserve(files.size());
  for (const auto& f : files) items.push_back(prepare_image<T>(read_png(f), resolution));
  return concat(items);
}

/// Loads and shuffles a dataset; ordering is a function of the seed only.
template <typename T>
Composite<T> load_dataset(const DatasetSpec& spec) {
  if (spec.resolution < 1) throw ArgumentError("load_dataset: resolution must be positive");
  Composite<T> all;
  if (const auto* dir = std::get_if<std::filesystem::path>(&spec.source)) {
    all = load_image_dir<T>(*dir, spec.resolution);
  } else {
    auto recipe = std::get<SyntheticRecipe>(spec.source);
    recipe.resolution = spec.resolution;
    all = make_synthetic<T>(recipe, spec.synthetic_count).images;
  }
  std::vector<int> order(all.shape.batch);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.shuffle_seed);
  for (int i = all.shape.batch - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  return gather(all, order);
}

} // namespace cgan
