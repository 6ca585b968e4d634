// SPDX-License-Identifier: Apache-2.0
/**
 * @file   image.hpp
 * @brief  Image batch types shared by the compositor, networks and metrics.
 *
 * Pixels are indexed p = (b * height + y) * width + x. Colour is stored as a
 * (3 x pixels) matrix, so an image batch has the same memory layout as a
 * three-channel FeatureMap.
 */
#pragma once

#include <string>

#include "tensor.hpp"

namespace cgan {

/// Extents shared by every image batch type.
struct ImageShape {
  int batch = 0;
  int height = 0;
  int width = 0;

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(batch) * height * width; }
  Eigen::Index pixels_per_item() const { return static_cast<Eigen::Index>(height) * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

inline std::string to_string(const ImageShape& s) {
  return std::to_string(s.batch) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// RGBA layer batch C(t): non-premultiplied colour plus opacity.
template <typename T>
struct LayerImage {
  ImageShape shape;
  Matrix<T> rgb;       // 3 x pixels
  RowVector<T> alpha;  // 1 x pixels

  LayerImage() = default;
  explicit LayerImage(ImageShape s)
      : shape(s), rgb(Matrix<T>::Zero(3, s.pixels())), alpha(RowVector<T>::Zero(s.pixels())) {}

  /// Single item `b` as a batch of one.
  LayerImage item(int b) const {
    LayerImage out({1, shape.height, shape.width});
    const auto n = shape.pixels_per_item();
    out.rgb = rgb.middleCols(b * n, n);
    out.alpha = alpha.segment(b * n, n);
    return out;
  }
};

/// Opaque RGB batch: intermediate O(t), final O(n), or real data.
template <typename T>
struct Composite {
  ImageShape shape;
  Matrix<T> rgb;  // 3 x pixels

  Composite() = default;
  explicit Composite(ImageShape s) : shape(s), rgb(Matrix<T>::Zero(3, s.pixels())) {}
  Composite(ImageShape s, Matrix<T> values) : shape(s), rgb(std::move(values)) {
    if (rgb.rows() != 3 || rgb.cols() != shape.pixels())
      throw DimensionError("composite: rgb matrix does not match shape " + to_string(shape));
  }

  Composite item(int b) const {
    const auto n = shape.pixels_per_item();
    return Composite({1, shape.height, shape.width}, rgb.middleCols(b * n, n));
  }

  FeatureMap<T> as_feature_map() const { return FeatureMap<T>(rgb, shape.batch, shape.height, shape.width); }
};

/// Gathers the listed items of `source` into a new batch.
template <typename T, typename Indices>
Composite<T> gather(const Composite<T>& source, const Indices& indices) {
  const auto n = source.shape.pixels_per_item();
  Composite<T> out({static_cast<int>(std::size(indices)), source.shape.height, source.shape.width});
  int b = 0;
  for (auto i : indices) out.rgb.middleCols(b++ * n, n) = source.rgb.middleCols(static_cast<Eigen::Index>(i) * n, n);
  return out;
}

/// Concatenates batches of equal height/width.
template <typename T>
Composite<T> concat(const std::vector<Composite<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat: no images");
  ImageShape s{0, parts.front().shape.height, parts.front().shape.width};
  for (const auto& p : parts) {
    if (p.shape.height != s.height || p.shape.width != s.width)
      throw DimensionError("concat: image sizes differ");
    s.batch += p.shape.batch;
  }
  Composite<T> out(s);
  Eigen::Index col = 0;
  for (const auto& p : parts) {
    out.rgb.middleCols(col, p.rgb.cols()) = p.rgb;
    col += p.rgb.cols();
  }
  return out;
}

template <typename U, typename T>
Composite<U> cast(const Composite<T>& c) {
  return Composite<U>(c.shape, c.rgb.template cast<U>());
}

template <typename U, typename T>
LayerImage<U> cast(const LayerImage<T>& l) {
  LayerImage<U> out(l.shape);
  out.rgb = l.rgb.template cast<U>();
  out.alpha = l.alpha.template cast<U>();
  return out;
}

} // namespace cgan
