// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Matrix aliases and the channel-fastest feature map used by all
 *         network layers.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace cgan {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/**
 * A batch of feature maps stored as a (channels x batch*height*width) matrix.
 *
 * Column p = (b * height + y) * width + x holds every channel of one pixel,
 * so each batch item occupies one contiguous block of memory and flattening
 * an item to a feature vector is a reinterpretation, not a copy.
 */
template <typename T>
struct FeatureMap {
  Matrix<T> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_, int height_, int width_)
      : data(Matrix<T>::Zero(channels, static_cast<Eigen::Index>(batch_) * height_ * width_)),
        batch(batch_), height(height_), width(width_) {}
  FeatureMap(Matrix<T> values, int batch_, int height_, int width_)
      : data(std::move(values)), batch(batch_), height(height_), width(width_) {
    if (data.cols() != static_cast<Eigen::Index>(batch) * height * width)
      throw DimensionError("feature map: column count does not match batch*height*width");
  }

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index pixels() const { return data.cols(); }

  /// Per-item flattened view: (channels*height*width) x batch.
  Matrix<T> flatten() const {
    return Eigen::Map<const Matrix<T>>(data.data(), data.rows() * height * width, batch);
  }
};

/// Inverse of FeatureMap::flatten.
template <typename T>
FeatureMap<T> unflatten(const Matrix<T>& flat, int channels, int height, int width) {
  const Eigen::Index per_item = static_cast<Eigen::Index>(channels) * height * width;
  if (flat.rows() != per_item)
    throw DimensionError("unflatten: row count does not match channels*height*width");
  const int batch = static_cast<int>(flat.cols());
  Matrix<T> data = Eigen::Map<const Matrix<T>>(flat.data(), channels,
                                               static_cast<Eigen::Index>(batch) * height * width);
  return FeatureMap<T>(std::move(data), batch, height, width);
}

enum class Mode { train, eval };

/// Every parameter/buffer of a module is a named matrix; column vectors are n x 1.
template <typename T>
struct NamedMatrix {
  std::string name;
  Matrix<T>* value;
};

template <typename Module>
auto parameters(Module& module) {
  using T = typename Module::Scalar;
  std::vector<NamedMatrix<T>> out;
  module.visit([&](std::string_view name, Matrix<T>& m) { out.push_back({std::string(name), &m}); });
  return out;
}

template <typename Module>
auto buffers(Module& module) {
  using T = typename Module::Scalar;
  std::vector<NamedMatrix<T>> out;
  module.visit_buffers([&](std::string_view name, Matrix<T>& m) { out.push_back({std::string(name), &m}); });
  return out;
}

/// A copy of `module` with every parameter zeroed; used as gradient and
/// optimizer-moment storage with the same layout as the parameters.
template <typename Module>
Module zeros_like(const Module& module) {
  Module twin = module;
  twin.visit([](std::string_view, auto& m) { m.setZero(); });
  return twin;
}

template <typename Module>
void set_zero(Module& module) {
  module.visit([](std::string_view, auto& m) { m.setZero(); });
}

/// Concatenates `prefix` and `name` with a dot; used when nesting visitors.
inline std::string scoped(std::string_view prefix, std::string_view name) {
  std::string s(prefix);
  s += '.';
  s += name;
  return s;
}

} // namespace cgan
