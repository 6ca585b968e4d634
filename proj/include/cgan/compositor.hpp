// SPDX-License-Identifier: Apache-2.0
/**
 * @file   compositor.hpp
 * @brief  Alpha blending of generator layers into opaque composites, with
 *         the matching vector-Jacobian product for training.
 *
 * Colours are non-premultiplied. The first layer is blended onto an implicit
 * black background; every later layer covers the running composite:
 *
 *   O(1) = C(1).rgb * C(1).a
 *   O(t) = O(t-1) * (1 - C(t).a) + C(t).rgb * C(t).a
 *
 * No clamping happens here; outputs stay in [0,1] because each step is a
 * convex combination.
 */
#pragma once

#include <span>
#include <vector>

#include "image.hpp"

namespace cgan {

namespace detail {

template <typename Derived>
void require_unit_range(const Eigen::MatrixBase<Derived>& m, const char* what) {
  // Written so that NaN fails the check as well.
  if (!(m.array() >= 0 && m.array() <= 1).all())
    throw DomainError(std::string(what) + ": values must lie in [0,1]");
}

inline void require_same_shape(const ImageShape& a, const ImageShape& b, const char* what) {
  if (!(a == b))
    throw DimensionError(std::string(what) + ": shape " + to_string(a) + " does not match " + to_string(b));
}

template <typename T>
void require_valid(const LayerImage<T>& l, const char* what) {
  if (l.rgb.rows() != 3 || l.rgb.cols() != l.shape.pixels() || l.alpha.cols() != l.shape.pixels())
    throw DimensionError(std::string(what) + ": rgb and alpha extents disagree");
  require_unit_range(l.rgb, what);
  require_unit_range(l.alpha, what);
}

} // namespace detail

/// Covers a translucent `prev` with `next`; the result is opaque (alpha = 1).
template <typename T>
LayerImage<T> blend_translucent(const LayerImage<T>& prev, const LayerImage<T>& next) {
  detail::require_valid(prev, "blend_translucent(prev)");
  detail::require_valid(next, "blend_translucent(next)");
  detail::require_same_shape(prev.shape, next.shape, "blend_translucent");
  LayerImage<T> out(prev.shape);
  const RowVector<T> keep = (prev.alpha.array() * (1 - next.alpha.array())).matrix();
  out.rgb = prev.rgb.array().rowwise() * keep.array();
  out.rgb.array() += next.rgb.array().rowwise() * next.alpha.array();
  out.alpha.setOnes();
  return out;
}

template <typename T>
Composite<T> compose_first(const LayerImage<T>& first) {
  detail::require_valid(first, "compose_first");
  Composite<T> out(first.shape);
  out.rgb = first.rgb.array().rowwise() * first.alpha.array();
  return out;
}

template <typename T>
Composite<T> blend_step(const Composite<T>& prev, const LayerImage<T>& next) {
  detail::require_valid(next, "blend_step(next)");
  detail::require_same_shape(prev.shape, next.shape, "blend_step");
  detail::require_unit_range(prev.rgb, "blend_step(prev)");
  Composite<T> out(prev.shape);
  out.rgb = prev.rgb.array().rowwise() * (1 - next.alpha.array());
  out.rgb.array() += next.rgb.array().rowwise() * next.alpha.array();
  return out;
}

/// All partial composites O(1)..O(n); the last one is the final image.
template <typename T>
struct CompositeStack {
  std::vector<Composite<T>> intermediates;

  const Composite<T>& final() const { return intermediates.back(); }
  std::size_t size() const { return intermediates.size(); }
};

template <typename T>
CompositeStack<T> compose_stack(std::span<const LayerImage<T>> layers) {
  if (layers.empty()) throw ArgumentError("compose_stack: at least one layer is required");
  CompositeStack<T> stack;
  stack.intermediates.reserve(layers.size());
  stack.intermediates.push_back(compose_first(layers[0]));
  for (std::size_t t = 1; t < layers.size(); ++t)
    stack.intermediates.push_back(blend_step(stack.intermediates.back(), layers[t]));
  return stack;
}

template <typename T>
CompositeStack<T> compose_stack(const std::vector<LayerImage<T>>& layers) {
  return compose_stack(std::span<const LayerImage<T>>(layers));
}

/// Gradient of a scalar with respect to one layer's colour and opacity.
template <typename T>
struct LayerGradient {
  Matrix<T> rgb;
  RowVector<T> alpha;
};

/**
 * Back-propagates d(loss)/d(final composite) through the blend chain.
 *
 * `stack` must be the result of compose_stack(layers).
 */
template <typename T>
std::vector<LayerGradient<T>> compose_stack_backward(std::span<const LayerImage<T>> layers,
                                                     const CompositeStack<T>& stack,
                                                     const Matrix<T>& d_final) {
  const std::size_t n = layers.size();
  if (n == 0 || stack.size() != n) throw ArgumentError("compose_stack_backward: stack does not match layers");
  if (d_final.rows() != 3 || d_final.cols() != layers[0].shape.pixels())
    throw DimensionError("compose_stack_backward: gradient shape mismatch");

  std::vector<LayerGradient<T>> grads(n);
  Matrix<T> d_out = d_final;
  for (std::size_t t = n; t-- > 0;) {
    const auto& layer = layers[t];
    auto& g = grads[t];
    g.rgb = d_out.array().rowwise() * layer.alpha.array();
    if (t == 0) {
      g.alpha = (d_out.array() * layer.rgb.array()).colwise().sum();
    } else {
      const auto& prev = stack.intermediates[t - 1].rgb;
      g.alpha = (d_out.array() * (layer.rgb - prev).array()).colwise().sum();
      d_out = (d_out.array().rowwise() * (1 - layer.alpha.array())).eval();
    }
  }
  return grads;
}

template <typename T>
std::vector<LayerGradient<T>> compose_stack_backward(const std::vector<LayerImage<T>>& layers,
                                                     const CompositeStack<T>& stack,
                                                     const Matrix<T>& d_final) {
  return compose_stack_backward(std::span<const LayerImage<T>>(layers), stack, d_final);
}

} // namespace cgan
