// SPDX-License-Identifier: Apache-2.0
/**
 * @file   support.hpp
 * @brief  Shared helpers for the test binaries: random inputs, scalar-loop
 *         reference compositing, finite differences and tiny models.
 */
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cgan/cgan.hpp"

namespace testing_support {

using namespace cgan;

template <typename T = double>
LayerImage<T> random_layer(ImageShape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LayerImage<T> l(s);
  for (Eigen::Index i = 0; i < l.rgb.size(); ++i) l.rgb.data()[i] = static_cast<T>(u(rng));
  for (Eigen::Index i = 0; i < l.alpha.size(); ++i) l.alpha(i) = static_cast<T>(u(rng));
  return l;
}

template <typename T = double>
std::vector<LayerImage<T>> random_stack(int n, ImageShape s, std::mt19937_64& rng) {
  std::vector<LayerImage<T>> v;
  for (int t = 0; t < n; ++t) v.push_back(random_layer<T>(s, rng));
  return v;
}

template <typename T = double>
Composite<T> random_composite(ImageShape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Composite<T> c(s);
  for (Eigen::Index i = 0; i < c.rgb.size(); ++i) c.rgb.data()[i] = static_cast<T>(u(rng));
  return c;
}

/// Reference compositing written as plain nested loops over raw arrays.
/// out[b][y][x][c]: first layer over black, later layers "over" the result.
inline std::vector<double> reference_composite(const std::vector<LayerImage<double>>& layers) {
  const ImageShape s = layers.front().shape;
  std::vector<double> out(static_cast<std::size_t>(s.batch) * s.height * s.width * 3, 0.0);
  for (int b = 0; b < s.batch; ++b)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const long p = (static_cast<long>(b) * s.height + y) * s.width + x;
        for (int c = 0; c < 3; ++c) {
          double v = 0.0;
          for (std::size_t t = 0; t < layers.size(); ++t) {
            const double a = layers[t].alpha.data()[p];
            const double col = layers[t].rgb.data()[p * 3 + c];
            v = t == 0 ? col * a : v * (1.0 - a) + col * a;
          }
          out[p * 3 + c] = v;
        }
      }
  return out;
}

/// |a - b| relative to the larger magnitude, with an absolute floor.
inline double rel_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f with respect to *coord.
template <typename T>
double central_difference(const std::function<double()>& f, T& coord, double step) {
  const T saved = coord;
  coord = static_cast<T>(saved + step);
  const double up = f();
  coord = static_cast<T>(saved - step);
  const double down = f();
  coord = saved;
  return (up - down) / (2 * step);
}

/// Small architecture for fast gradient and training checks.
inline Architecture tiny_arch(int n = 2, bool encoders = false) {
  Architecture a;
  a.generators = n;
  a.latent_dim = 4;
  a.hidden_dim = 6;
  a.image_size = 16;
  a.gen_width = 2;
  a.disc_width = 2;
  a.encoders = encoders;
  return a;
}

inline TrainConfig tiny_config(Variant v, int n = 2) {
  TrainConfig c;
  c.variant = v;
  c.generators = n;
  c.batch_size = 4;
  c.latent_dim = 4;
  c.hidden_dim = 6;
  c.image_size = 16;
  c.gen_width = 2;
  c.disc_width = 2;
  c.iterations = 3;
  c.seed = 42;
  if (has_alpha_loss(v)) c.alpha = c.default_alpha();
  return c;
}

/// FNV-1a over the raw bytes of every tensor in a module.
template <typename M>
std::uint64_t hash_params(M& module) {
  std::uint64_t h = 1469598103934665603ULL;
  module.visit([&](const std::string&, auto& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < m.size() * sizeof(*m.data()); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  });
  return h;
}

} // namespace testing_support
