// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Adversarial, variational and alpha-budget objectives with their
 *         gradients.
 *
 * Log-likelihood terms are returned with their sign (reconstruction terms
 * are <= 0); vae_loss combines them into the quantity to minimize.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "image.hpp"

namespace cgan {

/// Probabilities are clamped to [eps, 1 - eps] inside every logarithm.
inline constexpr double kProbEpsilon = 1e-7;

namespace detail {

template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, static_cast<T>(kProbEpsilon), static_cast<T>(1 - kProbEpsilon));
}

template <typename T>
bool inside_clamp(T p) {
  return p > static_cast<T>(kProbEpsilon) && p < static_cast<T>(1 - kProbEpsilon);
}

template <typename T>
void require_probabilities(const RowVector<T>& p, const char* what) {
  if (!p.allFinite()) throw NonFiniteError(std::string(what) + ": non-finite probability");
  if (p.size() > 0 && (!(p.minCoeff() >= 0) || !(p.maxCoeff() <= 1)))
    throw DomainError(std::string(what) + ": probabilities must lie in [0,1]");
}

} // namespace detail

/// sum_i log D(x_i) + log(1 - D(G(z_i))). The discriminator ascends it.
template <typename T>
T gan_loss(const RowVector<T>& d_real, const RowVector<T>& d_fake) {
  if (d_real.size() != d_fake.size()) throw DimensionError("gan_loss: real and fake batches differ in size");
  detail::require_probabilities(d_real, "gan_loss");
  detail::require_probabilities(d_fake, "gan_loss");
  T sum = 0;
  for (Eigen::Index i = 0; i < d_real.size(); ++i)
    sum += std::log(detail::clamp_prob(d_real(i))) + std::log(1 - detail::clamp_prob(d_fake(i)));
  return sum;
}

template <typename T>
struct GanLossGrad {
  RowVector<T> d_real;
  RowVector<T> d_fake;
};

/// Partial derivatives of gan_loss; zero where the epsilon clamp is active.
template <typename T>
GanLossGrad<T> gan_loss_grad(const RowVector<T>& d_real, const RowVector<T>& d_fake) {
  GanLossGrad<T> g{RowVector<T>(d_real.size()), RowVector<T>(d_fake.size())};
  for (Eigen::Index i = 0; i < d_real.size(); ++i)
    g.d_real(i) = detail::inside_clamp(d_real(i)) ? 1 / d_real(i) : T(0);
  for (Eigen::Index i = 0; i < d_fake.size(); ++i)
    g.d_fake(i) = detail::inside_clamp(d_fake(i)) ? -1 / (1 - d_fake(i)) : T(0);
  return g;
}

/**
 * Generator's share of the adversarial objective (minimized).
 *
 * Default: sum_i log(1 - D(G(z_i))), the literal minimax form. With
 * `non_saturating`: -sum_i log D(G(z_i)).
 */
template <typename T>
T generator_adversarial_loss(const RowVector<T>& d_fake, bool non_saturating) {
  detail::require_probabilities(d_fake, "generator_adversarial_loss");
  T sum = 0;
  for (Eigen::Index i = 0; i < d_fake.size(); ++i) {
    const T p = detail::clamp_prob(d_fake(i));
    sum += non_saturating ? -std::log(p) : std::log(1 - p);
  }
  return sum;
}

template <typename T>
RowVector<T> generator_adversarial_grad(const RowVector<T>& d_fake, bool non_saturating) {
  RowVector<T> g(d_fake.size());
  for (Eigen::Index i = 0; i < d_fake.size(); ++i) {
    const T p = d_fake(i);
    if (!detail::inside_clamp(p)) g(i) = 0;
    else g(i) = non_saturating ? -1 / p : -1 / (1 - p);
  }
  return g;
}

/// KL(q(z|x) || N(0, I)) summed over every entry of mu/logvar.
template <typename T>
T kl_term(const Matrix<T>& mu, const Matrix<T>& logvar) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols())
    throw DimensionError("kl_term: mu and logvar differ in shape");
  return T(0.5) * (mu.array().square() + logvar.array().exp() - 1 - logvar.array()).sum();
}

/// Per-column KL, one entry per batch item.
template <typename T>
RowVector<T> kl_per_item(const Matrix<T>& mu, const Matrix<T>& logvar) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols())
    throw DimensionError("kl_per_item: mu and logvar differ in shape");
  return T(0.5) * (mu.array().square() + logvar.array().exp() - 1 - logvar.array()).colwise().sum();
}

template <typename T>
struct KlGrad {
  Matrix<T> d_mu;
  Matrix<T> d_logvar;
};

template <typename T>
KlGrad<T> kl_term_grad(const Matrix<T>& mu, const Matrix<T>& logvar) {
  return {mu, T(0.5) * (logvar.array().exp() - 1).matrix()};
}

/// Unit-variance Gaussian log-likelihood of x around xhat, constants dropped.
template <typename T>
T recon_pixel(const Matrix<T>& x, const Matrix<T>& xhat) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols()) throw DimensionError("recon_pixel: shape mismatch");
  return T(-0.5) * (x - xhat).squaredNorm();
}

template <typename T>
T recon_pixel(const Composite<T>& x, const Composite<T>& xhat) {
  if (!(x.shape == xhat.shape)) throw DimensionError("recon_pixel: image shapes differ");
  return recon_pixel(x.rgb, xhat.rgb);
}

/// d recon_pixel / d xhat.
template <typename T>
Matrix<T> recon_pixel_grad(const Matrix<T>& x, const Matrix<T>& xhat) {
  return x - xhat;
}

/// log N(feat_x | feat_xhat, I), constants dropped.
template <typename T>
T recon_feature(const Matrix<T>& feat_x, const Matrix<T>& feat_xhat) {
  if (feat_x.rows() != feat_xhat.rows() || feat_x.cols() != feat_xhat.cols())
    throw DimensionError("recon_feature: feature dimensions differ");
  return T(-0.5) * (feat_x - feat_xhat).squaredNorm();
}

template <typename T>
Matrix<T> recon_feature_grad(const Matrix<T>& feat_x, const Matrix<T>& feat_xhat) {
  return feat_x - feat_xhat;
}

template <typename T>
struct VaeTerms {
  T kl = 0;
  T recon_pixel = 0;
  T recon_feature = 0;
};

/// sum_i kl_i - recon_pixel_i - recon_feature_i (minimized).
template <typename T>
T vae_loss(std::span<const VaeTerms<T>> items) {
  T sum = 0;
  for (const auto& it : items) sum += it.kl - it.recon_pixel - it.recon_feature;
  return sum;
}

template <typename T>
T vae_loss(const std::vector<VaeTerms<T>>& items) {
  return vae_loss(std::span<const VaeTerms<T>>(items));
}

struct AlphaLossConfig {
  double budget = 0;  // u, in summed-alpha (pixel) units
  double weight = 1;

  void validate(Eigen::Index pixels_per_layer) const {
    if (!(budget >= 0)) throw ArgumentError("alpha loss: budget must be nonnegative");
    if (budget > static_cast<double>(pixels_per_layer))
      throw ArgumentError("alpha loss: budget exceeds the pixel count of a layer");
    if (!(weight >= 0)) throw ArgumentError("alpha loss: weight must be nonnegative");
  }
};

/// |u - sum(alpha)| - sum((alpha - 0.5)^2) for one alpha map, unweighted.
template <typename Derived>
double alpha_loss(const Eigen::MatrixBase<Derived>& alpha, double budget) {
  double sum = 0, spread = 0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    const double a = static_cast<double>(alpha(i));
    sum += a;
    spread += (a - 0.5) * (a - 0.5);
  }
  return std::abs(budget - sum) - spread;
}

/// Weighted alpha loss summed over every item of a layer batch.
template <typename T>
T alpha_loss(const LayerImage<T>& layer, const AlphaLossConfig& cfg) {
  const auto n = layer.shape.pixels_per_item();
  double total = 0;
  for (int b = 0; b < layer.shape.batch; ++b) total += alpha_loss(layer.alpha.segment(b * n, n), cfg.budget);
  return static_cast<T>(cfg.weight * total);
}

/// Gradient of the weighted batch alpha loss with respect to every alpha value.
template <typename T>
RowVector<T> alpha_loss_grad(const LayerImage<T>& layer, const AlphaLossConfig& cfg) {
  const auto n = layer.shape.pixels_per_item();
  RowVector<T> g(layer.alpha.size());
  for (int b = 0; b < layer.shape.batch; ++b) {
    const auto a = layer.alpha.segment(b * n, n);
    const double excess = static_cast<double>(a.sum()) - cfg.budget;
    const double sign = excess > 0 ? 1.0 : (excess < 0 ? -1.0 : 0.0);
    g.segment(b * n, n) = (static_cast<T>(cfg.weight * sign) -
                           static_cast<T>(2 * cfg.weight) * (a.array() - T(0.5))).matrix();
  }
  return g;
}

/// Mean over items of |sum(alpha) - u|; the training diagnostic for the budget.
template <typename T>
double alpha_budget_deviation(const LayerImage<T>& layer, double budget) {
  const auto n = layer.shape.pixels_per_item();
  double dev = 0;
  for (int b = 0; b < layer.shape.batch; ++b)
    dev += std::abs(static_cast<double>(layer.alpha.segment(b * n, n).sum()) - budget);
  return dev / layer.shape.batch;
}

} // namespace cgan
