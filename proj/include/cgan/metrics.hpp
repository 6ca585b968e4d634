// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Structural similarity on luminance and the max-match sample
 *         quality score Q = mean_i max_s SSIM(s, x_i).
 *
 * Colour images are reduced to luminance Y = 0.299 R + 0.587 G + 0.114 B.
 * SSIM uses a normalized Gaussian window (stride 1, valid region only) and
 * averages the per-window index over the image.
 */
#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "image.hpp"

namespace cgan {

struct SsimParams {
  int window = 11;
  double window_stddev = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window < 3 || window % 2 == 0) throw ArgumentError("ssim: window must be odd and at least 3");
    if (!(k1 > 0) || !(k2 > 0)) throw ArgumentError("ssim: k1 and k2 must be positive");
    if (!(window_stddev > 0) || !(dynamic_range > 0))
      throw ArgumentError("ssim: window stddev and dynamic range must be positive");
  }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Grayscale image, rows = height.
using GrayImage = Matrix<double>;

template <typename T>
GrayImage luminance(const Composite<T>& img, int item = 0) {
  const int h = img.shape.height, w = img.shape.width;
  GrayImage g(h, w);
  const auto base = static_cast<Eigen::Index>(item) * h * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto c = img.rgb.col(base + static_cast<Eigen::Index>(y) * w + x).template cast<double>();
      g(y, x) = 0.299 * c(0) + 0.587 * c(1) + 0.114 * c(2);
    }
  return g;
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
inline Vector<double> gaussian_window(const SsimParams& p) {
  Vector<double> w(p.window);
  const int r = p.window / 2;
  for (int i = 0; i < p.window; ++i) w(i) = std::exp(-0.5 * (i - r) * (i - r) / (p.window_stddev * p.window_stddev));
  return w / w.sum();
}

namespace detail {

/// Separable valid-region filtering: (h - k + 1) x (w - k + 1).
inline GrayImage filter_valid(const GrayImage& img, const Vector<double>& w) {
  const auto k = w.size();
  const auto oh = img.rows() - k + 1, ow = img.cols() - k + 1;
  GrayImage tmp = GrayImage::Zero(oh, img.cols());
  for (Eigen::Index i = 0; i < k; ++i) tmp += w(i) * img.middleRows(i, oh);
  GrayImage out = GrayImage::Zero(oh, ow);
  for (Eigen::Index j = 0; j < k; ++j) out += w(j) * tmp.middleCols(j, ow);
  return out;
}

} // namespace detail

/// Window statistics of one image reused across many comparisons.
struct SsimStats {
  GrayImage image;
  GrayImage mean;
  GrayImage var;  // E[x^2] - E[x]^2 per window
};

inline SsimStats ssim_stats(const GrayImage& img, const SsimParams& p) {
  p.validate();
  if (img.rows() < p.window || img.cols() < p.window)
    throw ArgumentError("ssim: image is smaller than the window");
  const auto w = gaussian_window(p);
  SsimStats s;
  s.image = img;
  s.mean = detail::filter_valid(img, w);
  s.var = detail::filter_valid(img.cwiseProduct(img), w) - s.mean.cwiseProduct(s.mean);
  return s;
}

inline double ssim(const SsimStats& a, const SsimStats& b, const SsimParams& p) {
  if (a.image.rows() != b.image.rows() || a.image.cols() != b.image.cols())
    throw DimensionError("ssim: images differ in size");
  const auto w = gaussian_window(p);
  const GrayImage cov = detail::filter_valid(a.image.cwiseProduct(b.image), w) - a.mean.cwiseProduct(b.mean);
  const double c1 = p.c1(), c2 = p.c2();
  const auto num = (2 * a.mean.array() * b.mean.array() + c1) * (2 * cov.array() + c2);
  const auto den = (a.mean.array().square() + b.mean.array().square() + c1) * (a.var.array() + b.var.array() + c2);
  return (num / den).mean();
}

inline double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p = {}) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("ssim: images differ in size");
  return ssim(ssim_stats(a, p), ssim_stats(b, p), p);
}

/// SSIM of the luminance of two single colour images.
template <typename T>
double ssim(const Composite<T>& a, const Composite<T>& b, const SsimParams& p = {}) {
  if (a.shape.height != b.shape.height || a.shape.width != b.shape.width)
    throw DimensionError("ssim: images differ in size");
  return ssim(luminance(a), luminance(b), p);
}

struct QReport {
  double q = 0;
  double stddev = 0;  // sample standard deviation of per-item best scores
  std::vector<int> best_index;
  std::vector<double> best_score;
  int sample_count = 0;
  int test_count = 0;
  SsimParams params;

  /// Header, score and spread as key = value lines.
  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "# sample quality: mean over test items of the best SSIM against any sample\n";
    os << "test_items = " << test_count << "\n";
    os << "samples = " << sample_count << "\n";
    os << "ssim_window = " << params.window << "\n";
    os << "ssim_window_stddev = " << params.window_stddev << "\n";
    os << "ssim_k1 = " << params.k1 << "\n";
    os << "ssim_k2 = " << params.k2 << "\n";
    os << "ssim_dynamic_range = " << params.dynamic_range << "\n";
    os << "q = " << q << "\n";
    os << "q_stddev_across_test_items = " << stddev << "\n";
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "test_item,best_sample,ssim\n";
    for (std::size_t i = 0; i < best_index.size(); ++i) os << i << "," << best_index[i] << "," << best_score[i] << "\n";
    return os.str();
  }
};

/// Q over precomputed window statistics.
inline QReport q_metric(const std::vector<SsimStats>& samples, const std::vector<SsimStats>& test,
                        const SsimParams& p) {
  if (samples.empty() || test.empty()) throw ArgumentError("q_metric: sample set and test set must be non-empty");
  QReport r;
  r.params = p;
  r.sample_count = static_cast<int>(samples.size());
  r.test_count = static_cast<int>(test.size());
  r.best_index.assign(test.size(), 0);
  r.best_score.assign(test.size(), -2.0);
  for (std::size_t i = 0; i < test.size(); ++i)
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const double v = ssim(samples[s], test[i], p);
      if (v > r.best_score[i]) {
        r.best_score[i] = v;
        r.best_index[i] = static_cast<int>(s);
      }
    }
  double sum = 0;
  for (double v : r.best_score) sum += v;
  r.q = sum / test.size();
  if (test.size() > 1) {
    double ss = 0;
    for (double v : r.best_score) ss += (v - r.q) * (v - r.q);
    r.stddev = std::sqrt(ss / (test.size() - 1));
  }
  return r;
}

template <typename T>
std::vector<SsimStats> ssim_stats(const Composite<T>& batch, const SsimParams& p) {
  std::vector<SsimStats> out;
  out.reserve(batch.shape.batch);
  for (int b = 0; b < batch.shape.batch; ++b) out.push_back(ssim_stats(luminance(batch, b), p));
  return out;
}

/// Q for a batch of samples against a batch of test images.
template <typename T>
QReport q_metric(const Composite<T>& samples, const Composite<T>& test, const SsimParams& p = {}) {
  if (samples.shape.batch < 1 || test.shape.batch < 1)
    throw ArgumentError("q_metric: sample set and test set must be non-empty");
  if (samples.shape.height != test.shape.height || samples.shape.width != test.shape.width)
    throw DimensionError("q_metric: samples and test images differ in size");
  return q_metric(ssim_stats(samples, p), ssim_stats(test, p), p);
}

} // namespace cgan
