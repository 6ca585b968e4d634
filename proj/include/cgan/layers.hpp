// SPDX-License-Identifier: Apache-2.0
/**
 * @file   layers.hpp
 * @brief  Building blocks with explicit forward/backward passes: dense,
 *         strided and fractionally strided convolutions, batch
 *         normalization, pointwise activations.
 *
 * Forward passes are const and record what the backward pass needs in a
 * caller-owned trace. Backward passes accumulate parameter gradients into a
 * twin module of identical layout (skipped when the twin is null) and
 * return the gradient with respect to the input.
 */
#pragma once

#include <algorithm>
#include <concepts>
#include <random>

#include "tensor.hpp"

namespace cgan {

/// Fills `m` with N(0, stddev^2) draws; values are drawn in double so float
/// and double modules built from the same seed agree up to rounding.
template <typename T>
void init_normal(Matrix<T>& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(dist(rng));
}

struct ConvGeometry {
  int kernel = 4;
  int stride = 2;
  int pad = 1;

  /// Output extent of a strided convolution over `in` pixels.
  int down(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  /// Output extent of a fractionally strided convolution over `in` pixels.
  int up(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

/**
 * Gathers, for every position of the small grid, the kernel-sized patch of
 * the large grid it is connected to. Row index (ky * k + kx) * C + c.
 */
template <typename T>
Matrix<T> im2col(const FeatureMap<T>& big, int small_h, int small_w, const ConvGeometry& g) {
  const int c = big.channels();
  const int k = g.kernel;
  Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(k) * k * c,
                                   static_cast<Eigen::Index>(big.batch) * small_h * small_w);
  const T* src = big.data.data();
  T* dst = cols.data();
  const Eigen::Index rows = cols.rows();
  for (int b = 0; b < big.batch; ++b)
    for (int oy = 0; oy < small_h; ++oy)
      for (int ox = 0; ox < small_w; ++ox) {
        T* col = dst + ((static_cast<Eigen::Index>(b) * small_h + oy) * small_w + ox) * rows;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= big.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= big.width) continue;
            const T* pix = src + ((static_cast<Eigen::Index>(b) * big.height + iy) * big.width + ix) * c;
            std::copy(pix, pix + c, col + (ky * k + kx) * c);
          }
        }
      }
  return cols;
}

/// Adjoint of im2col: scatters patch columns back onto the large grid.
template <typename T>
FeatureMap<T> col2im(const Matrix<T>& cols, int channels, int batch, int big_h, int big_w, int small_h,
                     int small_w, const ConvGeometry& g) {
  const int k = g.kernel;
  FeatureMap<T> big(channels, batch, big_h, big_w);
  T* dst = big.data.data();
  const T* src = cols.data();
  const Eigen::Index rows = cols.rows();
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < small_h; ++oy)
      for (int ox = 0; ox < small_w; ++ox) {
        const T* col = src + ((static_cast<Eigen::Index>(b) * small_h + oy) * small_w + ox) * rows;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= big_h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= big_w) continue;
            T* pix = dst + ((static_cast<Eigen::Index>(b) * big_h + iy) * big_w + ix) * channels;
            const T* patch = col + (ky * k + kx) * channels;
            for (int c = 0; c < channels; ++c) pix[c] += patch[c];
          }
        }
      }
  return big;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  using Scalar = T;
  Matrix<T> weight;  // out x in
  Matrix<T> bias;    // out x 1

  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng, double stddev = 0.02)
      : weight(out, in), bias(Matrix<T>::Zero(out, 1)) {
    init_normal(weight, rng, stddev);
  }

  int in_features() const { return static_cast<int>(weight.cols()); }
  int out_features() const { return static_cast<int>(weight.rows()); }

  /// x: in x batch.
  Matrix<T> forward(const Matrix<T>& x) const {
    if (x.rows() != weight.cols()) throw DimensionError("linear: input has wrong feature count");
    Matrix<T> y = weight * x;
    y.colwise() += bias.col(0);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy, Linear* grad) const {
    if (grad) {
      grad->weight.noalias() += dy * x.transpose();
      grad->bias.col(0) += dy.rowwise().sum();
    }
    return weight.transpose() * dy;
  }

  template <typename F> void visit(F&& f) { f("weight", weight); f("bias", bias); }
  template <typename F> void visit_buffers(F&&) {}
};

/// Strided convolution. Weight: out x (k*k*in), matching im2col rows.
template <typename T>
struct Conv2d {
  using Scalar = T;
  ConvGeometry geometry;
  Matrix<T> weight;
  Matrix<T> bias;  // out x 1; empty when the layer feeds a batch norm
  bool has_bias = false;

  Conv2d() = default;
  Conv2d(int in, int out, bool with_bias, std::mt19937_64& rng, double stddev = 0.02, ConvGeometry g = {})
      : geometry(g), weight(out, g.kernel * g.kernel * in), has_bias(with_bias) {
    init_normal(weight, rng, stddev);
    if (has_bias) bias = Matrix<T>::Zero(out, 1);
  }

  int in_channels() const { return static_cast<int>(weight.cols()) / (geometry.kernel * geometry.kernel); }

  FeatureMap<T> forward(const FeatureMap<T>& x) const {
    if (x.channels() != in_channels()) throw DimensionError("conv2d: input has wrong channel count");
    const int oh = geometry.down(x.height), ow = geometry.down(x.width);
    const Matrix<T> cols = im2col(x, oh, ow, geometry);
    FeatureMap<T> y;
    y.batch = x.batch;
    y.height = oh;
    y.width = ow;
    y.data.noalias() = weight * cols;
    if (has_bias) y.data.colwise() += bias.col(0);
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy, Conv2d* grad,
                         bool need_input_grad = true) const {
    if (grad) {
      const Matrix<T> cols = im2col(x, dy.height, dy.width, geometry);
      grad->weight.noalias() += dy.data * cols.transpose();
      if (has_bias) grad->bias.col(0) += dy.data.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const Matrix<T> dcols = weight.transpose() * dy.data;
    return col2im(dcols, x.channels(), x.batch, x.height, x.width, dy.height, dy.width, geometry);
  }

  template <typename F> void visit(F&& f) {
    f("weight", weight);
    if (has_bias) f("bias", bias);
  }
  template <typename F> void visit_buffers(F&&) {}
};

/// Fractionally strided (transposed) convolution. Weight: in x (k*k*out).
template <typename T>
struct ConvTranspose2d {
  using Scalar = T;
  ConvGeometry geometry;
  Matrix<T> weight;
  Matrix<T> bias;
  bool has_bias = false;
  int out_channels = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, bool with_bias, std::mt19937_64& rng, double stddev = 0.02,
                  ConvGeometry g = {})
      : geometry(g), weight(in, g.kernel * g.kernel * out), has_bias(with_bias), out_channels(out) {
    init_normal(weight, rng, stddev);
    if (has_bias) bias = Matrix<T>::Zero(out, 1);
  }

  FeatureMap<T> forward(const FeatureMap<T>& x) const {
    if (x.channels() != weight.rows()) throw DimensionError("conv_transpose2d: input has wrong channel count");
    const Matrix<T> cols = weight.transpose() * x.data;
    FeatureMap<T> y = col2im(cols, out_channels, x.batch, geometry.up(x.height), geometry.up(x.width), x.height,
                             x.width, geometry);
    if (has_bias) y.data.colwise() += bias.col(0);
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy, ConvTranspose2d* grad) const {
    const Matrix<T> dcols = im2col(dy, x.height, x.width, geometry);
    if (grad) {
      grad->weight.noalias() += x.data * dcols.transpose();
      if (has_bias) grad->bias.col(0) += dy.data.rowwise().sum();
    }
    FeatureMap<T> dx;
    dx.batch = x.batch;
    dx.height = x.height;
    dx.width = x.width;
    dx.data.noalias() = weight * dcols;
    return dx;
  }

  template <typename F> void visit(F&& f) {
    f("weight", weight);
    if (has_bias) f("bias", bias);
  }
  template <typename F> void visit_buffers(F&&) {}
};

/**
 * Per-channel batch normalization over rows of a (channels x samples)
 * matrix. Running statistics are buffers: forward never touches them, the
 * caller folds a training trace in with update_running().
 */
template <typename T>
struct BatchNorm {
  using Scalar = T;
  Matrix<T> gamma;  // C x 1
  Matrix<T> beta;
  Matrix<T> running_mean;
  Matrix<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  struct Trace {
    Matrix<T> xhat;
    Vector<T> inv_std;
    Vector<T> mean;
    Vector<T> var;  // biased batch variance
    bool batch_stats = true;
  };

  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : gamma(Matrix<T>::Ones(channels, 1)), beta(Matrix<T>::Zero(channels, 1)),
        running_mean(Matrix<T>::Zero(channels, 1)), running_var(Matrix<T>::Ones(channels, 1)) {}

  Matrix<T> forward(const Matrix<T>& x, Mode mode, Trace& tr) const {
    if (x.rows() != gamma.rows()) throw DimensionError("batch_norm: channel count mismatch");
    if (mode == Mode::train) {
      if (x.cols() < 2) throw ArgumentError("batch_norm: training mode needs at least two samples per channel");
      tr.batch_stats = true;
      tr.mean = x.rowwise().mean();
      tr.var = (x.colwise() - tr.mean).array().square().rowwise().mean();
    } else {
      tr.batch_stats = false;
      tr.mean = running_mean.col(0);
      tr.var = running_var.col(0);
    }
    tr.inv_std = (tr.var.array() + eps).rsqrt();
    tr.xhat = (x.colwise() - tr.mean).array().colwise() * tr.inv_std.array();
    Matrix<T> y = tr.xhat.array().colwise() * gamma.col(0).array();
    y.colwise() += beta.col(0);
    return y;
  }

  Matrix<T> backward(const Trace& tr, const Matrix<T>& dy, BatchNorm* grad) const {
    if (grad) {
      grad->gamma.col(0) += (dy.array() * tr.xhat.array()).rowwise().sum().matrix();
      grad->beta.col(0) += dy.rowwise().sum();
    }
    const Vector<T> scale = gamma.col(0).array() * tr.inv_std.array();
    if (!tr.batch_stats) return dy.array().colwise() * scale.array();
    const Vector<T> mean_dy = dy.rowwise().mean();
    const Vector<T> mean_dy_xhat = (dy.array() * tr.xhat.array()).rowwise().mean();
    Matrix<T> dx = dy.colwise() - mean_dy;
    dx.array() -= tr.xhat.array().colwise() * mean_dy_xhat.array();
    return dx.array().colwise() * scale.array();
  }

  void update_running(const Trace& tr, Eigen::Index samples) {
    if (!tr.batch_stats) return;
    const T n = static_cast<T>(samples);
    const Vector<T> unbiased = tr.var * (n / (n - 1));
    running_mean.col(0) = (1 - momentum) * running_mean.col(0) + momentum * tr.mean;
    running_var.col(0) = (1 - momentum) * running_var.col(0) + momentum * unbiased;
  }

  template <typename F> void visit(F&& f) { f("gamma", gamma); f("beta", beta); }
  template <typename F> void visit_buffers(F&& f) { f("running_mean", running_mean); f("running_var", running_var); }
};

// Pointwise activations. Backward functions take the forward input or output,
// whichever gives the cheaper derivative.

template <typename T>
Matrix<T> relu(const Matrix<T>& x) { return x.cwiseMax(T(0)); }
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  return (x.array() > T(0)).select(dy, T(0));
}

inline constexpr double kLeakySlope = 0.2;

template <typename T>
Matrix<T> leaky_relu(const Matrix<T>& x) {
  return (x.array() > T(0)).select(x, x * T(kLeakySlope));
}
template <typename T>
Matrix<T> leaky_relu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  return (x.array() > T(0)).select(dy, dy * T(kLeakySlope));
}

template <std::floating_point T>
T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using T = typename Derived::Scalar;
  return (T(1) / (T(1) + (-x.array()).exp())).matrix();
}

} // namespace cgan
