// SPDX-License-Identifier: Apache-2.0
/**
 * @file   nets.hpp
 * @brief  RGBA generators, the discriminator with its feature tap, the
 *         variational encoders and the ModelBundle tying them to the
 *         conditioner.
 *
 * Topology follows the DCGAN recipe scaled by a width parameter w:
 *
 *   generator:     h -> dense(8w*s*s) -> 4 x [BN, ReLU, up-conv]   (s = size/16)
 *                  channels 8w -> 4w -> 2w -> w -> 4 (rgb + alpha)
 *   conv stack:    4 x [conv, (BN), LeakyReLU(0.2)]; no BN on the input layer
 *                  channels 3 -> w -> 2w -> 4w -> 8w
 *   discriminator: conv stack -> dense(1) -> sigmoid
 *   encoder:       conv stack -> dense(latent) for mu and for log-variance
 */
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "compositor.hpp"
#include "conditioner.hpp"
#include "layers.hpp"

namespace cgan {

template <typename M, typename F>
void visit_scoped(M& module, std::string_view prefix, F& f) {
  module.visit([&](std::string_view name, auto& m) { f(scoped(prefix, name), m); });
}

template <typename M, typename F>
void visit_buffers_scoped(M& module, std::string_view prefix, F& f) {
  module.visit_buffers([&](std::string_view name, auto& m) { f(scoped(prefix, name), m); });
}

// ---------------------------------------------------------------------------

template <typename T>
struct Generator {
  using Scalar = T;
  int image_size = 0;
  int base = 0;
  Linear<T> project;
  std::array<BatchNorm<T>, 4> norm;
  std::array<ConvTranspose2d<T>, 4> up;

  struct Trace {
    Matrix<T> h;
    std::array<typename BatchNorm<T>::Trace, 4> norm;
    std::array<Matrix<T>, 4> pre_relu;
    std::array<FeatureMap<T>, 4> up_in;
  };

  Generator() = default;
  Generator(int hidden_dim, int image_size_, int width, std::mt19937_64& rng)
      : image_size(image_size_), base(image_size_ / 16) {
    const std::array<int, 5> ch{8 * width, 4 * width, 2 * width, width, 4};
    project = Linear<T>(hidden_dim, ch[0] * base * base, rng);
    for (int s = 0; s < 4; ++s) {
      norm[s] = BatchNorm<T>(ch[s]);
      up[s] = ConvTranspose2d<T>(ch[s], ch[s + 1], s == 3, rng);
    }
  }

  LayerImage<T> forward(const Matrix<T>& h, Mode mode, Trace* tr = nullptr) const {
    Trace local;
    Trace& t = tr ? *tr : local;
    t.h = h;
    FeatureMap<T> fm = unflatten(project.forward(h), norm[0].gamma.rows(), base, base);
    for (int s = 0; s < 4; ++s) {
      t.pre_relu[s] = norm[s].forward(fm.data, mode, t.norm[s]);
      t.up_in[s] = FeatureMap<T>(relu(t.pre_relu[s]), fm.batch, fm.height, fm.width);
      fm = up[s].forward(t.up_in[s]);
    }
    LayerImage<T> out({fm.batch, fm.height, fm.width});
    out.rgb = (fm.data.topRows(3).array().tanh() + 1) * T(0.5);
    out.alpha = sigmoid(fm.data.row(3));
    return out;
  }

  /// Returns d(loss)/dh given gradients on the emitted layer.
  Matrix<T> backward(const Trace& tr, const LayerImage<T>& out, const Matrix<T>& d_rgb,
                     const RowVector<T>& d_alpha, Generator* grad) const {
    FeatureMap<T> dy(4, out.shape.batch, out.shape.height, out.shape.width);
    // d/dx of (tanh(x)+1)/2 is 2 r (1 - r) in terms of the output r.
    dy.data.topRows(3) = d_rgb.array() * 2 * out.rgb.array() * (1 - out.rgb.array());
    dy.data.row(3) = d_alpha.array() * out.alpha.array() * (1 - out.alpha.array());
    for (int s = 3; s >= 0; --s) {
      FeatureMap<T> dx = up[s].backward(tr.up_in[s], dy, grad ? &grad->up[s] : nullptr);
      Matrix<T> d = relu_backward(tr.pre_relu[s], dx.data);
      d = norm[s].backward(tr.norm[s], d, grad ? &grad->norm[s] : nullptr);
      dy = FeatureMap<T>(std::move(d), dx.batch, dx.height, dx.width);
    }
    return project.backward(tr.h, dy.flatten(), grad ? &grad->project : nullptr);
  }

  void update_running_stats(const Trace& tr) {
    for (int s = 0; s < 4; ++s) norm[s].update_running(tr.norm[s], tr.pre_relu[s].cols());
  }

  template <typename F> void visit(F&& f) {
    visit_scoped(project, "project", f);
    for (int s = 0; s < 4; ++s) {
      visit_scoped(norm[s], "norm" + std::to_string(s), f);
      visit_scoped(up[s], "up" + std::to_string(s), f);
    }
  }
  template <typename F> void visit_buffers(F&& f) {
    for (int s = 0; s < 4; ++s) visit_buffers_scoped(norm[s], "norm" + std::to_string(s), f);
  }
};

/// Four strided convolutions shared by the discriminator and the encoders.
template <typename T>
struct ConvStack {
  using Scalar = T;
  std::array<Conv2d<T>, 4> conv;
  std::array<BatchNorm<T>, 3> norm;  // after conv[1..3]

  struct Trace {
    std::array<FeatureMap<T>, 4> conv_in;
    std::array<typename BatchNorm<T>::Trace, 3> norm;
    std::array<Matrix<T>, 4> pre_act;
  };

  ConvStack() = default;
  ConvStack(int width, std::mt19937_64& rng) {
    const std::array<int, 5> ch{3, width, 2 * width, 4 * width, 8 * width};
    for (int s = 0; s < 4; ++s) conv[s] = Conv2d<T>(ch[s], ch[s + 1], s == 0, rng);
    for (int s = 0; s < 3; ++s) norm[s] = BatchNorm<T>(ch[s + 2]);
  }

  int out_channels() const { return static_cast<int>(conv[3].weight.rows()); }

  FeatureMap<T> forward(const FeatureMap<T>& x, Mode mode, Trace& tr) const {
    FeatureMap<T> fm = x;
    for (int s = 0; s < 4; ++s) {
      tr.conv_in[s] = std::move(fm);
      FeatureMap<T> y = conv[s].forward(tr.conv_in[s]);
      tr.pre_act[s] = s == 0 ? std::move(y.data) : norm[s - 1].forward(y.data, mode, tr.norm[s - 1]);
      fm = FeatureMap<T>(leaky_relu(tr.pre_act[s]), y.batch, y.height, y.width);
    }
    return fm;
  }

  /// `dy` is the gradient at the stack output. Returns the input gradient
  /// when requested, else an empty map.
  FeatureMap<T> backward(const Trace& tr, FeatureMap<T> dy, ConvStack* grad, bool need_input_grad) const {
    for (int s = 3; s >= 0; --s) {
      Matrix<T> d = leaky_relu_backward(tr.pre_act[s], dy.data);
      if (s > 0) d = norm[s - 1].backward(tr.norm[s - 1], d, grad ? &grad->norm[s - 1] : nullptr);
      const FeatureMap<T> dconv(std::move(d), dy.batch, dy.height, dy.width);
      const bool want_dx = s > 0 || need_input_grad;
      dy = conv[s].backward(tr.conv_in[s], dconv, grad ? &grad->conv[s] : nullptr, want_dx);
    }
    return dy;
  }

  void update_running_stats(const Trace& tr) {
    for (int s = 0; s < 3; ++s) norm[s].update_running(tr.norm[s], tr.pre_act[s + 1].cols());
  }

  template <typename F> void visit(F&& f) {
    for (int s = 0; s < 4; ++s) visit_scoped(conv[s], "conv" + std::to_string(s), f);
    for (int s = 0; s < 3; ++s) visit_scoped(norm[s], "norm" + std::to_string(s + 1), f);
  }
  template <typename F> void visit_buffers(F&& f) {
    for (int s = 0; s < 3; ++s) visit_buffers_scoped(norm[s], "norm" + std::to_string(s + 1), f);
  }
};

/// Real/fake probability plus the last convolutional layer's activations.
template <typename T>
struct DiscriminatorOutput {
  RowVector<T> prob;  // 1 x batch, inside (0,1)
  Matrix<T> feature;  // feature_dim x batch
};

template <typename T>
struct Discriminator {
  using Scalar = T;
  int image_size = 0;
  ConvStack<T> stack;
  Linear<T> head;

  struct Trace {
    typename ConvStack<T>::Trace stack;
    int out_height = 0, out_width = 0;
    DiscriminatorOutput<T> out;
  };

  Discriminator() = default;
  Discriminator(int image_size_, int width, std::mt19937_64& rng) : image_size(image_size_), stack(width, rng) {
    const int s = image_size / 16;
    head = Linear<T>(8 * width * s * s, 1, rng);
  }

  int feature_dim() const { return head.in_features(); }

  DiscriminatorOutput<T> forward(const Composite<T>& x, Mode mode, Trace* tr = nullptr) const {
    if (x.rgb.rows() != 3) throw DimensionError("discriminate: expected 3 colour channels");
    if (x.shape.height != image_size || x.shape.width != image_size)
      throw DimensionError("discriminate: image is not " + std::to_string(image_size) + " pixels square");
    Trace local;
    Trace& t = tr ? *tr : local;
    FeatureMap<T> fm = stack.forward(x.as_feature_map(), mode, t.stack);
    t.out_height = fm.height;
    t.out_width = fm.width;
    t.out.feature = fm.flatten();
    t.out.prob = sigmoid(head.forward(t.out.feature));
    return t.out;
  }

  /**
   * Either gradient may be empty. Returns d(loss)/dx as a 3 x pixels matrix
   * when `need_input_grad`, else an empty matrix.
   */
  Matrix<T> backward(const Trace& tr, const RowVector<T>& d_prob, const Matrix<T>& d_feature,
                     Discriminator* grad, bool need_input_grad) const {
    const auto& p = tr.out.prob;
    Matrix<T> d_feat = Matrix<T>::Zero(tr.out.feature.rows(), tr.out.feature.cols());
    if (d_prob.size() > 0) {
      const Matrix<T> d_logit = (d_prob.array() * p.array() * (1 - p.array())).matrix();
      d_feat = head.backward(tr.out.feature, d_logit, grad ? &grad->head : nullptr);
    }
    if (d_feature.size() > 0) d_feat += d_feature;
    FeatureMap<T> dy = unflatten(d_feat, stack.out_channels(), tr.out_height, tr.out_width);
    FeatureMap<T> dx = stack.backward(tr.stack, std::move(dy), grad ? &grad->stack : nullptr, need_input_grad);
    return std::move(dx.data);
  }

  void update_running_stats(const Trace& tr) { stack.update_running_stats(tr.stack); }

  template <typename F> void visit(F&& f) {
    visit_scoped(stack, "stack", f);
    visit_scoped(head, "head", f);
  }
  template <typename F> void visit_buffers(F&& f) { visit_buffers_scoped(stack, "stack", f); }
};

/// Parameters of q(z|x) = Normal(mu, diag(exp(logvar))), one column per item.
template <typename T>
struct EncoderOutput {
  Matrix<T> mu;
  Matrix<T> logvar;
};

template <typename T>
struct Encoder {
  using Scalar = T;
  int image_size = 0;
  ConvStack<T> stack;
  Linear<T> mu_head;
  Linear<T> logvar_head;

  struct Trace {
    typename ConvStack<T>::Trace stack;
    int out_height = 0, out_width = 0;
    Matrix<T> feature;
  };

  Encoder() = default;
  Encoder(int image_size_, int width, int latent_dim, std::mt19937_64& rng)
      : image_size(image_size_), stack(width, rng) {
    const int s = image_size / 16;
    mu_head = Linear<T>(8 * width * s * s, latent_dim, rng);
    logvar_head = Linear<T>(8 * width * s * s, latent_dim, rng);
  }

  EncoderOutput<T> forward(const Composite<T>& x, Mode mode, Trace* tr = nullptr) const {
    if (x.shape.height != image_size || x.shape.width != image_size)
      throw DimensionError("encode: image is not " + std::to_string(image_size) + " pixels square");
    Trace local;
    Trace& t = tr ? *tr : local;
    FeatureMap<T> fm = stack.forward(x.as_feature_map(), mode, t.stack);
    t.out_height = fm.height;
    t.out_width = fm.width;
    t.feature = fm.flatten();
    return {mu_head.forward(t.feature), logvar_head.forward(t.feature)};
  }

  void backward(const Trace& tr, const Matrix<T>& d_mu, const Matrix<T>& d_logvar, Encoder* grad) const {
    Matrix<T> d_feat = mu_head.backward(tr.feature, d_mu, grad ? &grad->mu_head : nullptr);
    d_feat += logvar_head.backward(tr.feature, d_logvar, grad ? &grad->logvar_head : nullptr);
    stack.backward(tr.stack, unflatten(d_feat, stack.out_channels(), tr.out_height, tr.out_width),
                   grad ? &grad->stack : nullptr, false);
  }

  void update_running_stats(const Trace& tr) { stack.update_running_stats(tr.stack); }

  template <typename F> void visit(F&& f) {
    visit_scoped(stack, "stack", f);
    visit_scoped(mu_head, "mu_head", f);
    visit_scoped(logvar_head, "logvar_head", f);
  }
  template <typename F> void visit_buffers(F&& f) { visit_buffers_scoped(stack, "stack", f); }
};

// ---------------------------------------------------------------------------

struct Architecture {
  int generators = 2;
  int latent_dim = 64;
  int hidden_dim = 128;
  int image_size = 64;
  int gen_width = 32;
  int disc_width = 32;
  bool encoders = false;

  void validate() const {
    if (generators < 1) throw ArgumentError("architecture: need at least one generator");
    if (latent_dim < 1 || hidden_dim < 1) throw ArgumentError("architecture: latent_dim and hidden_dim must be positive");
    if (image_size < 16 || image_size % 16 != 0)
      throw ArgumentError("architecture: image_size must be a positive multiple of 16");
    if (gen_width < 1 || disc_width < 1) throw ArgumentError("architecture: widths must be positive");
  }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Which parameter groups a backward pass should accumulate gradients for.
struct GradSelection {
  bool conditioner = false;
  std::vector<bool> generators;
  bool discriminator = false;
  std::vector<bool> encoders;

  bool generator(std::size_t i) const { return i < generators.size() && generators[i]; }
  bool encoder(std::size_t i) const { return i < encoders.size() && encoders[i]; }

  static GradSelection all(const Architecture& a) {
    return {true, std::vector<bool>(a.generators, true), true,
            std::vector<bool>(a.encoders ? a.generators : 0, true)};
  }
  static GradSelection none() { return {}; }
};

/**
 * Every trainable parameter of a composite model. Generators (and encoders)
 * are distinct objects and never share storage.
 */
template <typename T>
struct ModelBundle {
  using Scalar = T;
  Architecture arch;
  Conditioner<T> conditioner;
  std::vector<Generator<T>> generators;
  Discriminator<T> discriminator;
  std::vector<Encoder<T>> encoders;

  static ModelBundle create(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    ModelBundle b;
    b.arch = arch;
    b.conditioner = Conditioner<T>(arch.latent_dim, arch.hidden_dim, rng);
    for (int i = 0; i < arch.generators; ++i)
      b.generators.emplace_back(arch.hidden_dim, arch.image_size, arch.gen_width, rng);
    b.discriminator = Discriminator<T>(arch.image_size, arch.disc_width, rng);
    if (arch.encoders)
      for (int i = 0; i < arch.generators; ++i)
        b.encoders.emplace_back(arch.image_size, arch.disc_width, arch.latent_dim, rng);
    return b;
  }

  int n() const { return arch.generators; }

  template <typename F> void visit(F&& f) {
    visit_scoped(conditioner, "conditioner", f);
    for (std::size_t i = 0; i < generators.size(); ++i) visit_scoped(generators[i], "generator" + std::to_string(i), f);
    visit_scoped(discriminator, "discriminator", f);
    for (std::size_t i = 0; i < encoders.size(); ++i) visit_scoped(encoders[i], "encoder" + std::to_string(i), f);
  }
  template <typename F> void visit_buffers(F&& f) {
    for (std::size_t i = 0; i < generators.size(); ++i)
      visit_buffers_scoped(generators[i], "generator" + std::to_string(i), f);
    visit_buffers_scoped(discriminator, "discriminator", f);
    for (std::size_t i = 0; i < encoders.size(); ++i)
      visit_buffers_scoped(encoders[i], "encoder" + std::to_string(i), f);
  }
};

// ---------------------------------------------------------------------------

/// `count` i.i.d. standard-normal vectors as the columns of a latent_dim x count matrix.
template <typename T>
Matrix<T> sample_prior(int count, int latent_dim, std::mt19937_64& rng) {
  if (count < 1 || latent_dim < 1) throw ArgumentError("sample_prior: count and latent_dim must be positive");
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<T> z(latent_dim, count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < latent_dim; ++i) z(i, j) = static_cast<T>(dist(rng));
  return z;
}

/// Noise sequence z(1..n) for a batch, drawn step by step.
template <typename T>
std::vector<Matrix<T>> sample_latent_sequence(int n, int batch, int latent_dim, std::mt19937_64& rng) {
  std::vector<Matrix<T>> z;
  z.reserve(n);
  for (int t = 0; t < n; ++t) z.push_back(sample_prior<T>(batch, latent_dim, rng));
  return z;
}

template <typename T>
Matrix<T> reparameterize(const EncoderOutput<T>& enc, const Matrix<T>& eps) {
  if (enc.mu.rows() != eps.rows() || enc.mu.cols() != eps.cols() || enc.logvar.rows() != eps.rows() ||
      enc.logvar.cols() != eps.cols())
    throw DimensionError("reparameterize: mu, logvar and eps must share dimensions");
  return enc.mu.array() + (T(0.5) * enc.logvar.array()).exp() * eps.array();
}

template <typename T>
LayerImage<T> generate_layer(const ModelBundle<T>& bundle, int index, const Matrix<T>& h, Mode mode = Mode::eval) {
  if (index < 0 || index >= bundle.n()) throw ArgumentError("generate_layer: generator index out of range");
  if (!h.allFinite()) throw DomainError("generate_layer: conditioner state is not finite");
  return bundle.generators[index].forward(h, mode);
}

template <typename T>
DiscriminatorOutput<T> discriminate(const ModelBundle<T>& bundle, const Composite<T>& x, Mode mode = Mode::train) {
  return bundle.discriminator.forward(x, mode);
}

template <typename T>
EncoderOutput<T> encode(const ModelBundle<T>& bundle, int index, const Composite<T>& x, Mode mode = Mode::eval) {
  if (bundle.encoders.empty())
    throw ConfigurationError("encode: this model has no encoders (train a cgan-vae or cgan-vae-a variant)");
  if (index < 0 || index >= static_cast<int>(bundle.encoders.size()))
    throw ArgumentError("encode: encoder index out of range");
  return bundle.encoders[index].forward(x, mode);
}

template <typename T>
struct Generation {
  std::vector<LayerImage<T>> layers;
  CompositeStack<T> stack;

  const Composite<T>& final() const { return stack.final(); }
};

template <typename T>
struct GenerationTrace {
  typename Conditioner<T>::Trace conditioner;
  std::vector<typename Generator<T>::Trace> generators;
};

/// Conditioner over z(1..n), generator t on h(t), then alpha compositing.
template <typename T>
Generation<T> forward_generate(const ModelBundle<T>& bundle, const std::vector<Matrix<T>>& z, Mode mode,
                               GenerationTrace<T>* tr = nullptr) {
  if (static_cast<int>(z.size()) != bundle.n())
    throw DimensionError("forward_generate: expected " + std::to_string(bundle.n()) + " latent vectors");
  const auto h = bundle.conditioner.forward(z, tr ? &tr->conditioner : nullptr);
  if (tr) tr->generators.assign(z.size(), {});
  Generation<T> g;
  g.layers.reserve(z.size());
  for (std::size_t t = 0; t < z.size(); ++t)
    g.layers.push_back(bundle.generators[t].forward(h[t], mode, tr ? &tr->generators[t] : nullptr));
  g.stack = compose_stack(g.layers);
  return g;
}

/**
 * Back-propagates gradients on the final composite and, optionally, direct
 * gradients on individual layers (e.g. from the alpha loss) to the latent
 * sequence. Parameter gradients land in `grad` for the selected groups.
 */
template <typename T>
std::vector<Matrix<T>> backward_generate(const ModelBundle<T>& bundle, const GenerationTrace<T>& tr,
                                         const Generation<T>& gen, const Matrix<T>& d_final,
                                         const std::vector<LayerGradient<T>>& d_layers, ModelBundle<T>* grad,
                                         const GradSelection& sel) {
  const std::size_t n = gen.layers.size();
  std::vector<LayerGradient<T>> d;
  if (d_final.size() > 0) {
    d = compose_stack_backward(gen.layers, gen.stack, d_final);
  } else {
    d.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      d[t].rgb = Matrix<T>::Zero(3, gen.layers[t].shape.pixels());
      d[t].alpha = RowVector<T>::Zero(gen.layers[t].shape.pixels());
    }
  }
  if (!d_layers.empty()) {
    if (d_layers.size() != n) throw DimensionError("backward_generate: one layer gradient per generator expected");
    for (std::size_t t = 0; t < n; ++t) {
      if (d_layers[t].rgb.size() > 0) d[t].rgb += d_layers[t].rgb;
      if (d_layers[t].alpha.size() > 0) d[t].alpha += d_layers[t].alpha;
    }
  }
  std::vector<Matrix<T>> dh(n);
  for (std::size_t t = 0; t < n; ++t) {
    Generator<T>* g = grad && sel.generator(t) ? &grad->generators[t] : nullptr;
    dh[t] = bundle.generators[t].backward(tr.generators[t], gen.layers[t], d[t].rgb, d[t].alpha, g);
  }
  return bundle.conditioner.backward(tr.conditioner, dh, grad && sel.conditioner ? &grad->conditioner : nullptr);
}

} // namespace cgan
