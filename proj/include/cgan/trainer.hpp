// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  Adversarial training of composite models: the plain loop (one
 *         discriminator ascent step, then one descent step per generator)
 *         and the variational loop that adds encoder updates, each with an
 *         optional alpha-budget term.
 *
 * Learning rates: lr_d and lr_g are the discriminator and generator step
 * sizes. In the variational loop the generator gradient is
 * lr_g_gan * dL_gan + lr_g_vae * dL_vae (+ alpha term) and is stepped with
 * lr_g; encoders step on dL_vae with lr_e.
 */
#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "losses.hpp"
#include "nets.hpp"
#include "optim.hpp"

namespace cgan {

enum class Variant { cgan, cgan_a, cgan_vae, cgan_vae_a };

inline bool has_alpha_loss(Variant v) { return v == Variant::cgan_a || v == Variant::cgan_vae_a; }
inline bool has_encoders(Variant v) { return v == Variant::cgan_vae || v == Variant::cgan_vae_a; }

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::cgan: return "cgan";
    case Variant::cgan_a: return "cgan-a";
    case Variant::cgan_vae: return "cgan-vae";
    case Variant::cgan_vae_a: return "cgan-vae-a";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "cgan") return Variant::cgan;
  if (s == "cgan-a") return Variant::cgan_a;
  if (s == "cgan-vae") return Variant::cgan_vae;
  if (s == "cgan-vae-a") return Variant::cgan_vae_a;
  throw ConfigurationError("unknown variant '" + std::string(s) + "' (expected cgan, cgan-a, cgan-vae, cgan-vae-a)");
}

struct TrainConfig {
  Variant variant = Variant::cgan;
  int generators = 2;
  int batch_size = 64;
  int latent_dim = 64;
  int hidden_dim = 128;
  int image_size = 64;
  int gen_width = 32;
  int disc_width = 32;
  double lr_d = 1e-4;
  double lr_g = 2e-4;
  double lr_g_gan = 1.0;
  double lr_g_vae = 0.1;
  double lr_e = 2e-4;
  std::optional<AlphaLossConfig> alpha;
  std::int64_t iterations = 1000;
  std::uint64_t seed = 0;
  AdamHyper adam;
  bool non_saturating = false;
  bool single_backward = false;
  double clip_norm = 10;

  Architecture architecture() const {
    return {generators, latent_dim, hidden_dim, image_size, gen_width, disc_width, has_encoders(variant)};
  }

  /// Default alpha-loss settings for this image size: u = 0.4 * pixels and
  /// weight 0.01 / pixels. Larger weights let the budget term swamp the
  /// adversarial gradient under Adam and the generator stops improving.
  AlphaLossConfig default_alpha() const {
    const double pixels = static_cast<double>(image_size) * image_size;
    return {0.4 * pixels, 0.01 / pixels};
  }

  void validate() const {
    architecture().validate();
    if (batch_size < 1) throw ConfigurationError("config: batch_size must be at least 1");
    for (double lr : {lr_d, lr_g, lr_g_gan, lr_g_vae, lr_e})
      if (!(lr >= 0)) throw ConfigurationError("config: learning rates must be nonnegative");
    if (iterations < 0) throw ConfigurationError("config: iterations must be nonnegative");
    if (has_alpha_loss(variant) != alpha.has_value())
      throw ConfigurationError("config: alpha loss settings must be present exactly for the +A variants");
    if (alpha) alpha->validate(static_cast<Eigen::Index>(image_size) * image_size);
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
      throw ConfigurationError("config: invalid optimizer hyperparameters");
  }
};

/// Per-iteration diagnostics. Loss values are batch sums.
struct LossReport {
  std::int64_t iteration = 0;
  double gan = 0;        // L_GAN at the discriminator step
  double generator = 0;  // generator adversarial objective, first sub-step
  double d_real = 0;     // mean D(x)
  double d_fake = 0;     // mean D(G(z))
  double vae_kl = 0;
  double vae_pixel = 0;  // log-likelihood, <= 0
  double vae_feature = 0;
  double vae = 0;
  double alpha = 0;             // weighted alpha loss summed over layers
  double alpha_deviation = 0;   // mean |sum(alpha) - u| over layers and items
  std::vector<double> alpha_per_generator;
  std::vector<double> alpha_coverage;  // mean sum(alpha) per layer
  int clipped = 0;                     // sub-steps whose gradient was clipped

  /// One line of space-separated key=value fields; reals use the shortest
  /// representation that parses back to the same value.
  std::string to_line() const {
    std::string s = "iter=" + std::to_string(iteration);
    auto put = [&s](std::string_view key, double v) {
      char buf[64];
      auto res = std::to_chars(buf, buf + sizeof(buf), v);
      s += ' ';
      s += key;
      s += '=';
      s.append(buf, res.ptr);
    };
    put("gan", gan);
    put("generator", generator);
    put("d_real", d_real);
    put("d_fake", d_fake);
    put("vae_kl", vae_kl);
    put("vae_pixel", vae_pixel);
    put("vae_feature", vae_feature);
    put("vae", vae);
    put("alpha", alpha);
    put("alpha_deviation", alpha_deviation);
    for (std::size_t i = 0; i < alpha_per_generator.size(); ++i)
      put("alpha_g" + std::to_string(i), alpha_per_generator[i]);
    for (std::size_t i = 0; i < alpha_coverage.size(); ++i) put("coverage_g" + std::to_string(i), alpha_coverage[i]);
    s += " clipped=" + std::to_string(clipped);
    return s;
  }

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Optimizer moments, step counters, RNG and history; everything besides the
/// model that a resumed run needs to continue on the same trajectory.
template <typename T>
struct TrainState {
  std::int64_t iteration = 0;
  std::mt19937_64 rng;
  ModelBundle<T> moment1;
  ModelBundle<T> moment2;
  std::int64_t steps_conditioner = 0;
  std::vector<std::int64_t> steps_generators;
  std::int64_t steps_discriminator = 0;
  std::vector<std::int64_t> steps_encoders;
  std::vector<LossReport> history;

  static TrainState create(const ModelBundle<T>& bundle, std::uint64_t seed) {
    TrainState s;
    s.rng.seed(seed ^ 0x9e3779b97f4a7c15ULL);
    s.moment1 = zeros_like(bundle);
    s.moment2 = zeros_like(bundle);
    s.steps_generators.assign(bundle.generators.size(), 0);
    s.steps_encoders.assign(bundle.encoders.size(), 0);
    return s;
  }
};

namespace detail {

inline void require_finite(double v, const char* term, std::int64_t iteration) {
  if (!std::isfinite(v))
    throw NonFiniteError("non-finite loss term '" + std::string(term) + "' at iteration " + std::to_string(iteration));
}

/// Runs f, re-labelling non-finite failures with the loss term and iteration.
template <typename F>
auto named_term(const char* term, std::int64_t iteration, F&& f) {
  try {
    return f();
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("non-finite loss term '" + std::string(term) + "' at iteration " +
                         std::to_string(iteration) + " (" + e.what() + ")");
  }
}

template <typename T>
double selected_squared_norm(ModelBundle<T>& grad, const GradSelection& sel) {
  double s = 0;
  if (sel.conditioner) s += squared_norm(grad.conditioner);
  for (std::size_t i = 0; i < grad.generators.size(); ++i)
    if (sel.generator(i)) s += squared_norm(grad.generators[i]);
  if (sel.discriminator) s += squared_norm(grad.discriminator);
  for (std::size_t i = 0; i < grad.encoders.size(); ++i)
    if (sel.encoder(i)) s += squared_norm(grad.encoders[i]);
  return s;
}

template <typename T>
void scale_selected(ModelBundle<T>& grad, const GradSelection& sel, double f) {
  if (sel.conditioner) scale(grad.conditioner, f);
  for (std::size_t i = 0; i < grad.generators.size(); ++i)
    if (sel.generator(i)) scale(grad.generators[i], f);
  if (sel.discriminator) scale(grad.discriminator, f);
  for (std::size_t i = 0; i < grad.encoders.size(); ++i)
    if (sel.encoder(i)) scale(grad.encoders[i], f);
}

/// `dst += w * src` over the selected groups.
template <typename T>
void axpy_selected(ModelBundle<T>& dst, ModelBundle<T>& src, const GradSelection& sel, double w) {
  auto add = [w](auto& d, auto& s) {
    auto dp = parameters(d);
    auto sp = parameters(s);
    for (std::size_t k = 0; k < dp.size(); ++k) *dp[k].value += static_cast<T>(w) * *sp[k].value;
  };
  if (sel.conditioner) add(dst.conditioner, src.conditioner);
  for (std::size_t i = 0; i < dst.generators.size(); ++i)
    if (sel.generator(i)) add(dst.generators[i], src.generators[i]);
  if (sel.discriminator) add(dst.discriminator, src.discriminator);
  for (std::size_t i = 0; i < dst.encoders.size(); ++i)
    if (sel.encoder(i)) add(dst.encoders[i], src.encoders[i]);
}

} // namespace detail

/// Inverse of LossReport::to_line.
inline LossReport parse_report_line(std::string_view line) {
  LossReport r;
  auto number = [&](std::string_view v, std::string_view key) {
    double d = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), d);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ArgumentError("loss report: bad value for '" + std::string(key) + "'");
    return d;
  };
  std::size_t pos = 0;
  while (pos < line.size()) {
    auto end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    const auto tok = line.substr(pos, end - pos);
    pos = end + 1;
    if (tok.empty()) continue;
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) throw ArgumentError("loss report: token without '='");
    const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "iter") r.iteration = static_cast<std::int64_t>(number(val, key));
    else if (key == "gan") r.gan = number(val, key);
    else if (key == "generator") r.generator = number(val, key);
    else if (key == "d_real") r.d_real = number(val, key);
    else if (key == "d_fake") r.d_fake = number(val, key);
    else if (key == "vae_kl") r.vae_kl = number(val, key);
    else if (key == "vae_pixel") r.vae_pixel = number(val, key);
    else if (key == "vae_feature") r.vae_feature = number(val, key);
    else if (key == "vae") r.vae = number(val, key);
    else if (key == "alpha") r.alpha = number(val, key);
    else if (key == "alpha_deviation") r.alpha_deviation = number(val, key);
    else if (key == "clipped") r.clipped = static_cast<int>(number(val, key));
    else if (key.starts_with("alpha_g")) r.alpha_per_generator.push_back(number(val, key));
    else if (key.starts_with("coverage_g")) r.alpha_coverage.push_back(number(val, key));
    else throw ArgumentError("loss report: unknown field '" + std::string(key) + "'");
  }
  return r;
}

/// Global-norm clipping over the selected groups; true when it triggered.
template <typename T>
bool clip_gradients(ModelBundle<T>& grad, const GradSelection& sel, double max_norm) {
  if (max_norm <= 0) return false;
  const double norm = std::sqrt(detail::selected_squared_norm(grad, sel));
  if (!(norm > max_norm)) return false;
  detail::scale_selected(grad, sel, max_norm / norm);
  return true;
}

/// Applies one Adam step with rate `lr` to every selected group.
template <typename T>
void apply_updates(ModelBundle<T>& bundle, ModelBundle<T>& grad, TrainState<T>& st, const GradSelection& sel,
                   double lr, const AdamHyper& h) {
  if (sel.conditioner)
    adam_step(bundle.conditioner, grad.conditioner, st.moment1.conditioner, st.moment2.conditioner,
              st.steps_conditioner, lr, h);
  for (std::size_t i = 0; i < bundle.generators.size(); ++i)
    if (sel.generator(i))
      adam_step(bundle.generators[i], grad.generators[i], st.moment1.generators[i], st.moment2.generators[i],
                st.steps_generators[i], lr, h);
  if (sel.discriminator)
    adam_step(bundle.discriminator, grad.discriminator, st.moment1.discriminator, st.moment2.discriminator,
              st.steps_discriminator, lr, h);
  for (std::size_t i = 0; i < bundle.encoders.size(); ++i)
    if (sel.encoder(i))
      adam_step(bundle.encoders[i], grad.encoders[i], st.moment1.encoders[i], st.moment2.encoders[i],
                st.steps_encoders[i], lr, h);
}

// ---------------------------------------------------------------------------
// Objectives. Each runs a fresh forward pass in training mode, accumulates
// parameter gradients of the stated objective into `grad` for the selected
// groups, and leaves every buffer untouched.

template <typename T>
struct DiscriminatorEval {
  double gan = 0;
  double d_real = 0, d_fake = 0;
  std::vector<LayerImage<T>> layers;
};

/**
 * Gradient of -L_GAN with respect to the discriminator (so a descent step
 * on it is an ascent step on L_GAN). When `bundle_mut` is given, the
 * forward pass is also folded into the running statistics of the
 * generators and the discriminator.
 */
template <typename T>
DiscriminatorEval<T> discriminator_objective(const ModelBundle<T>& bundle, const Composite<T>& real,
                                             const std::vector<Matrix<T>>& z, ModelBundle<T>* grad,
                                             ModelBundle<T>* bundle_mut = nullptr) {
  GenerationTrace<T> gtr;
  Generation<T> gen = forward_generate(bundle, z, Mode::train, &gtr);
  typename Discriminator<T>::Trace rtr, ftr;
  const auto dr = bundle.discriminator.forward(real, Mode::train, &rtr);
  const auto df = bundle.discriminator.forward(gen.final(), Mode::train, &ftr);
  DiscriminatorEval<T> out;
  out.gan = static_cast<double>(gan_loss(dr.prob, df.prob));
  out.d_real = static_cast<double>(dr.prob.mean());
  out.d_fake = static_cast<double>(df.prob.mean());
  if (grad) {
    const auto g = gan_loss_grad(dr.prob, df.prob);
    const RowVector<T> neg_real = -g.d_real, neg_fake = -g.d_fake;
    bundle.discriminator.backward(rtr, neg_real, Matrix<T>(), &grad->discriminator, false);
    bundle.discriminator.backward(ftr, neg_fake, Matrix<T>(), &grad->discriminator, false);
  }
  if (bundle_mut) {
    bundle_mut->discriminator.update_running_stats(rtr);
    bundle_mut->discriminator.update_running_stats(ftr);
    for (std::size_t t = 0; t < gtr.generators.size(); ++t)
      bundle_mut->generators[t].update_running_stats(gtr.generators[t]);
  }
  out.layers = std::move(gen.layers);
  return out;
}

struct GeneratorEval {
  double adversarial = 0;
  double alpha = 0;
};

/// Gradient of gan_scale * (generator adversarial loss) + alpha loss.
template <typename T>
GeneratorEval generator_objective(const ModelBundle<T>& bundle, const TrainConfig& cfg,
                                  const std::vector<Matrix<T>>& z, T gan_scale, ModelBundle<T>& grad,
                                  const GradSelection& sel) {
  GenerationTrace<T> gtr;
  const Generation<T> gen = forward_generate(bundle, z, Mode::train, &gtr);
  typename Discriminator<T>::Trace ftr;
  const auto df = bundle.discriminator.forward(gen.final(), Mode::train, &ftr);
  GeneratorEval out;
  out.adversarial = static_cast<double>(generator_adversarial_loss(df.prob, cfg.non_saturating));
  const RowVector<T> d_prob = generator_adversarial_grad(df.prob, cfg.non_saturating) * gan_scale;
  const Matrix<T> d_final = bundle.discriminator.backward(ftr, d_prob, Matrix<T>(), nullptr, true);
  std::vector<LayerGradient<T>> d_layers;
  if (cfg.alpha) {
    d_layers.resize(gen.layers.size());
    for (std::size_t t = 0; t < gen.layers.size(); ++t) {
      out.alpha += static_cast<double>(alpha_loss(gen.layers[t], *cfg.alpha));
      d_layers[t].alpha = alpha_loss_grad(gen.layers[t], *cfg.alpha);
    }
  }
  backward_generate(bundle, gtr, gen, d_final, d_layers, &grad, sel);
  return out;
}

template <typename T>
struct VaeEval {
  VaeTerms<double> terms;
  std::vector<typename Encoder<T>::Trace> encoder_traces;
};

/**
 * Gradient of scale * L_VAE, L_VAE = KL - log p(x|z) - log p(D_h(x)|z).
 * Encoders consume the real batch, latents are reparameterized with `eps`,
 * and the reconstruction goes through conditioner, generators and
 * compositor. The discriminator only supplies features.
 */
template <typename T>
VaeEval<T> vae_objective(const ModelBundle<T>& bundle, const Composite<T>& real, const std::vector<Matrix<T>>& eps,
                         T scale_by, ModelBundle<T>& grad, const GradSelection& sel) {
  const int n = bundle.n();
  if (bundle.encoders.empty()) throw ConfigurationError("vae objective: model has no encoders");
  VaeEval<T> out;
  out.encoder_traces.resize(n);
  std::vector<EncoderOutput<T>> enc(n);
  std::vector<Matrix<T>> z(n);
  for (int t = 0; t < n; ++t) {
    enc[t] = bundle.encoders[t].forward(real, Mode::train, &out.encoder_traces[t]);
    z[t] = reparameterize(enc[t], eps[t]);
    out.terms.kl += static_cast<double>(kl_term(enc[t].mu, enc[t].logvar));
  }
  GenerationTrace<T> gtr;
  const Generation<T> gen = forward_generate(bundle, z, Mode::train, &gtr);
  const Composite<T>& xhat = gen.final();
  const auto feat_real = bundle.discriminator.forward(real, Mode::train).feature;
  typename Discriminator<T>::Trace htr;
  const auto feat_hat = bundle.discriminator.forward(xhat, Mode::train, &htr).feature;
  out.terms.recon_pixel = static_cast<double>(recon_pixel(real.rgb, xhat.rgb));
  out.terms.recon_feature = static_cast<double>(recon_feature(feat_real, feat_hat));

  const Matrix<T> d_feat = -recon_feature_grad(feat_real, feat_hat) * scale_by;
  Matrix<T> d_final = bundle.discriminator.backward(htr, RowVector<T>(), d_feat, nullptr, true);
  d_final -= recon_pixel_grad(real.rgb, xhat.rgb) * scale_by;
  const auto dz = backward_generate(bundle, gtr, gen, d_final, {}, &grad, sel);
  for (int t = 0; t < n; ++t) {
    if (!sel.encoder(t)) continue;
    const auto kg = kl_term_grad(enc[t].mu, enc[t].logvar);
    const Matrix<T> sigma = (T(0.5) * enc[t].logvar.array()).exp();
    const Matrix<T> d_mu = (dz[t] + kg.d_mu) * scale_by;
    const Matrix<T> d_logvar =
        (dz[t].array() * eps[t].array() * sigma.array() * T(0.5) + kg.d_logvar.array()).matrix() * scale_by;
    bundle.encoders[t].backward(out.encoder_traces[t], d_mu, d_logvar, &grad.encoders[t]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sub-steps. Each touches only the parameter groups it names.

template <typename T>
void discriminator_step(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg,
                        const Composite<T>& real, const std::vector<Matrix<T>>& z, LossReport& report) {
  ModelBundle<T> grad = zeros_like(bundle);
  GradSelection sel;
  sel.discriminator = true;
  const auto eval = detail::named_term("gan", report.iteration,
                                       [&] { return discriminator_objective(bundle, real, z, &grad, &bundle); });
  report.gan = eval.gan;
  report.d_real = eval.d_real;
  report.d_fake = eval.d_fake;
  report.alpha_coverage.clear();
  report.alpha_per_generator.clear();
  report.alpha_deviation = 0;
  report.alpha = 0;
  for (const auto& layer : eval.layers) {
    report.alpha_coverage.push_back(static_cast<double>(layer.alpha.sum()) / layer.shape.batch);
    if (cfg.alpha) {
      const double a = static_cast<double>(alpha_loss(layer, *cfg.alpha));
      report.alpha_per_generator.push_back(a);
      report.alpha += a;
      report.alpha_deviation += alpha_budget_deviation(layer, cfg.alpha->budget) / eval.layers.size();
    }
  }
  detail::require_finite(report.gan, "gan", report.iteration);
  detail::require_finite(report.alpha, "alpha", report.iteration);
  if (clip_gradients(grad, sel, cfg.clip_norm)) ++report.clipped;
  apply_updates(bundle, grad, st, sel, cfg.lr_d, cfg.adam);
}

/// Selection for a generator sub-step: generator `i` (or all when i < 0)
/// together with the conditioner.
inline GradSelection generator_selection(int n, int i) {
  GradSelection sel;
  sel.conditioner = true;
  sel.generators.assign(n, i < 0);
  if (i >= 0) sel.generators[i] = true;
  return sel;
}

inline GradSelection encoder_selection(int n, int i) {
  GradSelection sel;
  sel.encoders.assign(n, i < 0);
  if (i >= 0) sel.encoders[i] = true;
  return sel;
}

/**
 * Descent step on generator `i` (all generators when i < 0) and the
 * conditioner. `eps` is non-empty exactly in the variational loop.
 */
template <typename T>
void generator_step(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg, const Composite<T>& real,
                    const std::vector<Matrix<T>>& z, const std::vector<Matrix<T>>& eps, int i, LossReport& report,
                    bool record) {
  const GradSelection sel = generator_selection(bundle.n(), i);
  ModelBundle<T> grad = zeros_like(bundle);
  const bool variational = !eps.empty();
  const T gan_scale = static_cast<T>(variational ? cfg.lr_g_gan : 1.0);
  const GeneratorEval ge = detail::named_term(
      "generator", report.iteration, [&] { return generator_objective(bundle, cfg, z, gan_scale, grad, sel); });
  detail::require_finite(ge.adversarial, "generator", report.iteration);
  if (record) report.generator = ge.adversarial;
  if (variational) {
    ModelBundle<T> vgrad = zeros_like(bundle);
    const auto ve = vae_objective(bundle, real, eps, T(1), vgrad, sel);
    detail::require_finite(ve.terms.kl, "vae_kl", report.iteration);
    detail::require_finite(ve.terms.recon_pixel, "vae_pixel", report.iteration);
    detail::require_finite(ve.terms.recon_feature, "vae_feature", report.iteration);
    if (record) {
      report.vae_kl = ve.terms.kl;
      report.vae_pixel = ve.terms.recon_pixel;
      report.vae_feature = ve.terms.recon_feature;
      report.vae = ve.terms.kl - ve.terms.recon_pixel - ve.terms.recon_feature;
    }
    detail::axpy_selected(grad, vgrad, sel, cfg.lr_g_vae);
  }
  if (clip_gradients(grad, sel, cfg.clip_norm)) ++report.clipped;
  apply_updates(bundle, grad, st, sel, cfg.lr_g, cfg.adam);
}

/// Descent step on encoder `i` (all encoders when i < 0) for L_VAE.
template <typename T>
void encoder_step(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg, const Composite<T>& real,
                  const std::vector<Matrix<T>>& eps, int i, LossReport& report) {
  const GradSelection sel = encoder_selection(bundle.n(), i);
  ModelBundle<T> grad = zeros_like(bundle);
  const auto ve = vae_objective(bundle, real, eps, T(1), grad, sel);
  detail::require_finite(ve.terms.kl, "vae_kl", report.iteration);
  for (int t = 0; t < bundle.n(); ++t)
    if (sel.encoder(t)) bundle.encoders[t].update_running_stats(ve.encoder_traces[t]);
  if (clip_gradients(grad, sel, cfg.clip_norm)) ++report.clipped;
  apply_updates(bundle, grad, st, sel, cfg.lr_e, cfg.adam);
}

// ---------------------------------------------------------------------------

/// One iteration of the plain loop on a given real batch.
template <typename T>
LossReport train_step_cgan(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg,
                           const Composite<T>& real) {
  if (has_encoders(cfg.variant)) throw ConfigurationError("train_step_cgan: variant uses encoders");
  LossReport report;
  report.iteration = st.iteration + 1;
  const int m = real.shape.batch;
  const auto z = sample_latent_sequence<T>(bundle.n(), m, bundle.arch.latent_dim, st.rng);
  discriminator_step(bundle, st, cfg, real, z, report);
  if (cfg.single_backward) {
    generator_step(bundle, st, cfg, real, z, {}, -1, report, true);
  } else {
    for (int i = 0; i < bundle.n(); ++i) generator_step(bundle, st, cfg, real, z, {}, i, report, i == 0);
  }
  ++st.iteration;
  st.history.push_back(report);
  return report;
}

/// One iteration of the variational loop on a given real batch.
template <typename T>
LossReport train_step_cgan_vae(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg,
                               const Composite<T>& real) {
  if (!has_encoders(cfg.variant) || bundle.encoders.empty())
    throw ConfigurationError("train_step_cgan_vae: variant has no encoders");
  LossReport report;
  report.iteration = st.iteration + 1;
  const int m = real.shape.batch;
  const auto z = sample_latent_sequence<T>(bundle.n(), m, bundle.arch.latent_dim, st.rng);
  const auto eps = sample_latent_sequence<T>(bundle.n(), m, bundle.arch.latent_dim, st.rng);
  discriminator_step(bundle, st, cfg, real, z, report);
  if (cfg.single_backward) {
    generator_step(bundle, st, cfg, real, z, eps, -1, report, true);
    encoder_step(bundle, st, cfg, real, eps, -1, report);
  } else {
    for (int i = 0; i < bundle.n(); ++i) generator_step(bundle, st, cfg, real, z, eps, i, report, i == 0);
    for (int i = 0; i < bundle.n(); ++i) encoder_step(bundle, st, cfg, real, eps, i, report);
  }
  ++st.iteration;
  st.history.push_back(report);
  return report;
}

template <typename T>
LossReport train_step(ModelBundle<T>& bundle, TrainState<T>& st, const TrainConfig& cfg, const Composite<T>& real) {
  return has_encoders(cfg.variant) ? train_step_cgan_vae(bundle, st, cfg, real)
                                   : train_step_cgan(bundle, st, cfg, real);
}

/// Draws m dataset indices: distinct when the dataset is large enough,
/// otherwise with replacement.
inline std::vector<int> select_minibatch(int dataset_size, int m, std::mt19937_64& rng) {
  std::vector<int> picked(m);
  if (dataset_size >= m) {
    std::vector<int> idx(dataset_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < m; ++k) {
      std::uniform_int_distribution<int> pick(k, dataset_size - 1);
      std::swap(idx[k], idx[pick(rng)]);
    }
    std::copy(idx.begin(), idx.begin() + m, picked.begin());
  } else {
    for (int k = 0; k < m; ++k) {
      std::uniform_int_distribution<int> pick(0, dataset_size - 1);
      picked[k] = pick(rng);
    }
  }
  return picked;
}

template <typename T>
struct FitCallbacks {
  /// Called after every iteration whose number is a multiple of checkpoint_every.
  std::function<void(const ModelBundle<T>&, const TrainState<T>&)> on_checkpoint;
  std::int64_t checkpoint_every = 0;
  std::function<void(const LossReport&)> on_report;
};

/**
 * Continues training from `st.iteration` up to `cfg.iterations`. The whole
 * run is a pure function of (config, dataset, seed): the state's RNG drives
 * both minibatch selection and noise.
 */
template <typename T>
void fit(const TrainConfig& cfg, const Composite<T>& dataset, ModelBundle<T>& bundle, TrainState<T>& st,
         const FitCallbacks<T>& callbacks = {}) {
  cfg.validate();
  if (dataset.shape.batch < 1) throw ArgumentError("fit: dataset is empty");
  if (!(bundle.arch == cfg.architecture())) throw ConfigurationError("fit: model architecture does not match config");
  while (st.iteration < cfg.iterations) {
    const auto idx = select_minibatch(dataset.shape.batch, cfg.batch_size, st.rng);
    const Composite<T> batch = gather(dataset, idx);
    const LossReport report = train_step(bundle, st, cfg, batch);
    if (callbacks.on_report) callbacks.on_report(report);
    if (callbacks.on_checkpoint && callbacks.checkpoint_every > 0 && st.iteration % callbacks.checkpoint_every == 0)
      callbacks.on_checkpoint(bundle, st);
  }
}

template <typename T>
struct FitResult {
  ModelBundle<T> bundle;
  TrainState<T> state;
};

template <typename T>
FitResult<T> fit(const TrainConfig& cfg, const Composite<T>& dataset, const FitCallbacks<T>& callbacks = {}) {
  cfg.validate();
  FitResult<T> r{ModelBundle<T>::create(cfg.architecture(), cfg.seed), {}};
  r.state = TrainState<T>::create(r.bundle, cfg.seed);
  fit(cfg, dataset, r.bundle, r.state, callbacks);
  return r;
}

} // namespace cgan
