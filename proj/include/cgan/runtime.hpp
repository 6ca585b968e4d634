// SPDX-License-Identifier: Apache-2.0
/**
 * @file   runtime.hpp
 * @brief  Sampling, decomposition, reconstruction, latent swap, grids,
 *         evaluation and the training driver behind the command-line tool.
 */
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "png_io.hpp"

namespace cgan {

namespace fs = std::filesystem;

/// Zero-padded decimal, e.g. numbered(7, 4) == "0007".
inline std::string numbered(long long value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

/// Unconditional samples with eval-mode normalization; a pure function of (model, seed).
template <typename T>
Generation<T> sample_model(const ModelBundle<T>& bundle, int count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("sample: count must be positive");
  std::mt19937_64 rng(seed);
  const auto z = sample_latent_sequence<T>(bundle.n(), count, bundle.arch.latent_dim, rng);
  return forward_generate(bundle, z, Mode::eval);
}

/// Generates `count` images in chunks to bound memory.
template <typename T>
Composite<T> sample_images(const ModelBundle<T>& bundle, int count, std::uint64_t seed, int chunk = 64) {
  std::mt19937_64 rng(seed);
  std::vector<Composite<T>> parts;
  for (int done = 0; done < count; done += chunk) {
    const int b = std::min(chunk, count - done);
    const auto z = sample_latent_sequence<T>(bundle.n(), b, bundle.arch.latent_dim, rng);
    parts.push_back(forward_generate(bundle, z, Mode::eval).final());
  }
  if (parts.empty()) throw ArgumentError("sample: count must be positive");
  return concat(parts);
}

// --- image assembly --------------------------------------------------------

/// RGBA image flattened over a two-tone checkerboard (cells of `cell` pixels).
inline Image8 over_checkerboard(const Image8& rgba, int cell = 8) {
  if (rgba.channels != 4) throw ArgumentError("over_checkerboard: RGBA input expected");
  Image8 out{rgba.width, rgba.height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(rgba.width) * rgba.height * 3)};
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x) {
      const double bg = ((x / cell + y / cell) % 2 == 0) ? 0.8 : 0.6;
      const double a = from_byte(rgba.at(x, y, 3));
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = to_byte(a * from_byte(rgba.at(x, y, c)) + (1 - a) * bg);
    }
  return out;
}

/// Row-major grid of equally sized RGB tiles separated by `gap` white pixels.
inline Image8 tile(const std::vector<Image8>& images, int cols, int gap = 2) {
  if (images.empty() || cols < 1) throw ArgumentError("tile: need at least one image and one column");
  const int w = images[0].width, h = images[0].height;
  for (const auto& im : images)
    if (im.width != w || im.height != h || im.channels != 3) throw DimensionError("tile: tiles must be equal-size RGB");
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Image8 out{cols * w + (cols - 1) * gap, rows * h + (rows - 1) * gap, 3, {}};
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * 3, 255);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const int ox = static_cast<int>(k % cols) * (w + gap), oy = static_cast<int>(k / cols) * (h + gap);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(ox + x, oy + y, c) = images[k].at(x, y, c);
  }
  return out;
}

// --- sample / decompose ----------------------------------------------------

/// Writes sample_XXXX.png for each generated image; returns the paths.
template <typename T>
std::vector<fs::path> write_samples(const ModelBundle<T>& bundle, int count, std::uint64_t seed, const fs::path& out) {
  fs::create_directories(out);
  const Composite<T> images = sample_images(bundle, count, seed);
  std::vector<fs::path> files;
  for (int b = 0; b < count; ++b) {
    files.push_back(out / ("sample_" + numbered(b, 4) + ".png"));
    write_png(files.back(), to_image8(images, b));
  }
  return files;
}

inline fs::path layer_file(const fs::path& dir, int sample, int t) {
  return dir / ("sample" + numbered(sample, 3) + "_layer" + std::to_string(t + 1) + ".png");
}
inline fs::path composite_file(const fs::path& dir, int sample, int t) {
  return dir / ("sample" + numbered(sample, 3) + "_composite" + std::to_string(t + 1) + ".png");
}

/**
 * Per sample: n RGBA layer files, n intermediate composites and a preview
 * (layers over a checkerboard on top, composites below). Layers are
 * quantized before compositing so the exported files re-compose exactly,
 * up to rounding of the composites themselves.
 */
template <typename T>
void decompose_to_dir(const ModelBundle<T>& bundle, int count, std::uint64_t seed, const fs::path& out) {
  fs::create_directories(out);
  const Generation<T> gen = sample_model(bundle, count, seed);
  const int n = bundle.n();
  for (int s = 0; s < count; ++s) {
    std::vector<LayerImage<double>> quantized;
    std::vector<Image8> top, bottom;
    for (int t = 0; t < n; ++t) {
      const Image8 img = to_image8(gen.layers[t], s);
      write_png(layer_file(out, s, t), img);
      quantized.push_back(to_layer<double>(img));
      top.push_back(over_checkerboard(img));
    }
    const auto stack = compose_stack(quantized);
    for (int t = 0; t < n; ++t) {
      const Image8 img = to_image8(stack.intermediates[t]);
      write_png(composite_file(out, s, t), img);
      bottom.push_back(img);
    }
    top.insert(top.end(), bottom.begin(), bottom.end());
    write_png(out / ("sample" + numbered(s, 3) + "_preview.png"), tile(top, n));
  }
}

/// Largest per-channel difference between the re-composed exported layers
/// of one sample and its exported composites, in [0, 1] units.
inline double recompose_error(const fs::path& dir, int sample, int n) {
  std::vector<LayerImage<double>> layers;
  for (int t = 0; t < n; ++t) layers.push_back(to_layer<double>(read_png(layer_file(dir, sample, t))));
  const auto stack = compose_stack(layers);
  double worst = 0;
  for (int t = 0; t < n; ++t) {
    const Composite<double> exported = to_composite<double>(read_png(composite_file(dir, sample, t)));
    if (!(exported.shape == stack.intermediates[t].shape))
      throw DimensionError("recompose_error: exported composite has the wrong size");
    worst = std::max(worst, (exported.rgb - stack.intermediates[t].rgb).cwiseAbs().maxCoeff());
  }
  return worst;
}

// --- encoders ----------------------------------------------------------------

template <typename T>
void require_encoders(const ModelBundle<T>& bundle, const char* op) {
  if (bundle.encoders.empty())
    throw ConfigurationError(std::string(op) +
                             " needs per-layer encoders, which only cgan-vae and cgan-vae-a checkpoints contain");
}

/// Latent means of every encoder for a batch of images.
template <typename T>
std::vector<Matrix<T>> encode_means(const ModelBundle<T>& bundle, const Composite<T>& x) {
  require_encoders(bundle, "encoding");
  std::vector<Matrix<T>> z;
  for (int i = 0; i < bundle.n(); ++i) z.push_back(encode(bundle, i, x, Mode::eval).mu);
  return z;
}

template <typename T>
Generation<T> reconstruct(const ModelBundle<T>& bundle, const Composite<T>& x) {
  require_encoders(bundle, "reconstruct");
  return forward_generate(bundle, encode_means(bundle, x), Mode::eval);
}

/// Encodes `a` with all encoders, then takes latent `index` from `b`.
template <typename T>
Generation<T> swap_latent(const ModelBundle<T>& bundle, const Composite<T>& a, const Composite<T>& b, int index) {
  require_encoders(bundle, "swap");
  if (index < 0 || index >= bundle.n()) throw ArgumentError("swap: encoder index out of range");
  if (!(a.shape == b.shape)) throw DimensionError("swap: both images must have the same shape");
  auto z = encode_means(bundle, a);
  z[index] = encode(bundle, index, b, Mode::eval).mu;
  return forward_generate(bundle, z, Mode::eval);
}

/// rows x cols images; every row shares z1 and redraws the remaining latents.
template <typename T>
Composite<T> fix_first_latent(const ModelBundle<T>& bundle, int rows, int cols, std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw ArgumentError("fix-z1: rows and cols must be positive");
  std::mt19937_64 rng(seed);
  const int L = bundle.arch.latent_dim;
  const Matrix<T> firsts = sample_prior<T>(rows, L, rng);
  std::vector<Matrix<T>> z(bundle.n(), Matrix<T>(L, rows * cols));
  for (int r = 0; r < rows; ++r) z[0].middleCols(r * cols, cols) = firsts.col(r).replicate(1, cols);
  for (int t = 1; t < bundle.n(); ++t) z[t] = sample_prior<T>(rows * cols, L, rng);
  return forward_generate(bundle, z, Mode::eval).final();
}

template <typename T>
Image8 composite_grid(const Composite<T>& images, int cols) {
  std::vector<Image8> tiles;
  for (int b = 0; b < images.shape.batch; ++b) tiles.push_back(to_image8(images, b));
  return tile(tiles, cols);
}

/// Input image loaded at the model resolution.
inline Composite<float> load_input(const fs::path& path, int size) { return prepare_image<float>(read_png(path), size); }

// --- evaluation --------------------------------------------------------------

template <typename T>
QReport evaluate_model(const ModelBundle<T>& bundle, const Composite<T>& test, int sample_count, std::uint64_t seed,
                       const SsimParams& p = {}) {
  return q_metric(sample_images(bundle, sample_count, seed), test, p);
}

// --- training ----------------------------------------------------------------

struct TrainRun {
  std::int64_t iterations = 0;
  fs::path last_checkpoint;
};

inline fs::path checkpoint_file(const fs::path& dir, std::int64_t iteration) {
  return dir / ("ckpt_" + std::to_string(iteration));
}

/**
 * Trains from a run configuration, writing ckpt_{iter} files every
 * checkpoint_every iterations (and at the end), one train.log line per
 * iteration and a copy of the effective configuration. With `resume`, the
 * model and optimizer state continue from that checkpoint.
 */
inline TrainRun run_training(const RunConfig& rc, const fs::path& out, const std::optional<fs::path>& resume = {},
                             std::ostream* progress = nullptr) {
  rc.train.validate();
  fs::create_directories(out);
  write_file_atomic(out / "config.txt", to_text(rc));
  const Composite<float> dataset = load_dataset<float>(dataset_spec(rc));

  ModelBundle<float> bundle;
  TrainState<float> state;
  if (resume) {
    const Architecture arch = rc.train.architecture();
    auto ck = load_checkpoint<float>(*resume, &arch);
    if (!ck.state) throw ConfigurationError("resume: checkpoint '" + resume->string() + "' holds no training state");
    bundle = std::move(ck.bundle);
    state = std::move(*ck.state);
  } else {
    bundle = ModelBundle<float>::create(rc.train.architecture(), rc.train.seed);
    state = TrainState<float>::create(bundle, rc.train.seed);
  }

  std::ofstream log(out / "train.log", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open '" + (out / "train.log").string() + "'");
  TrainRun run;
  FitCallbacks<float> cb;
  cb.checkpoint_every = rc.checkpoint_every;
  cb.on_report = [&](const LossReport& r) {
    log << r.to_line() << '\n';
    log.flush();
    if (progress && r.iteration % 50 == 0) *progress << r.to_line() << '\n';
  };
  cb.on_checkpoint = [&](const ModelBundle<float>& b, const TrainState<float>& s) {
    run.last_checkpoint = checkpoint_file(out, s.iteration);
    save_checkpoint(run.last_checkpoint, b, &s);
  };
  fit(rc.train, dataset, bundle, state, cb);
  const fs::path final_path = checkpoint_file(out, state.iteration);
  if (run.last_checkpoint != final_path) {
    save_checkpoint(final_path, bundle, &state);
    run.last_checkpoint = final_path;
  }
  run.iterations = state.iteration;
  return run;
}

} // namespace cgan
