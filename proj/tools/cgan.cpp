// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cgan.cpp
 * @brief  Command-line front end: train, sample, decompose, reconstruct,
 *         swap, fix-z1, eval and synth.
 */
#include <iostream>

#include "CLI11.hpp"
#include "cgan/cgan.hpp"

namespace {

using namespace cgan;
namespace fs = std::filesystem;

struct Options {
  std::string config, ckpt, out = ".", variant, resume, image, image_b, samples, test, csv;
  std::uint64_t seed = 0;
  int count = 16, n = 0, rows = 4, cols = 6, index = 0, layers = 3, resolution = 32;
};

ModelBundle<float> open_model(const Options& o) {
  if (o.ckpt.empty()) throw ArgumentError("--ckpt is required");
  return load_checkpoint<float>(o.ckpt).bundle;
}

void cmd_train(const Options& o, CLI::App& sub) {
  RunConfig rc;
  if (!o.config.empty()) rc = parse_run_config(read_file(o.config));
  if (sub.count("--variant")) {
    rc.train.variant = parse_variant(o.variant);
    apply_alpha_defaults(rc, rc.train.alpha ? std::optional(rc.train.alpha->budget) : std::nullopt,
                         rc.train.alpha ? std::optional(rc.train.alpha->weight) : std::nullopt);
  }
  if (sub.count("--n")) rc.train.generators = o.n;
  if (sub.count("--seed")) rc.train.seed = o.seed;
  std::optional<fs::path> resume;
  if (!o.resume.empty()) resume = o.resume;
  const TrainRun run = run_training(rc, o.out, resume, &std::cerr);
  std::cout << "trained to iteration " << run.iterations << ", checkpoint " << run.last_checkpoint.string() << "\n";
}

void cmd_eval(const Options& o) {
  if (o.test.empty()) throw ArgumentError("--test is required");
  QReport report;
  if (!o.samples.empty()) {
    // Sample and test directories are compared at the test images' own resolution.
    const auto first = list_pngs(o.test);
    if (first.empty()) throw IoError("test directory '" + o.test + "' has no PNG files");
    const int size = read_png(first.front()).width;
    report = q_metric(load_image_dir<double>(o.samples, size), load_image_dir<double>(o.test, size));
  } else {
    const auto bundle = open_model(o);
    const auto test = load_image_dir<float>(o.test, bundle.arch.image_size);
    report = evaluate_model(bundle, test, o.count, o.seed);
  }
  if (!o.csv.empty()) write_file_atomic(o.csv, report.to_csv());
  std::cout << report.to_text();
}

void cmd_synth(const Options& o) {
  SyntheticRecipe recipe;
  recipe.layers = o.layers;
  recipe.resolution = o.resolution;
  recipe.seed = o.seed;
  const auto set = make_synthetic<float>(recipe, o.count);
  fs::create_directories(o.out);
  for (int b = 0; b < o.count; ++b) write_png(fs::path(o.out) / ("image_" + numbered(b, 5) + ".png"), to_image8(set.images, b));
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered composite image generator"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> variants = {"cgan", "cgan-a", "cgan-vae", "cgan-vae-a"};

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", o.config, "key = value configuration")->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "output directory for checkpoints and train.log")->capture_default_str();
  train->add_option("--variant", o.variant, "model variant")->check(CLI::IsMember(variants));
  train->add_option("--n", o.n, "number of generators")->check(CLI::PositiveNumber);
  train->add_option("--seed", o.seed, "training seed");
  train->add_option("--resume", o.resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* sample = app.add_subcommand("sample", "write sample images");
  sample->add_option("--ckpt", o.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  sample->add_option("--count", o.count, "number of images")->capture_default_str()->check(CLI::PositiveNumber);
  sample->add_option("--seed", o.seed, "random seed")->capture_default_str();
  sample->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* decompose = app.add_subcommand("decompose", "write per-layer RGBA images, composites and previews");
  decompose->add_option("--ckpt", o.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  decompose->add_option("--count", o.count, "number of images")->capture_default_str()->check(CLI::PositiveNumber);
  decompose->add_option("--seed", o.seed, "random seed")->capture_default_str();
  decompose->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* recon = app.add_subcommand("reconstruct", "encode an image and regenerate it");
  recon->add_option("--ckpt", o.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  recon->add_option("--image", o.image, "input PNG")->required()->check(CLI::ExistingFile);
  recon->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* swap = app.add_subcommand("swap", "replace one encoder's latent with another image's");
  swap->add_option("--ckpt", o.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  swap->add_option("--image-a", o.image, "image supplying every other latent")->required()->check(CLI::ExistingFile);
  swap->add_option("--image-b", o.image_b, "image supplying the swapped latent")->required()->check(CLI::ExistingFile);
  swap->add_option("--index", o.index, "encoder whose latent is taken from image b")->capture_default_str();
  swap->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* fixz = app.add_subcommand("fix-z1", "grid where each row shares the first latent");
  fixz->add_option("--ckpt", o.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  fixz->add_option("--rows", o.rows, "rows, one shared first latent each")->capture_default_str()
      ->check(CLI::PositiveNumber);
  fixz->add_option("--cols", o.cols, "columns")->capture_default_str()->check(CLI::PositiveNumber);
  fixz->add_option("--seed", o.seed, "random seed")->capture_default_str();
  fixz->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "SSIM best-match quality against a test set");
  auto* ck_opt = eval->add_option("--ckpt", o.ckpt, "checkpoint file")->check(CLI::ExistingFile);
  eval->add_option("--samples", o.samples, "directory of sample images")
      ->check(CLI::ExistingDirectory)->excludes(ck_opt);
  eval->add_option("--test", o.test, "directory of test PNGs")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--count", o.count, "number of samples drawn from --ckpt")->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_option("--seed", o.seed, "random seed")->capture_default_str();
  eval->add_option("--csv", o.csv, "per-test-item CSV output");

  auto* synth = app.add_subcommand("synth", "write a synthetic layered-shape dataset");
  synth->add_option("--count", o.count, "number of images")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--layers", o.layers, "layers per image, background included")->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth->add_option("--resolution", o.resolution, "square image size in pixels")->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed, "random seed")->capture_default_str();
  synth->add_option("--out", o.out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      cmd_train(o, *train);
    } else if (*sample) {
      write_samples(open_model(o), o.count, o.seed, o.out);
    } else if (*decompose) {
      decompose_to_dir(open_model(o), o.count, o.seed, o.out);
    } else if (*recon) {
      const auto bundle = open_model(o);
      const auto g = reconstruct(bundle, load_input(o.image, bundle.arch.image_size));
      fs::create_directories(o.out);
      write_png(fs::path(o.out) / "reconstruction.png", to_image8(g.final()));
      for (int t = 0; t < bundle.n(); ++t)
        write_png(fs::path(o.out) / ("reconstruction_layer" + std::to_string(t + 1) + ".png"), to_image8(g.layers[t]));
    } else if (*swap) {
      const auto bundle = open_model(o);
      const auto a = load_input(o.image, bundle.arch.image_size), b = load_input(o.image_b, bundle.arch.image_size);
      const auto g = swap_latent(bundle, a, b, o.index);
      fs::create_directories(o.out);
      write_png(fs::path(o.out) / "swap.png", to_image8(g.final()));
      write_png(fs::path(o.out) / "swap_grid.png",
                tile({to_image8(a), to_image8(b), to_image8(reconstruct(bundle, a).final()), to_image8(g.final())}, 4));
    } else if (*fixz) {
      const auto bundle = open_model(o);
      fs::create_directories(o.out);
      write_png(fs::path(o.out) / "fix_z1.png", composite_grid(fix_first_latent(bundle, o.rows, o.cols, o.seed), o.cols));
    } else if (*eval) {
      cmd_eval(o);
    } else if (*synth) {
      cmd_synth(o);
    }
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
