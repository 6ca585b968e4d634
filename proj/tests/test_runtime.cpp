// SPDX-License-Identifier: Apache-2.0
/**
 * @file   test_runtime.cpp
 * @brief  Resizing, synthetic data, PNG and checkpoint persistence, config
 *         parsing and the command-line tool.
 */
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "support.hpp"

using namespace cgan;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

/// Fresh, empty scratch directory named after the running test.
fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "cgan_tests" / (std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image8 solid(int w, int h, std::array<std::uint8_t, 4> rgba) {
  Image8 img{w, h, 4, {}};
  for (int i = 0; i < w * h; ++i) img.pixels.insert(img.pixels.end(), rgba.begin(), rgba.end());
  return img;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CGAN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig tiny_run(Variant v) {
  RunConfig rc;
  rc.train = tiny_config(v);
  rc.train.iterations = 4;
  rc.synthetic_count = 12;
  rc.checkpoint_every = 2;
  return rc;
}

} // namespace

TEST(Resize, ConstantImageStaysConstant) {
  for (auto [w, h, s] : {std::tuple{37, 23, 16}, std::tuple{5, 5, 16}, std::tuple{64, 64, 32}}) {
    const auto c = prepare_image<double>(solid(w, h, {51, 102, 204, 255}), s);
    EXPECT_EQ(c.shape, (ImageShape{1, s, s}));
    EXPECT_NEAR(c.rgb.row(0).minCoeff(), 0.2, 1e-12);
    EXPECT_NEAR(c.rgb.row(0).maxCoeff(), 0.2, 1e-12);
    EXPECT_NEAR(c.rgb.row(2).mean(), 0.8, 1e-12);
  }
}

TEST(Resize, CheckerboardAveragesToGray) {
  Image8 img = solid(2, 2, {0, 0, 0, 255});
  for (int c = 0; c < 3; ++c) img.at(1, 0, c) = img.at(0, 1, c) = 255;
  const auto r = prepare_image<double>(img, 1);
  EXPECT_NEAR(r.rgb(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(r.rgb(1, 0), 0.5, 1e-12);
}

TEST(Resize, TransparentPixelsBecomeWhite) {
  const auto r = prepare_image<double>(solid(4, 4, {0, 0, 0, 0}), 2);
  EXPECT_NEAR(r.rgb.minCoeff(), 1.0, 1e-12);
}

TEST(Synthetic, StructureAndDeterminism) {
  SyntheticRecipe recipe;
  recipe.resolution = 16;
  const auto a = make_synthetic<double>(recipe, 6), b = make_synthetic<double>(recipe, 6);
  EXPECT_EQ(a.images.rgb, b.images.rgb);
  EXPECT_EQ(a.layers.size(), 3u);
  EXPECT_TRUE((a.layers[0].alpha.array() == 1.0).all());
  const auto& re = compose_stack(a.layers).final().rgb;
  EXPECT_LE((re - a.images.rgb).cwiseAbs().maxCoeff(), 1.0 / 255);
  recipe.seed = 2;
  EXPECT_NE(make_synthetic<double>(recipe, 6).images.rgb, a.images.rgb);
  recipe.layers = 1;
  const auto bg = make_synthetic<double>(recipe, 3);
  EXPECT_EQ(bg.images.rgb, bg.layers[0].rgb);
  EXPECT_THROW(make_synthetic<double>(recipe, 0), ArgumentError);
}

TEST(Synthetic, ShapeLayersAreNotEmpty) {
  SyntheticRecipe recipe;
  recipe.resolution = 32;
  const auto s = make_synthetic<double>(recipe, 20);
  for (int k = 1; k < 3; ++k)
    for (int b = 0; b < 20; ++b) EXPECT_GT(s.layers[k].item(b).alpha.sum(), 0.0);
}

TEST(Dataset, DirectoryLoadingIsDeterministic) {
  const auto dir = scratch();
  for (int i = 0; i < 5; ++i) write_png(dir / ("img" + std::to_string(i) + ".png"), solid(8 + i, 8, {std::uint8_t(40 * i), 0, 0, 255}));
  std::ofstream(dir / "notes.txt") << "ignored";
  DatasetSpec spec;
  spec.source = dir;
  spec.resolution = 4;
  spec.shuffle_seed = 3;
  const auto a = load_dataset<double>(spec), b = load_dataset<double>(spec);
  EXPECT_EQ(a.shape.batch, 5);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(list_pngs(dir).size(), 5u);
  spec.source = dir / "missing";
  EXPECT_THROW(load_dataset<double>(spec), IoError);
  const auto empty = dir / "empty";
  fs::create_directories(empty);
  spec.source = empty;
  EXPECT_THROW(load_dataset<double>(spec), ArgumentError);
  std::ofstream(dir / "broken.png") << "not a png";
  spec.source = dir;
  try {
    load_dataset<double>(spec);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}

TEST(Png, LayerRoundTripWithinQuantization) {
  std::mt19937_64 rng(1);
  const auto layer = random_layer({1, 9, 7}, rng);
  const auto back = to_layer<double>(decode_png(encode_png(to_image8(layer))));
  EXPECT_LE((back.rgb - layer.rgb).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
  EXPECT_LE((back.alpha - layer.alpha).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
  const auto comp = random_composite({1, 5, 6}, rng);
  const auto cb = to_composite<double>(decode_png(encode_png(to_image8(comp))));
  EXPECT_LE((cb.rgb - comp.rgb).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
  EXPECT_THROW(decode_png("garbage"), IoError);
}

TEST(Png, AtomicWriteLeavesNoTemporary) {
  const auto dir = scratch();
  write_png(dir / "a.png", solid(3, 3, {1, 2, 3, 4}));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(read_png(dir / "a.png").pixels, solid(3, 3, {1, 2, 3, 4}).pixels);
}

TEST(Config, ParseAndSerialize) {
  const auto rc = parse_run_config(
      "# comment\nvariant = cgan-a\ngenerators = 3\nbatch_size=8\nimage_size = 32\nalpha_weight = 0.5  # trailing\n"
      "lr_d = 0.001\nnon_saturating = true\ndata = synthetic\nsynthetic_count = 100\n");
  EXPECT_EQ(rc.train.variant, Variant::cgan_a);
  EXPECT_EQ(rc.train.generators, 3);
  EXPECT_EQ(rc.train.batch_size, 8);
  EXPECT_DOUBLE_EQ(rc.train.lr_d, 0.001);
  EXPECT_TRUE(rc.train.non_saturating);
  ASSERT_TRUE(rc.train.alpha.has_value());
  EXPECT_DOUBLE_EQ(rc.train.alpha->weight, 0.5);
  EXPECT_DOUBLE_EQ(rc.train.alpha->budget, 0.4 * 32 * 32);
  EXPECT_NO_THROW(rc.train.validate());
  const auto again = parse_run_config(to_text(rc));
  EXPECT_EQ(to_text(again), to_text(rc));
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_run_config("colour = red\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("generators\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("generators = two\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("generators = 2\ngenerators = 3\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("variant = cgan\nalpha_budget = 10\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("variant = nope\n"), ConfigurationError);
  EXPECT_THROW(parse_run_config("non_saturating = maybe\n"), ConfigurationError);
}

TEST(Checkpoint, RoundTripAndSampling) {
  const auto dir = scratch();
  auto bundle = ModelBundle<float>::create(tiny_arch(2, true), 3);
  const auto before = sample_images(bundle, 3, 11);
  save_checkpoint(dir / "m", bundle);
  const auto ck = load_checkpoint<float>(dir / "m");
  EXPECT_FALSE(ck.state.has_value());
  EXPECT_EQ(sample_images(ck.bundle, 3, 11).rgb, before.rgb);
  EXPECT_EQ(encode_png(to_image8(before, 2)), encode_png(to_image8(sample_images(ck.bundle, 3, 11), 2)));
  EXPECT_EQ(serialize_checkpoint(ck.bundle), serialize_checkpoint(bundle));
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  const auto bundle = ModelBundle<float>::create(tiny_arch(2), 3);
  const auto bytes = serialize_checkpoint(bundle);
  Architecture other = tiny_arch(3);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes, "x", &other), ConfigurationError);
  EXPECT_THROW(deserialize_checkpoint<double>(bytes), ConfigurationError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 9)), IoError);
  EXPECT_THROW(deserialize_checkpoint<float>("NOTACKPT"), IoError);
  std::string flipped = bytes;
  flipped[8] = 7;  // version
  EXPECT_THROW(deserialize_checkpoint<float>(flipped), IoError);
  const Architecture same = tiny_arch(2);
  EXPECT_NO_THROW(deserialize_checkpoint<float>(bytes, "x", &same));
}

TEST(Runtime, DecomposeRecomposesWithinQuantization) {
  const auto dir = scratch();
  const auto bundle = ModelBundle<float>::create(tiny_arch(3), 8);
  decompose_to_dir(bundle, 4, 2, dir);
  for (int s = 0; s < 4; ++s) {
    EXPECT_LE(recompose_error(dir, s, 3), 1.0 / 255);
    EXPECT_TRUE(fs::exists(dir / ("sample" + numbered(s, 3) + "_preview.png")));
    EXPECT_EQ(read_png(layer_file(dir, s, 1)).channels, 4);
  }
  const auto preview = read_png(dir / "sample000_preview.png");
  EXPECT_EQ(preview.width, 3 * 16 + 2 * 2);
  EXPECT_EQ(preview.height, 2 * 16 + 2);
}

TEST(Runtime, CheckerboardPreview) {
  const auto bg = over_checkerboard(solid(16, 16, {0, 0, 0, 0}));
  EXPECT_EQ(bg.at(0, 0, 0), to_byte(0.8));
  EXPECT_EQ(bg.at(8, 0, 0), to_byte(0.6));
  EXPECT_EQ(bg.at(8, 8, 1), to_byte(0.8));
  const auto opaque = over_checkerboard(solid(16, 16, {10, 20, 30, 255}));
  EXPECT_EQ(opaque.at(9, 3, 2), 30);
}

TEST(Runtime, EncoderOperationsNeedVariationalModel) {
  const auto plain = ModelBundle<float>::create(tiny_arch(2), 1);
  std::mt19937_64 rng(2);
  const auto x = random_composite<float>({1, 16, 16}, rng);
  EXPECT_THROW(reconstruct(plain, x), ConfigurationError);
  EXPECT_THROW(swap_latent(plain, x, x, 0), ConfigurationError);
  // An untrained model barely reacts to its latents; double keeps that visible.
  const auto vae = ModelBundle<double>::create(tiny_arch(2, true), 1);
  const auto xd = random_composite<double>({1, 16, 16}, rng);
  const auto y = random_composite<double>({1, 16, 16}, rng);
  const auto r = reconstruct(vae, xd);
  EXPECT_EQ(r.final().shape, xd.shape);
  // Swapping in x's own latent is a no-op; another image's latent is not.
  EXPECT_EQ(swap_latent(vae, xd, xd, 1).final().rgb, r.final().rgb);
  EXPECT_GT((swap_latent(vae, xd, y, 1).final().rgb - r.final().rgb).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(swap_latent(vae, xd, y, 2), ArgumentError);
}

TEST(Runtime, TrainingWritesCheckpointsAndLog) {
  const auto dir = scratch();
  const auto rc = tiny_run(Variant::cgan_vae_a);
  const auto run = run_training(rc, dir);
  EXPECT_EQ(run.iterations, 4);
  EXPECT_TRUE(fs::exists(dir / "ckpt_2"));
  EXPECT_TRUE(fs::exists(dir / "ckpt_4"));
  EXPECT_EQ(run.last_checkpoint, dir / "ckpt_4");
  std::ifstream log(dir / "train.log");
  std::vector<std::string> lines;
  for (std::string l; std::getline(log, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(parse_report_line(lines[3]).iteration, 4);
  EXPECT_EQ(to_text(parse_run_config(read_file(dir / "config.txt"))), to_text(rc));

  // Resuming from iteration 2 reproduces the same final checkpoint.
  const auto dir2 = dir / "resumed";
  fs::create_directories(dir2);
  fs::copy_file(dir / "ckpt_2", dir2 / "ckpt_2");
  run_training(rc, dir2, dir2 / "ckpt_2");
  EXPECT_EQ(read_file(dir2 / "ckpt_4"), read_file(dir / "ckpt_4"));
}

TEST(Cli, EndToEnd) {
  const auto dir = scratch();
  std::ofstream(dir / "run.cfg") << to_text(tiny_run(Variant::cgan_vae));
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("train --config " + d + "/run.cfg --out " + d + "/run"), 0);
  const std::string ck = d + "/run/ckpt_4";
  ASSERT_EQ(run_cli("sample --ckpt " + ck + " --count 3 --seed 5 --out " + d + "/s1"), 0);
  ASSERT_EQ(run_cli("sample --ckpt " + ck + " --count 3 --seed 5 --out " + d + "/s2"), 0);
  for (int i = 0; i < 3; ++i) {
    const std::string f = "sample_" + numbered(i, 4) + ".png";
    EXPECT_EQ(read_file(dir / "s1" / f), read_file(dir / "s2" / f));
  }
  ASSERT_EQ(run_cli("decompose --ckpt " + ck + " --count 2 --seed 1 --out " + d + "/dec"), 0);
  EXPECT_LE(recompose_error(dir / "dec", 1, 2), 1.0 / 255);
  ASSERT_EQ(run_cli("synth --count 3 --resolution 16 --out " + d + "/syn"), 0);
  ASSERT_EQ(run_cli("reconstruct --ckpt " + ck + " --image " + d + "/syn/image_00000.png --out " + d + "/rec"), 0);
  EXPECT_TRUE(fs::exists(dir / "rec" / "reconstruction.png"));
  ASSERT_EQ(run_cli("swap --ckpt " + ck + " --image-a " + d + "/syn/image_00000.png --image-b " + d +
                    "/syn/image_00001.png --index 1 --out " + d + "/swap"),
            0);
  ASSERT_EQ(run_cli("fix-z1 --ckpt " + ck + " --rows 2 --cols 3 --seed 4 --out " + d + "/fz1"), 0);
  ASSERT_EQ(run_cli("fix-z1 --ckpt " + ck + " --rows 2 --cols 3 --seed 4 --out " + d + "/fz2"), 0);
  EXPECT_EQ(read_file(dir / "fz1" / "fix_z1.png"), read_file(dir / "fz2" / "fix_z1.png"));
  ASSERT_EQ(run_cli("eval --samples " + d + "/syn --test " + d + "/syn --csv " + d + "/q.csv"), 0);
  EXPECT_TRUE(fs::exists(dir / "q.csv"));
  const std::string report = d + "/q.txt";
  ASSERT_EQ(std::system((std::string(CGAN_CLI_PATH) + " eval --samples " + d + "/syn --test " + d + "/syn > " + report).c_str()), 0);
  EXPECT_NE(read_file(report).find("q = 1\n"), std::string::npos);
  ASSERT_EQ(run_cli("eval --ckpt " + ck + " --test " + d + "/syn --count 4 --seed 2"), 0);
}

TEST(Cli, VariantMismatchIsConfigurationError) {
  const auto dir = scratch();
  std::ofstream(dir / "run.cfg") << to_text(tiny_run(Variant::cgan));
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("train --config " + d + "/run.cfg --out " + d + "/run --n 1 --seed 3"), 0);
  ASSERT_EQ(run_cli("synth --count 2 --resolution 16 --out " + d + "/syn"), 0);
  EXPECT_EQ(run_cli("swap --ckpt " + d + "/run/ckpt_4 --image-a " + d + "/syn/image_00000.png --image-b " + d +
                    "/syn/image_00001.png --out " + d + "/swap"),
            2);
  EXPECT_EQ(run_cli("reconstruct --ckpt " + d + "/run/ckpt_4 --image " + d + "/syn/image_00000.png --out " + d + "/r"), 2);
  EXPECT_NE(run_cli("bogus"), 0);
}
