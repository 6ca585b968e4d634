// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Flat "key = value" run configuration: every TrainConfig field
 *         plus data and checkpoint settings. Unknown keys are rejected.
 */
#pragma once

#include <charconv>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "data.hpp"
#include "trainer.hpp"

namespace cgan {

struct RunConfig {
  TrainConfig train;
  std::string data = "synthetic";  // "synthetic" or a directory of PNG images
  int synthetic_count = 2000;
  int synthetic_layers = 3;
  std::uint64_t data_seed = 1;
  std::int64_t checkpoint_every = 500;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigurationError("config: invalid value '" + v + "' for '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigurationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

} // namespace detail

/// Sets rc.train.alpha for the +A variants; rejects alpha keys elsewhere.
inline void apply_alpha_defaults(RunConfig& rc, std::optional<double> budget = {}, std::optional<double> weight = {}) {
  auto& t = rc.train;
  if (has_alpha_loss(t.variant)) {
    AlphaLossConfig a = t.alpha.value_or(t.default_alpha());
    if (budget) a.budget = *budget;
    if (weight) a.weight = *weight;
    t.alpha = a;
  } else {
    if (budget || weight) throw ConfigurationError("config: alpha_budget/alpha_weight require a +A variant");
    t.alpha.reset();
  }
}

/// Parses a configuration document. Alpha-loss keys are only accepted for
/// the +A variants; when absent there, u = 0.4 * pixels and weight = 0.01 / pixels.
inline RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  auto& t = rc.train;
  std::optional<double> alpha_budget, alpha_weight;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto integer = [](int& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_number<int>(k, v); }); };
  auto real = [](double& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_number<double>(k, v); }); };
  auto flag = [](bool& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_bool(k, v); }); };
  const std::map<std::string, Setter> setters = {
      {"variant", [&](auto&, auto& v) { t.variant = parse_variant(v); }},
      {"generators", integer(t.generators)},
      {"batch_size", integer(t.batch_size)},
      {"latent_dim", integer(t.latent_dim)},
      {"hidden_dim", integer(t.hidden_dim)},
      {"image_size", integer(t.image_size)},
      {"gen_width", integer(t.gen_width)},
      {"disc_width", integer(t.disc_width)},
      {"lr_d", real(t.lr_d)},
      {"lr_g", real(t.lr_g)},
      {"lr_g_gan", real(t.lr_g_gan)},
      {"lr_g_vae", real(t.lr_g_vae)},
      {"lr_e", real(t.lr_e)},
      {"alpha_budget", [&](auto& k, auto& v) { alpha_budget = detail::parse_number<double>(k, v); }},
      {"alpha_weight", [&](auto& k, auto& v) { alpha_weight = detail::parse_number<double>(k, v); }},
      {"iterations", [&](auto& k, auto& v) { t.iterations = detail::parse_number<std::int64_t>(k, v); }},
      {"seed", [&](auto& k, auto& v) { t.seed = detail::parse_number<std::uint64_t>(k, v); }},
      {"beta1", real(t.adam.beta1)},
      {"beta2", real(t.adam.beta2)},
      {"adam_eps", real(t.adam.eps)},
      {"non_saturating", flag(t.non_saturating)},
      {"single_backward", flag(t.single_backward)},
      {"clip_norm", real(t.clip_norm)},
      {"data", [&](auto&, auto& v) { rc.data = v; }},
      {"synthetic_count", integer(rc.synthetic_count)},
      {"synthetic_layers", integer(rc.synthetic_layers)},
      {"data_seed", [&](auto& k, auto& v) { rc.data_seed = detail::parse_number<std::uint64_t>(k, v); }},
      {"checkpoint_every", [&](auto& k, auto& v) { rc.checkpoint_every = detail::parse_number<std::int64_t>(k, v); }},
  };

  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigurationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq)), value = detail::trim(body.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigurationError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigurationError("config: duplicate key '" + key + "'");
    it->second(key, value);
  }
  apply_alpha_defaults(rc, alpha_budget, alpha_weight);
  return rc;
}

inline std::string to_text(const RunConfig& rc) {
  const auto& t = rc.train;
  std::ostringstream os;
  os << "variant = " << to_string(t.variant) << "\n"
     << "generators = " << t.generators << "\nbatch_size = " << t.batch_size << "\nlatent_dim = " << t.latent_dim
     << "\nhidden_dim = " << t.hidden_dim << "\nimage_size = " << t.image_size << "\ngen_width = " << t.gen_width
     << "\ndisc_width = " << t.disc_width << "\nlr_d = " << t.lr_d << "\nlr_g = " << t.lr_g
     << "\nlr_g_gan = " << t.lr_g_gan << "\nlr_g_vae = " << t.lr_g_vae << "\nlr_e = " << t.lr_e << "\n";
  if (t.alpha) os << "alpha_budget = " << t.alpha->budget << "\nalpha_weight = " << t.alpha->weight << "\n";
  os << "iterations = " << t.iterations << "\nseed = " << t.seed << "\nbeta1 = " << t.adam.beta1
     << "\nbeta2 = " << t.adam.beta2 << "\nadam_eps = " << t.adam.eps
     << "\nnon_saturating = " << (t.non_saturating ? "true" : "false")
     << "\nsingle_backward = " << (t.single_backward ? "true" : "false") << "\nclip_norm = " << t.clip_norm
     << "\ndata = " << rc.data << "\nsynthetic_count = " << rc.synthetic_count
     << "\nsynthetic_layers = " << rc.synthetic_layers << "\ndata_seed = " << rc.data_seed
     << "\ncheckpoint_every = " << rc.checkpoint_every << "\n";
  return os.str();
}

/// Dataset described by a run configuration, at the model's resolution.
inline DatasetSpec dataset_spec(const RunConfig& rc) {
  DatasetSpec spec;
  spec.resolution = rc.train.image_size;
  spec.shuffle_seed = rc.data_seed;
  spec.synthetic_count = rc.synthetic_count;
  if (rc.data == "synthetic") {
    SyntheticRecipe recipe;
    recipe.layers = rc.synthetic_layers;
    recipe.seed = rc.data_seed;
    spec.source = recipe;
  } else {
    spec.source = std::filesystem::path(rc.data);
  }
  return spec;
}

} // namespace cgan
