// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  Adaptive-moment optimizer and gradient-norm helpers over modules
 *         that expose visit().
 */
#pragma once

#include <cmath>
#include <cstdint>

#include "tensor.hpp"

namespace cgan {

struct AdamHyper {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/**
 * One descent step on `params`. `m` and `v` are moment buffers with the
 * layout of `params`; `steps` is the group's update counter used for bias
 * correction. A zero learning rate leaves `params` bitwise unchanged.
 */
template <typename Module>
void adam_step(Module& params, Module& grads, Module& m, Module& v, std::int64_t& steps, double lr,
               const AdamHyper& h) {
  using T = typename Module::Scalar;
  ++steps;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1 - std::pow(h.beta1, static_cast<double>(steps)));
  const T c2 = static_cast<T>(1 - std::pow(h.beta2, static_cast<double>(steps)));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(h.eps);
  auto p = parameters(params);
  auto g = parameters(grads);
  auto mm = parameters(m);
  auto vv = parameters(v);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& gk = *g[k].value;
    auto& mk = *mm[k].value;
    auto& vk = *vv[k].value;
    mk = b1 * mk + (1 - b1) * gk;
    vk = b2 * vk + (1 - b2) * gk.cwiseProduct(gk);
    p[k].value->array() -= rate * ((mk.array() / c1) / ((vk.array() / c2).sqrt() + eps));
  }
}

template <typename Module>
double squared_norm(Module& grads) {
  double s = 0;
  grads.visit([&](std::string_view, auto& m) { s += static_cast<double>(m.squaredNorm()); });
  return s;
}

template <typename Module>
void scale(Module& grads, double factor) {
  using T = typename Module::Scalar;
  grads.visit([&](std::string_view, auto& m) { m *= static_cast<T>(factor); });
}

} // namespace cgan
