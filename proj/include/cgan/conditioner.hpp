// SPDX-License-Identifier: Apache-2.0
/**
 * @file   conditioner.hpp
 * @brief  Recurrent latent conditioner: an LSTM cell run over the noise
 *         sequence z(1..n), producing one generator input h(t) per step.
 */
#pragma once

#include <random>
#include <vector>

#include "layers.hpp"

namespace cgan {

/// Hidden and memory-cell state, one column per batch item.
template <typename T>
struct ConditionerState {
  Matrix<T> hidden;  // hidden_dim x batch
  Matrix<T> cell;

  static ConditionerState zeros(int hidden_dim, int batch) {
    return {Matrix<T>::Zero(hidden_dim, batch), Matrix<T>::Zero(hidden_dim, batch)};
  }
};

template <typename T>
struct Conditioner {
  using Scalar = T;
  // Gate blocks stacked as [input; forget; candidate; output].
  Matrix<T> input_weight;      // 4H x latent
  Matrix<T> recurrent_weight;  // 4H x H
  Matrix<T> bias;              // 4H x 1

  struct StepTrace {
    Matrix<T> z, hidden_prev, cell_prev;
    Matrix<T> in_gate, forget_gate, candidate, out_gate, cell, cell_tanh;
  };
  struct Trace {
    std::vector<StepTrace> steps;
  };

  Conditioner() = default;
  Conditioner(int latent_dim, int hidden_dim, std::mt19937_64& rng, double stddev = 0.02)
      : input_weight(4 * hidden_dim, latent_dim), recurrent_weight(4 * hidden_dim, hidden_dim),
        bias(Matrix<T>::Zero(4 * hidden_dim, 1)) {
    init_normal(input_weight, rng, stddev);
    init_normal(recurrent_weight, rng, stddev);
  }

  int latent_dim() const { return static_cast<int>(input_weight.cols()); }
  int hidden_dim() const { return static_cast<int>(recurrent_weight.cols()); }

  ConditionerState<T> step(const ConditionerState<T>& state, const Matrix<T>& z, StepTrace* tr = nullptr) const {
    const int h = hidden_dim();
    if (z.rows() != latent_dim()) throw DimensionError("conditioner: latent vector has wrong dimension");
    if (state.hidden.rows() != h || state.cell.rows() != h || state.hidden.cols() != z.cols() ||
        state.cell.cols() != z.cols())
      throw DimensionError("conditioner: state does not match hidden_dim/batch");

    Matrix<T> a = input_weight * z;
    a.noalias() += recurrent_weight * state.hidden;
    a.colwise() += bias.col(0);

    Matrix<T> i = sigmoid(a.topRows(h));
    Matrix<T> f = sigmoid(a.middleRows(h, h));
    Matrix<T> g = a.middleRows(2 * h, h).array().tanh();
    Matrix<T> o = sigmoid(a.bottomRows(h));

    ConditionerState<T> next;
    next.cell = f.cwiseProduct(state.cell) + i.cwiseProduct(g);
    Matrix<T> tc = next.cell.array().tanh();
    next.hidden = o.cwiseProduct(tc);
    if (tr) {
      tr->z = z;
      tr->hidden_prev = state.hidden;
      tr->cell_prev = state.cell;
      tr->in_gate = std::move(i);
      tr->forget_gate = std::move(f);
      tr->candidate = std::move(g);
      tr->out_gate = std::move(o);
      tr->cell = next.cell;
      tr->cell_tanh = std::move(tc);
    }
    return next;
  }

  /// Runs the sequence from a zero state; returns h(1..n).
  std::vector<Matrix<T>> forward(const std::vector<Matrix<T>>& z, Trace* tr = nullptr) const {
    if (z.empty()) throw ArgumentError("conditioner: empty latent sequence");
    auto state = ConditionerState<T>::zeros(hidden_dim(), static_cast<int>(z.front().cols()));
    std::vector<Matrix<T>> h;
    h.reserve(z.size());
    if (tr) tr->steps.assign(z.size(), {});
    for (std::size_t t = 0; t < z.size(); ++t) {
      state = step(state, z[t], tr ? &tr->steps[t] : nullptr);
      h.push_back(state.hidden);
    }
    return h;
  }

  /// Back-propagation through time. `dh[t]` is the loss gradient arriving at
  /// h(t) from outside the recurrence; returns gradients for z(1..n).
  std::vector<Matrix<T>> backward(const Trace& tr, const std::vector<Matrix<T>>& dh, Conditioner* grad) const {
    const std::size_t n = tr.steps.size();
    if (dh.size() != n) throw DimensionError("conditioner backward: gradient count does not match sequence");
    const int h = hidden_dim();
    std::vector<Matrix<T>> dz(n);
    Matrix<T> dh_next = Matrix<T>::Zero(h, dh.front().cols());
    Matrix<T> dc_next = dh_next;
    Matrix<T> da(4 * h, dh.front().cols());
    for (std::size_t t = n; t-- > 0;) {
      const auto& s = tr.steps[t];
      const Matrix<T> dht = dh[t] + dh_next;
      const Matrix<T> dc =
          dc_next + (dht.array() * s.out_gate.array() * (1 - s.cell_tanh.array().square())).matrix();
      da.topRows(h) = dc.array() * s.candidate.array() * s.in_gate.array() * (1 - s.in_gate.array());
      da.middleRows(h, h) = dc.array() * s.cell_prev.array() * s.forget_gate.array() * (1 - s.forget_gate.array());
      da.middleRows(2 * h, h) = dc.array() * s.in_gate.array() * (1 - s.candidate.array().square());
      da.bottomRows(h) = dht.array() * s.cell_tanh.array() * s.out_gate.array() * (1 - s.out_gate.array());
      if (grad) {
        grad->input_weight.noalias() += da * s.z.transpose();
        grad->recurrent_weight.noalias() += da * s.hidden_prev.transpose();
        grad->bias.col(0) += da.rowwise().sum();
      }
      dz[t] = input_weight.transpose() * da;
      dh_next = recurrent_weight.transpose() * da;
      dc_next = dc.cwiseProduct(s.forget_gate);
    }
    return dz;
  }

  template <typename F> void visit(F&& f) {
    f("input_weight", input_weight);
    f("recurrent_weight", recurrent_weight);
    f("bias", bias);
  }
  template <typename F> void visit_buffers(F&&) {}
};

} // namespace cgan
