#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/params.hpp"

namespace pen4rec {

// Bias-corrected Adam. One state object serves a fixed parameter registry;
// moment slots are keyed by registry position, so the parameter list passed
// to adam_step must keep the same order and shapes across calls.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments

  explicit AdamState(double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
      : beta1(b1), beta2(b2), eps(e) {}
};

// Applies one update from each parameter's accumulated grad, then advances
// the shared step counter. Gradients are left untouched; callers zero them.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (Parameter* p : params) {
      state.m.push_back(Tensor::zeros_like(p->value));
      state.v.push_back(Tensor::zeros_like(p->value));
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: parameter count changed since state was created");

  state.step += 1;
  double t = static_cast<double>(state.step);
  double corr1 = 1.0 - std::pow(state.beta1, t);
  double corr2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (m.numel() != p.value.numel())
      throw ContractError("adam_step: parameter shape changed since state was created");
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      double mhat = m[j] / corr1;
      double vhat = v[j] / corr2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace pen4rec
