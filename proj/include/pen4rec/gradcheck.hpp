#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/params.hpp"

namespace pen4rec {

// Central-difference check of analytic gradients.
//
// loss_fn(true) must recompute the loss and add gradients into each
// Parameter::grad; loss_fn(false) must compute the same loss from the current
// parameter values without touching grads. The function must be deterministic
// with respect to the parameter values (fix any internal randomness before
// calling). Returns the worst relative error over every scalar entry, with
// the denominator floored at 1 so near-zero gradients compare absolutely.
inline double grad_check(const std::function<double(bool)>& loss_fn,
                         std::span<Parameter* const> params, double eps = 1e-5) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");

  for (Parameter* p : params) p->zero_grad();
  double base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is not finite");

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      double saved = p.value[j];
      p.value[j] = saved + eps;
      double up = loss_fn(false);
      p.value[j] = saved - eps;
      double down = loss_fn(false);
      p.value[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: perturbed loss not finite at " + p.name +
                           "[" + std::to_string(j) + "]");
      double fd = (up - down) / (2.0 * eps);
      double a = analytic[pi][j];
      double denom = std::max({1.0, std::fabs(a), std::fabs(fd)});
      double rel = std::fabs(a - fd) / denom;
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace pen4rec
