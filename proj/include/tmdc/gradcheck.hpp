// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for reverse-mode gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tmdc/tensor.hpp"

namespace tmdc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the analytic gradient of `loss_fn()` with respect to every
/// tensor in `leaves` against central differences of step `h`. The error
/// per coordinate is |analytic - numeric| / max(1, |numeric|).
///
/// `loss_fn` must be deterministic: any sampling inside it has to replay a
/// frozen draw. Two forward passes that disagree raise an Error.
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                         double h = 1e-5) {
  for (Tensor& t : leaves) t.zero_grad();
  const Tensor loss = loss_fn();
  if (loss.numel() != 1) throw GraphError("finite_diff_check: loss is not scalar, shape " + to_string(loss.shape()));
  const double base = loss.item();
  if (loss.requires_grad()) backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& t : leaves) analytic.push_back(t.grad_or_zero());

  NoGradGuard no_grad;
  if (loss_fn().item() != base) throw Error("finite_diff_check: loss function is non-deterministic");

  GradCheckResult result;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    auto values = leaves[ti].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double plus = loss_fn().item();
      values[i] = orig - h;
      const double minus = loss_fn().item();
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(analytic[ti][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (result.coordinates++ == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.analytic = analytic[ti][i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

/// Single-input form: f is evaluated on a fresh differentiable copy of x.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  return finite_diff_check([&] { return f(leaf); }, {leaf}, h).max_rel_error;
}

}  // namespace tmdc
