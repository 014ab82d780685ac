// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tmdc/model.hpp"

namespace tmdc {

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam with bias correction. Moments are keyed by parameter name and
/// created on first update.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One update over `params`. Every listed parameter must carry a gradient
/// buffer (zero_grad() allocates one); parameters not listed are untouched.
inline void adam_step(const std::vector<NamedParam>& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw GraphError("adam_step: no gradient for updatable parameter " + p.name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto& mom = state.moments[p.name];
    if (mom.m.size() != t.numel()) {
      if (!mom.m.empty()) throw DimensionError("adam_step: moment shape drift for " + p.name);
      mom.m.assign(t.numel(), 0.0);
      mom.v.assign(t.numel(), 0.0);
    }
    auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace tmdc
