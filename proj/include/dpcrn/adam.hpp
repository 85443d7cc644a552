// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpcrn/common.hpp"
#include "dpcrn/tensor.hpp"

namespace dpcrn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments in double regardless of the parameter type.
struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

// One Adam step with bias correction over named tensors. Throws a
// divergence error before touching anything if any gradient is non-finite.
template <typename T, typename ParamMap, typename GradMapT>
void adam_step(ParamMap& params, const GradMapT& grads, AdamState& state,
               double lr, const AdamConfig& cfg = {}) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) fail("gradient for unknown parameter " + name);
    if (params.at(name).shape() != g.shape())
      fail("gradient shape mismatch for " + name);
    for (T x : g.vec())
      if (!std::isfinite(static_cast<double>(x)))
        fail(ErrorKind::kDivergence, "diverged: non-finite gradient in " + name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace dpcrn
