#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "acmt/diff/tensor.hpp"
#include "acmt/error.hpp"

namespace acmt::diff {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState for_params(const ParamStore& params) {
    AdamState s;
    for (const auto& p : params.all()) {
      s.m.emplace_back(p.value.shape(), Storage(p.value.size(), 0.0));
      s.v.emplace_back(p.value.shape(), Storage(p.value.size(), 0.0));
    }
    return s;
  }
};

/// Bias-corrected Adam update using the gradients accumulated in `params`.
/// A non-finite gradient aborts before any parameter is touched.
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorCategory::mismatch,
          "Adam state does not match the parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params.all()[k];
    require(state.m[k].same_shape(p.value) && state.v[k].same_shape(p.value), ErrorCategory::shape,
            "Adam moment shape differs for '" + p.name + "'");
    require(p.grad.all_finite(), ErrorCategory::numeric, "non-finite gradient in '" + p.name + "' (training diverged)");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.all()[k];
    auto& m = state.m[k].values();
    auto& v = state.v[k].values();
    const auto& g = p.grad.values();
    auto& w = p.value.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace acmt::diff
