#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "acmt/diff/tape.hpp"
#include "acmt/rng.hpp"

namespace acmt::diff {

/// Central-difference step used by every check.
inline constexpr double kFiniteDifferenceStep = 1e-5;

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps entries whose
/// true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

using InputGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Checks d(loss)/d(inputs) of a scalar graph against central differences, entry by entry.
inline GradCheckResult check_input_gradients(const InputGraph& graph, std::vector<Tensor> inputs,
                                             double h = kFiniteDifferenceStep, double floor = 1e-3) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var loss = graph(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) {
      const Tensor& g = tape.grad(v);
      analytic.push_back(g.empty() ? Tensor(v.value().shape(), Storage(v.value().size(), 0.0)) : g);
    }
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    return graph(tape, vars).value()[0];
  };

  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = eval(inputs);
      inputs[k][i] = x0 - h;
      const double fm = eval(inputs);
      inputs[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
      r.max_rel_error = std::max(r.max_rel_error, relative_error(a, numeric, floor));
      ++r.entries;
    }
  return r;
}

struct BlockCheck {
  std::string name;
  double rel_error = 0.0;  // ||a - n|| / max(||a||, ||n||, floor) over the sampled entries
  double analytic_norm = 0.0;
  double abs_error = 0.0;
  std::size_t entries = 0;
};

/// Checks parameter gradients of `loss_fn` block by block, sampling at most
/// `per_block` entries of each block. `loss_fn` must rebuild the graph from the current
/// parameter values on a fresh tape and return the scalar loss value.
inline std::vector<BlockCheck> check_param_gradients(ParamStore& params, const std::function<void()>& forward_backward,
                                                     const std::function<double()>& loss_value, std::size_t per_block,
                                                     Rng& rng, double h = kFiniteDifferenceStep,
                                                     double floor = 1e-300) {
  params.zero_grad();
  forward_backward();
  std::vector<BlockCheck> out;
  for (auto& p : params.all()) {
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > per_block) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(per_block);
      std::sort(idx.begin(), idx.end());
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto i : idx) {
      const double x0 = p.value[i];
      p.value[i] = x0 + h;
      const double fp = loss_value();
      p.value[i] = x0 - h;
      const double fm = loss_value();
      p.value[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = p.grad[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    out.push_back({p.name, std::sqrt(diff2) / denom, std::sqrt(a2), std::sqrt(diff2), idx.size()});
  }
  return out;
}

}  // namespace acmt::diff
