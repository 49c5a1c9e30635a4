#pragma once

// Finite-difference suite over every tape primitive and over the full model + hybrid loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "acmt/diff/gradcheck.hpp"
#include "acmt/diff/tape.hpp"
#include "acmt/losses.hpp"
#include "acmt/network.hpp"
#include "acmt/rng.hpp"

namespace acmt::gradsuite {

using diff::Tape;
using diff::Tensor;
using diff::Var;

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kEndToEndTolerance = 1e-4;
// Central differences at h = 1e-5 carry ~1e-13 absolute round-off on these losses; block
// gradients with a smaller norm than this cannot be resolved to kEndToEndTolerance.
inline constexpr double kBlockNormFloor = 1e-8;

inline Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Entries bounded away from zero, for primitives with a kink there.
inline Tensor off_zero_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (auto& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return t;
}

/// Entries of a shuffled grid with spacing 0.05, so maxima are unique by a wide margin.
inline Tensor distinct_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  std::vector<std::size_t> perm(r * c);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  for (std::size_t i = 0; i < perm.size(); ++i) t[i] = 0.05 * static_cast<double>(perm[i]) - 1.0 + rng.uniform(0.0, 0.01);
  return t;
}

/// Contracts an arbitrary output with fixed random weights so every output entry matters.
inline Var contract(Var out, const Tensor& weights) {
  return diff::sum(diff::mul(out, out.tape().constant(weights)));
}

struct Case {
  diff::InputGraph graph;
  std::vector<Tensor> inputs;
};

using CaseFactory = std::function<Case(Rng&)>;

struct PrimitiveSpec {
  std::string name;
  CaseFactory make;
};

inline std::vector<PrimitiveSpec> primitive_specs() {
  // Output shapes are known up front, so the contraction weights come from the same stream.
  auto with_weights = [](Rng& rng, std::size_t r, std::size_t c, std::function<Var(Tape&, const std::vector<Var>&)> f) {
    Tensor w = random_tensor(rng, r, c);
    return diff::InputGraph([w, f](Tape& t, const std::vector<Var>& x) { return contract(f(t, x), w); });
  };
  std::vector<PrimitiveSpec> s;
  s.push_back({"matmul", [=](Rng& rng) {
                 return Case{with_weights(rng, 4, 3, [](Tape&, const auto& x) { return diff::matmul(x[0], x[1]); }),
                             {random_tensor(rng, 4, 5), random_tensor(rng, 5, 3)}};
               }});
  s.push_back({"matmul_nt", [=](Rng& rng) {
                 return Case{with_weights(rng, 4, 6, [](Tape&, const auto& x) { return diff::matmul_nt(x[0], x[1]); }),
                             {random_tensor(rng, 4, 5), random_tensor(rng, 6, 5)}};
               }});
  s.push_back({"pointwise_linear", [=](Rng& rng) {
                 return Case{with_weights(rng, 6, 3,
                                          [](Tape&, const auto& x) { return diff::pointwise_linear(x[0], x[1], x[2]); }),
                             {random_tensor(rng, 6, 4), random_tensor(rng, 4, 3), random_tensor(rng, 1, 3)}};
               }});
  s.push_back({"relu", [=](Rng& rng) {
                 return Case{with_weights(rng, 5, 4, [](Tape&, const auto& x) { return diff::relu(x[0]); }),
                             {off_zero_tensor(rng, 5, 4)}};
               }});
  s.push_back({"sigmoid", [=](Rng& rng) {
                 return Case{with_weights(rng, 5, 4, [](Tape&, const auto& x) { return diff::sigmoid(x[0]); }),
                             {random_tensor(rng, 5, 4, -4.0, 4.0)}};
               }});
  s.push_back({"max_reduce", [=](Rng& rng) {
                 return Case{with_weights(rng, 3, 4,
                                          [](Tape&, const auto& x) {
                                            return diff::max_reduce(x[0], std::vector<std::size_t>{0, 2, 5, 9});
                                          }),
                             {distinct_tensor(rng, 9, 4)}};
               }});
  s.push_back({"concat", [=](Rng& rng) {
                 return Case{with_weights(rng, 4, 5, [](Tape&, const auto& x) { return diff::concat(x[0], x[1]); }),
                             {random_tensor(rng, 4, 2), random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"scale_add", [=](Rng& rng) {
                 const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
                 return Case{with_weights(rng, 4, 3,
                                          [a, b](Tape&, const auto& x) { return diff::scale_add(a, x[0], b, x[1]); }),
                             {random_tensor(rng, 4, 3), random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"affine", [=](Rng& rng) {
                 const double a = rng.uniform(-2, 2), c = rng.uniform(-1, 1);
                 return Case{with_weights(rng, 4, 3, [a, c](Tape&, const auto& x) { return diff::affine(x[0], a, c); }),
                             {random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"mul", [=](Rng& rng) {
                 return Case{with_weights(rng, 4, 3, [](Tape&, const auto& x) { return diff::mul(x[0], x[1]); }),
                             {random_tensor(rng, 4, 3), random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"gather_rows", [=](Rng& rng) {
                 std::vector<std::size_t> idx(7);
                 for (auto& i : idx) i = rng.below(4);  // repeats on purpose
                 return Case{with_weights(rng, 7, 3,
                                          [idx](Tape&, const auto& x) { return diff::gather_rows(x[0], idx); }),
                             {random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"weighted_rows", [=](Rng& rng) {
                 std::vector<std::size_t> idx(5 * 3);
                 std::vector<double> w(idx.size());
                 for (auto& i : idx) i = rng.below(6);
                 for (auto& v : w) v = rng.uniform(-1, 1);
                 return Case{with_weights(rng, 5, 4,
                                          [idx, w](Tape&, const auto& x) { return diff::weighted_rows(x[0], idx, w, 3); }),
                             {random_tensor(rng, 6, 4)}};
               }});
  s.push_back({"sum", [](Rng& rng) {
                 return Case{[](Tape&, const std::vector<Var>& x) { return diff::sum(x[0]); }, {random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"mean", [](Rng& rng) {
                 return Case{[](Tape&, const std::vector<Var>& x) { return diff::mean(x[0]); }, {random_tensor(rng, 4, 3)}};
               }});
  s.push_back({"row_norm", [=](Rng& rng) {
                 return Case{with_weights(rng, 5, 1, [](Tape&, const auto& x) { return diff::row_norm(x[0]); }),
                             {off_zero_tensor(rng, 5, 3)}};
               }});
  s.push_back({"abs", [=](Rng& rng) {
                 return Case{with_weights(rng, 5, 3, [](Tape&, const auto& x) { return diff::abs(x[0]); }),
                             {off_zero_tensor(rng, 5, 3)}};
               }});
  s.push_back({"sum_squares", [](Rng& rng) {
                 return Case{[](Tape&, const std::vector<Var>& x) { return diff::sum_squares(x[0]); },
                             {random_tensor(rng, 4, 3)}};
               }});
  return s;
}

struct PrimitiveResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  bool pass = false;
};

inline std::vector<PrimitiveResult> check_primitives(std::size_t n_seeds, std::uint64_t base_seed = 0) {
  std::vector<PrimitiveResult> out;
  for (const auto& spec : primitive_specs()) {
    PrimitiveResult r{spec.name, 0.0, n_seeds, false};
    for (std::size_t s = 0; s < n_seeds; ++s) {
      Rng rng(derive_seed(base_seed, s));
      auto c = spec.make(rng);
      r.max_rel_error = std::max(r.max_rel_error, diff::check_input_gradients(c.graph, c.inputs).max_rel_error);
    }
    r.pass = r.max_rel_error < kPrimitiveTolerance;
    out.push_back(r);
  }
  return out;
}

/// Random normalized case: two jittered spheres and a smooth bony displacement.
inline net::CaseInputs random_case(std::size_t n, Rng& rng) {
  std::vector<Vec3> f(n), b(n), d(n);
  auto on_sphere = [&](double r) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    return (r / norm(v)) * v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = on_sphere(0.9);
    b[i] = on_sphere(0.7);
    d[i] = {0.05 * std::sin(3.0 * b[i][0]), 0.05 * b[i][1], -0.03 * b[i][2] * b[i][0]};
  }
  return {PointSet(f, Units::normalized), PointSet(b, Units::normalized), DisplacementField(d, Units::normalized)};
}

struct EndToEndResult {
  std::vector<diff::BlockCheck> blocks;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Parameter gradients of forward + hybrid loss, block by block, with the loss's
/// nearest-neighbour choices frozen at the unperturbed prediction.
inline EndToEndResult check_end_to_end(net::Variant variant, std::size_t n_points, std::uint64_t seed,
                                       std::size_t per_block = 4) {
  const auto cfg = net::ModelConfig::make("toy", n_points, variant, seed);
  auto params = net::init_params(cfg);
  Rng rng(derive_seed(seed, 77));
  const auto in = random_case(n_points, rng);
  std::vector<Vec3> post(n_points);
  for (std::size_t i = 0; i < n_points; ++i) post[i] = in.facial[i] + Vec3{0.02 * in.facial[i][2], 0.01, 0.0};
  const auto target = loss::LossTarget::make(in.facial, PointSet(post, Units::normalized));

  loss::Assignments frozen;
  {
    Tape tape(false);
    const auto out = net::forward(tape, cfg, params, in);
    frozen = loss::compute_assignments(loss::rows_as_points(out.predicted.value(), Units::normalized), target.post);
  }
  // relu / max / abs choices are frozen the same way: recorded on the analytic pass,
  // replayed on every perturbed pass.
  diff::BranchLog branches;
  auto forward_backward = [&] {
    Tape tape;
    branches.start_recording();
    tape.set_branch_log(&branches);
    const auto out = net::forward(tape, cfg, params, in);
    tape.backward(loss::hybrid_loss(out.predicted, out.movement, target, {}, &frozen).total);
  };
  auto loss_value = [&] {
    Tape tape(false);
    branches.start_replay();
    tape.set_branch_log(&branches);
    const auto out = net::forward(tape, cfg, params, in);
    return loss::hybrid_loss(out.predicted, out.movement, target, {}, &frozen).total.value()[0];
  };
  EndToEndResult r;
  r.blocks = diff::check_param_gradients(params, forward_backward, loss_value, per_block, rng,
                                         diff::kFiniteDifferenceStep, kBlockNormFloor);
  for (const auto& b : r.blocks) r.max_rel_error = std::max(r.max_rel_error, b.rel_error);
  r.pass = r.max_rel_error < kEndToEndTolerance;
  return r;
}

}  // namespace acmt::gradsuite
