#pragma once

#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "acmt/diff/tape.hpp"
#include "acmt/error.hpp"
#include "acmt/geometry.hpp"

namespace acmt::loss {

using diff::Tape;
using diff::Tensor;
using diff::Var;

inline constexpr std::size_t kDensityNeighbors = 8;
inline constexpr std::size_t kLptNeighbors = 8;

struct LossWeights {
  double alpha = 0.3;  // density
  double beta = 5.0;   // local point transform
};

/// Mean distance from every point to its k nearest neighbours within the same set.
inline std::vector<double> local_density(const PointSet& ps, std::size_t k) {
  require(k >= 1 && k < ps.size(), ErrorCategory::precondition, "density: k must satisfy 1 <= k < N");
  const auto nn = knn(ps, ps, k, true);
  std::vector<double> out(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    double s = 0.0;
    for (auto j : nn[i]) s += std::sqrt(dist2(ps[i], ps[j]));
    out[i] = s / static_cast<double>(k);
  }
  return out;
}

inline PointSet rows_as_points(const Tensor& t, Units units) {
  require(t.cols() == 3, ErrorCategory::shape, "expected an N x 3 tensor, got " + t.shape_string());
  std::vector<Vec3> pts(t.rows());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t(i, 0), t(i, 1), t(i, 2)};
  return PointSet(std::move(pts), units);
}

/// Discrete choices made inside the losses. They are constants for differentiation: the
/// gradient flows through distances, not through the argmin. density_k = 0 skips the
/// density part.
struct Assignments {
  std::vector<std::size_t> pred_to_target;
  std::vector<std::size_t> target_to_pred;
  NeighborLists pred_knn;
  std::vector<double> target_density_at_pred;
};

inline Assignments compute_assignments(const PointSet& pred, const PointSet& target,
                                       std::size_t density_k = kDensityNeighbors) {
  Assignments a;
  a.pred_to_target = nearest_indices(pred, target);
  a.target_to_pred = nearest_indices(target, pred);
  if (density_k == 0) return a;  // shape term only
  require(density_k >= 1 && density_k < pred.size() && density_k < target.size(), ErrorCategory::precondition,
          "density: k must be smaller than both set sizes");
  a.pred_knn = knn(pred, pred, density_k, true);
  const auto target_density = local_density(target, density_k);
  a.target_density_at_pred.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) a.target_density_at_pred[i] = target_density[a.pred_to_target[i]];
  return a;
}

/// Symmetric Chamfer distance with squared nearest-neighbour distances.
inline Var shape_loss(Var pred, const PointSet& target, const Assignments& a) {
  Tape& tape = pred.tape();
  const std::size_t n = pred.rows();
  require(n > 0 && target.size() > 0, ErrorCategory::precondition, "shape loss needs non-empty sets");
  Tensor matched(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) matched(i, c) = target[a.pred_to_target[i]][c];
  Var forward_term = diff::scale(diff::sum_squares(diff::scale_add(1.0, pred, -1.0, tape.constant(std::move(matched)))),
                                 1.0 / static_cast<double>(n));
  Var back = diff::gather_rows(pred, a.target_to_pred);
  Var backward_term = diff::scale(
      diff::sum_squares(diff::scale_add(1.0, back, -1.0, tape.constant(Tensor::matrix(target.size(), 3, target.flat())))),
      1.0 / static_cast<double>(target.size()));
  return diff::scale_add(1.0, forward_term, 1.0, backward_term);
}

/// Mean |density_pred(i) - density_target(nearest target of i)|.
inline Var density_loss(Var pred, const Assignments& a) {
  Tape& tape = pred.tape();
  const std::size_t n = pred.rows();
  require(a.pred_knn.size() == n && n > 0, ErrorCategory::shape, "density: assignments do not match prediction");
  const std::size_t k = a.pred_knn.front().size();
  std::vector<std::size_t> self, other, group;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    require(a.pred_knn[i].size() == k, ErrorCategory::shape, "density: ragged neighbour lists");
    for (std::size_t t = 0; t < k; ++t) {
      self.push_back(i);
      other.push_back(a.pred_knn[i][t]);
      group.push_back(i * k + t);
      w.push_back(1.0 / static_cast<double>(k));
    }
  }
  Var dist = diff::row_norm(diff::scale_add(1.0, diff::gather_rows(pred, std::move(self)), -1.0,
                                            diff::gather_rows(pred, std::move(other))));
  Var dens = diff::weighted_rows(dist, std::move(group), std::move(w), k);
  Var gap = diff::scale_add(1.0, dens, -1.0, tape.constant(Tensor::matrix(n, 1, a.target_density_at_pred)));
  return diff::mean(diff::abs(gap));
}

/// Mean over neighbour pairs of ||(v_i - v_j) - (t_i - t_j)||^2.
inline Var lpt_loss(Var pred_disp, const DisplacementField& target_disp, const NeighborLists& neighbors) {
  Tape& tape = pred_disp.tape();
  const std::size_t n = pred_disp.rows();
  require(target_disp.size() == n && neighbors.size() == n, ErrorCategory::shape,
          "lpt: displacement fields and neighbour lists must be index-aligned");
  std::vector<double> t;
  t.reserve(3 * n);
  for (const auto& v : target_disp.vectors()) t.insert(t.end(), v.begin(), v.end());
  Var err = diff::scale_add(1.0, pred_disp, -1.0, tape.constant(Tensor::matrix(n, 3, std::move(t))));
  std::vector<std::size_t> is, js;
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : neighbors[i]) {
      is.push_back(i);
      js.push_back(j);
    }
  require(!is.empty(), ErrorCategory::precondition, "lpt: no neighbour pairs");
  const double pairs = static_cast<double>(is.size());
  Var rel = diff::scale_add(1.0, diff::gather_rows(err, std::move(is)), -1.0, diff::gather_rows(err, std::move(js)));
  return diff::scale(diff::sum_squares(rel), 1.0 / pairs);
}

struct HybridLoss {
  Var total;
  Var shape;
  Var density;
  Var lpt;
};

/// Target side of one training case, in normalized units.
struct LossTarget {
  PointSet pre;               // P_F-pre
  PointSet post;              // P_F-post
  DisplacementField disp;     // post - pre
  NeighborLists lpt_neighbors;

  static LossTarget make(const PointSet& pre, const PointSet& post, std::size_t lpt_k = kLptNeighbors) {
    require(lpt_k < pre.size(), ErrorCategory::precondition, "lpt: k must be smaller than the point count");
    return LossTarget{pre, post, DisplacementField::between(pre, post), knn(pre, pre, lpt_k, true)};
  }
};

/// L_shape + alpha L_density + beta L_LPT. With `frozen`, nearest-neighbour choices are
/// taken from it instead of being recomputed from the prediction.
inline HybridLoss hybrid_loss(Var pred, Var pred_disp, const LossTarget& target, const LossWeights& weights,
                              const Assignments* frozen = nullptr) {
  require(weights.alpha >= 0.0 && weights.beta >= 0.0, ErrorCategory::precondition, "loss weights must be >= 0");
  std::optional<Assignments> own;
  if (!frozen) {
    own = compute_assignments(rows_as_points(pred.value(), target.post.units()), target.post);
    frozen = &*own;
  }
  HybridLoss h;
  h.shape = shape_loss(pred, target.post, *frozen);
  h.density = density_loss(pred, *frozen);
  h.lpt = lpt_loss(pred_disp, target.disp, target.lpt_neighbors);
  h.total = diff::scale_add(1.0, diff::scale_add(1.0, h.shape, weights.alpha, h.density), weights.beta, h.lpt);
  return h;
}

// Value-only conveniences.

inline double shape_loss(const PointSet& pred, const PointSet& target) {
  Tape tape(false);
  Var p = tape.constant(Tensor::matrix(pred.size(), 3, pred.flat()));
  const auto a = compute_assignments(pred, target, 0);
  return shape_loss(p, target, a).value()[0];
}

inline double density_loss(const PointSet& pred, const PointSet& target, std::size_t k = kDensityNeighbors) {
  Tape tape(false);
  Var p = tape.constant(Tensor::matrix(pred.size(), 3, pred.flat()));
  return density_loss(p, compute_assignments(pred, target, k)).value()[0];
}

inline double lpt_loss(const DisplacementField& pred, const DisplacementField& target, const NeighborLists& neighbors) {
  Tape tape(false);
  std::vector<double> flat;
  for (const auto& v : pred.vectors()) flat.insert(flat.end(), v.begin(), v.end());
  return lpt_loss(tape.constant(Tensor::matrix(pred.size(), 3, std::move(flat))), target, neighbors).value()[0];
}

}  // namespace acmt::loss
