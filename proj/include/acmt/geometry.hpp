#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "acmt/error.hpp"

namespace acmt {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
}

enum class Units { normalized, physical };

inline const char* units_name(Units u) { return u == Units::normalized ? "normalized" : "physical"; }

/// N x 3 coordinates tagged with their unit system, plus optional N x C feature channels.
class PointSet {
 public:
  PointSet(std::vector<Vec3> coords, Units units) : coords_(std::move(coords)), units_(units) {
    require(!coords_.empty(), ErrorCategory::precondition, "point set must hold at least one point");
    for (const auto& p : coords_)
      require(is_finite(p), ErrorCategory::numeric, "point set holds a non-finite coordinate");
  }

  std::size_t size() const { return coords_.size(); }
  Units units() const { return units_; }
  const std::vector<Vec3>& coords() const { return coords_; }
  const Vec3& operator[](std::size_t i) const { return coords_[i]; }

  std::size_t feature_channels() const { return channels_; }
  const std::vector<double>& features() const { return features_; }
  void set_features(std::vector<double> values, std::size_t channels) {
    require(channels > 0 && values.size() == channels * coords_.size(), ErrorCategory::shape,
            "feature block must be N x C");
    features_ = std::move(values);
    channels_ = channels;
  }

  // Flat row-major N x 3 copy.
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(coords_.size() * 3);
    for (const auto& p : coords_) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  PointSet subset(const std::vector<std::size_t>& indices) const {
    std::vector<Vec3> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(coords_.at(i));
    return PointSet(std::move(out), units_);
  }

 private:
  std::vector<Vec3> coords_;
  Units units_;
  std::vector<double> features_;
  std::size_t channels_ = 0;
};

/// Per-point movement vectors; shares the unit tag of the point set it belongs to.
class DisplacementField {
 public:
  DisplacementField(std::vector<Vec3> vectors, Units units) : vectors_(std::move(vectors)), units_(units) {
    for (const auto& v : vectors_)
      require(is_finite(v), ErrorCategory::numeric, "displacement field holds a non-finite vector");
  }

  static DisplacementField zeros(std::size_t n, Units units) {
    return DisplacementField(std::vector<Vec3>(n, Vec3{0, 0, 0}), units);
  }

  static DisplacementField between(const PointSet& from, const PointSet& to) {
    require(from.size() == to.size(), ErrorCategory::shape, "displacement endpoints must be index-aligned");
    require(from.units() == to.units(), ErrorCategory::mismatch, "displacement endpoints differ in units");
    std::vector<Vec3> v(from.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = to[i] - from[i];
    return DisplacementField(std::move(v), from.units());
  }

  std::size_t size() const { return vectors_.size(); }
  Units units() const { return units_; }
  const std::vector<Vec3>& vectors() const { return vectors_; }
  const Vec3& operator[](std::size_t i) const { return vectors_[i]; }

  PointSet applied_to(const PointSet& ps) const {
    require(ps.size() == size(), ErrorCategory::shape, "displacement field and point set differ in length");
    require(ps.units() == units_, ErrorCategory::mismatch, "displacement field and point set differ in units");
    std::vector<Vec3> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ps[i] + vectors_[i];
    return PointSet(std::move(out), units_);
  }

 private:
  std::vector<Vec3> vectors_;
  Units units_;
};

/// Maps physical millimetres to the unit ball: x_n = (x - center) / scale.
struct NormTransform {
  Vec3 center{0, 0, 0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (1.0 / scale) * (p - center); }
  Vec3 invert(const Vec3& p) const { return scale * p + center; }

  PointSet apply(const PointSet& ps) const {
    require(ps.units() == Units::physical, ErrorCategory::mismatch, "normalization expects physical units");
    std::vector<Vec3> out(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) out[i] = apply(ps[i]);
    return PointSet(std::move(out), Units::normalized);
  }
  PointSet invert(const PointSet& ps) const {
    require(ps.units() == Units::normalized, ErrorCategory::mismatch, "denormalization expects normalized units");
    std::vector<Vec3> out(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) out[i] = invert(ps[i]);
    return PointSet(std::move(out), Units::physical);
  }
};

struct NormalizedPair {
  PointSet facial;
  PointSet bony_pre;
  PointSet bony_post;
  NormTransform transform;
};

/// Shared frame for the driven (facial) and driver (bony) sets: centroid and radius of
/// facial ∪ bony_pre. bony_post goes through the same transform.
inline NormalizedPair normalize_pair(const PointSet& facial, const PointSet& bony_pre, const PointSet& bony_post) {
  for (const PointSet* ps : {&facial, &bony_pre, &bony_post})
    require(ps->units() == Units::physical, ErrorCategory::mismatch, "normalize_pair expects physical inputs");

  Vec3 sum{0, 0, 0};
  for (const auto& p : facial.coords()) sum = sum + p;
  for (const auto& p : bony_pre.coords()) sum = sum + p;
  const double count = static_cast<double>(facial.size() + bony_pre.size());
  NormTransform t;
  t.center = (1.0 / count) * sum;

  double r2 = 0.0;
  for (const auto& p : facial.coords()) r2 = std::max(r2, dist2(p, t.center));
  for (const auto& p : bony_pre.coords()) r2 = std::max(r2, dist2(p, t.center));
  t.scale = std::sqrt(r2);
  require(t.scale > 0.0 && std::isfinite(t.scale), ErrorCategory::precondition,
          "degenerate input: all points coincide, normalization scale is zero");

  return NormalizedPair{t.apply(facial), t.apply(bony_pre), t.apply(bony_post), t};
}

/// Translation cancels for displacements, so only the scale applies.
inline DisplacementField normalize_displacement(const DisplacementField& v, const NormTransform& t) {
  require(v.units() == Units::physical, ErrorCategory::mismatch, "displacement is not in physical units");
  std::vector<Vec3> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (1.0 / t.scale) * v[i];
  return DisplacementField(std::move(out), Units::normalized);
}

inline DisplacementField denormalize_displacement(const DisplacementField& v, const NormTransform& t) {
  require(v.units() == Units::normalized, ErrorCategory::mismatch, "displacement is not in normalized units");
  std::vector<Vec3> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = t.scale * v[i];
  return DisplacementField(std::move(out), Units::physical);
}

// ---------------------------------------------------------------------------
// Sampling and neighbour queries. All brute-force scans: sizes stay <= 8192.

/// Iterative farthest point sampling. Ties go to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(const PointSet& ps, std::size_t k, std::size_t start) {
  const std::size_t n = ps.size();
  require(k >= 1 && k <= n, ErrorCategory::precondition,
          "farthest_point_sample: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  require(start < n, ErrorCategory::precondition, "farthest_point_sample: start index out of range");

  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t step = 0; step < k; ++step) {
    chosen.push_back(current);
    const Vec3 c = ps[current];
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = dist2(ps[i], c);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

/// Indices of `ps` in lexicographic coordinate order (stable on exact duplicates).
inline std::vector<std::size_t> lexicographic_order(const PointSet& ps) {
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ps[a] < ps[b]; });
  return order;
}

/// FPS on the lexicographically sorted set starting at its first element, so the
/// selection does not depend on the file order of the points. Returns original indices.
inline std::vector<std::size_t> farthest_point_sample_canonical(const PointSet& ps, std::size_t k) {
  const auto order = lexicographic_order(ps);
  const PointSet sorted = ps.subset(order);
  auto picked = farthest_point_sample(sorted, k, 0);
  for (auto& i : picked) i = order[i];
  return picked;
}

using NeighborLists = std::vector<std::vector<std::size_t>>;

/// k nearest points of `ps` to `q`, nearest first, ties by lowest index.
inline std::vector<std::size_t> nearest_k(const Vec3& q, const PointSet& ps, std::size_t k) {
  k = std::min(k, ps.size());
  std::vector<std::pair<double, std::size_t>> best;
  best.reserve(k + 1);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double d2 = dist2(q, ps[i]);
    if (best.size() == k && !(std::make_pair(d2, i) < best.back())) continue;
    auto pos = std::upper_bound(best.begin(), best.end(), std::make_pair(d2, i));
    best.insert(pos, {d2, i});
    if (best.size() > k) best.pop_back();
  }
  std::vector<std::size_t> out(best.size());
  for (std::size_t i = 0; i < best.size(); ++i) out[i] = best[i].second;
  return out;
}

inline std::size_t nearest_index(const Vec3& q, const PointSet& ps) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double d2 = dist2(q, ps[i]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

/// For every query point, its k nearest points in `ps`. With exclude_self the query set
/// must be `ps` itself and index i is skipped in row i.
inline NeighborLists knn(const PointSet& queries, const PointSet& ps, std::size_t k, bool exclude_self = false) {
  NeighborLists out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto nn = nearest_k(queries[i], ps, exclude_self ? k + 1 : k);
    if (exclude_self) {
      auto it = std::find(nn.begin(), nn.end(), i);
      if (it != nn.end())
        nn.erase(it);
      else
        nn.resize(std::min(nn.size(), k));
    }
    out[i] = std::move(nn);
  }
  return out;
}

/// Radius neighbourhoods, nearest first and capped at max_n. A center with no point in
/// range gets its single nearest point so that no group is ever empty.
inline NeighborLists ball_query(const PointSet& centers, const PointSet& ps, double radius, std::size_t max_n) {
  require(radius > 0.0, ErrorCategory::precondition, "ball_query: radius must be positive");
  require(max_n >= 1, ErrorCategory::precondition, "ball_query: max_n must be at least 1");
  const double r2 = radius * radius;
  NeighborLists out(centers.size());
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    cand.clear();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double d2 = dist2(centers[c], ps[i]);
      if (d2 <= r2) cand.emplace_back(d2, i);
    }
    if (cand.empty()) {
      out[c] = {nearest_index(centers[c], ps)};
      continue;
    }
    const std::size_t keep = std::min(max_n, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
    out[c].resize(keep);
    for (std::size_t t = 0; t < keep; ++t) out[c][t] = cand[t].second;
  }
  return out;
}

/// Sparse interpolation stencil: row i mixes src rows index[i*k + t] with weight[i*k + t].
struct InterpStencil {
  std::size_t k = 0;
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

constexpr double kIdwDistanceFloor = 1e-8;

/// Normalized 1/d^2 weights over the k nearest sources of each destination point.
inline InterpStencil idw_stencil(const PointSet& src, const PointSet& dst, std::size_t k) {
  require(k >= 1 && k <= src.size(), ErrorCategory::precondition,
          "idw: k must lie in [1, number of source points]");
  InterpStencil s;
  s.k = k;
  s.index.resize(dst.size() * k);
  s.weight.resize(dst.size() * k);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto nn = nearest_k(dst[i], src, k);
    double total = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double d = std::max(std::sqrt(dist2(dst[i], src[nn[t]])), kIdwDistanceFloor);
      s.index[i * k + t] = nn[t];
      s.weight[i * k + t] = 1.0 / (d * d);
      total += s.weight[i * k + t];
    }
    for (std::size_t t = 0; t < k; ++t) s.weight[i * k + t] /= total;
  }
  return s;
}

/// Inverse-distance-weighted interpolation of N x C source values onto dst (M x C out).
inline std::vector<double> idw_interpolate(const PointSet& src, const std::vector<double>& src_vals,
                                           const PointSet& dst, std::size_t k) {
  require(src.units() == dst.units(), ErrorCategory::mismatch, "idw: source and destination units differ");
  require(!src_vals.empty() && src_vals.size() % src.size() == 0, ErrorCategory::shape,
          "idw: source values must be N x C");
  const std::size_t channels = src_vals.size() / src.size();
  const auto stencil = idw_stencil(src, dst, k);
  std::vector<double> out(dst.size() * channels, 0.0);
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double w = stencil.weight[i * k + t];
      const double* row = &src_vals[stencil.index[i * k + t] * channels];
      for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] += w * row[c];
    }
  return out;
}

inline DisplacementField idw_interpolate(const PointSet& src, const DisplacementField& field, const PointSet& dst,
                                         std::size_t k) {
  require(field.size() == src.size(), ErrorCategory::shape, "idw: field not aligned with source points");
  std::vector<double> flat;
  flat.reserve(field.size() * 3);
  for (const auto& v : field.vectors()) flat.insert(flat.end(), v.begin(), v.end());
  const auto out = idw_interpolate(src, flat, dst, k);
  std::vector<Vec3> vecs(dst.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) vecs[i] = {out[3 * i], out[3 * i + 1], out[3 * i + 2]};
  return DisplacementField(std::move(vecs), field.units());
}

/// Dense row-major 0/1 matrix.
struct BinaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Index of the nearest bony point for every facial point (ties -> lowest index).
inline std::vector<std::size_t> nearest_indices(const PointSet& facial, const PointSet& bony) {
  std::vector<std::size_t> out(facial.size());
  for (std::size_t i = 0; i < facial.size(); ++i) out[i] = nearest_index(facial[i], bony);
  return out;
}

/// R(i, j) = 1 iff bony point j is the nearest bony point to facial point i.
inline BinaryMatrix closest_point_matrix(const PointSet& facial, const PointSet& bony) {
  BinaryMatrix r{facial.size(), bony.size(), std::vector<std::uint8_t>(facial.size() * bony.size(), 0)};
  const auto nn = nearest_indices(facial, bony);
  for (std::size_t i = 0; i < nn.size(); ++i) r.values[i * r.cols + nn[i]] = 1;
  return r;
}

}  // namespace acmt
