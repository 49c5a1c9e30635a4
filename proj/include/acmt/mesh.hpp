#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "acmt/error.hpp"
#include "acmt/geometry.hpp"
#include "acmt/rng.hpp"

namespace acmt {

using Face = std::array<std::uint32_t, 3>;

/// Triangle surface in millimetres.
class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    for (const auto& v : vertices_) require(is_finite(v), ErrorCategory::numeric, "mesh vertex is not finite");
    for (const auto& f : faces_) {
      for (auto i : f)
        require(i < vertices_.size(), ErrorCategory::precondition,
                "face index " + std::to_string(i) + " out of range");
      require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorCategory::precondition,
              "degenerate face: repeated vertex index");
    }
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }

  /// Same topology, new vertex positions.
  TriMesh with_vertices(std::vector<Vec3> vertices) const {
    require(vertices.size() == vertices_.size(), ErrorCategory::shape, "vertex count changed");
    return TriMesh(std::move(vertices), faces_);
  }

  PointSet vertex_set() const { return PointSet(vertices_, Units::physical); }

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * norm(cross(b - a, c - a)); }

/// One third of the area of each incident triangle.
inline std::vector<double> vertex_areas(const TriMesh& mesh) {
  std::vector<double> area(mesh.vertex_count(), 0.0);
  const auto& v = mesh.vertices();
  for (const auto& f : mesh.faces()) {
    const double a = triangle_area(v[f[0]], v[f[1]], v[f[2]]) / 3.0;
    for (auto i : f) area[i] += a;
  }
  return area;
}

/// Area-weighted vertex normals, unit length (zero for isolated vertices).
inline std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> n(mesh.vertex_count(), Vec3{0, 0, 0});
  const auto& v = mesh.vertices();
  for (const auto& f : mesh.faces()) {
    const Vec3 fn = cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]);  // |fn| = 2 * area
    for (auto i : f) n[i] = n[i] + fn;
  }
  for (auto& x : n) {
    const double len = norm(x);
    if (len > 0) x = (1.0 / len) * x;
  }
  return n;
}

/// True when every undirected edge is shared by at most two faces.
inline bool edges_manifold(const TriMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
  for (const auto& f : mesh.faces())
    for (int e = 0; e < 3; ++e) {
      auto a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      if (++count[{a, b}] > 2) return false;
    }
  return true;
}

/// Closest point to p on triangle abc (Voronoi-region walk).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  return a + (vb * denom) * ab + (vc * denom) * ac;
}

/// Unsigned distance from p to the nearest point of the mesh surface.
inline double point_mesh_distance(const Vec3& p, const TriMesh& mesh) {
  const auto& v = mesh.vertices();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : mesh.faces()) {
    const Vec3& a = v[f[0]];
    const Vec3& b = v[f[1]];
    const Vec3& c = v[f[2]];
    // Cheap reject: distance to the bounding sphere of the triangle.
    const Vec3 mid = (1.0 / 3.0) * (a + b + c);
    const double rad = std::sqrt(std::max({dist2(mid, a), dist2(mid, b), dist2(mid, c)}));
    const double to_mid = std::sqrt(dist2(p, mid));
    if (to_mid - rad >= best) continue;
    best = std::min(best, std::sqrt(dist2(p, closest_point_on_triangle(p, a, b, c))));
  }
  return best;
}

/// Area-weighted uniform samples on the surface.
inline std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, Rng& rng) {
  require(mesh.face_count() > 0, ErrorCategory::precondition, "cannot sample a mesh without faces");
  const auto& v = mesh.vertices();
  std::vector<double> cdf(mesh.face_count());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.face_count(); ++i) {
    const auto& f = mesh.faces()[i];
    total += triangle_area(v[f[0]], v[f[1]], v[f[2]]);
    cdf[i] = total;
  }
  require(total > 0.0, ErrorCategory::precondition, "mesh has zero surface area");

  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
    const std::size_t fi = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    const auto& f = mesh.faces()[fi];
    double r1 = rng.uniform(), r2 = rng.uniform();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    out.push_back(v[f[0]] + r1 * (v[f[1]] - v[f[0]]) + r2 * (v[f[2]] - v[f[0]]));
  }
  return out;
}

}  // namespace acmt
