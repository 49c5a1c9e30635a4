#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "acmt/mesh.hpp"
#include "acmt/mesh_io.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace acmt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  return testing_support::scratch_root("mesh") / name;
}

TriMesh tetra() {
  return TriMesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}});
}

TriMesh random_mesh(Rng& rng, std::size_t nv, std::size_t nf) {
  auto v = oracle::random_points(rng, nv, 5.0);
  std::vector<Face> f;
  while (f.size() < nf) {
    Face t{static_cast<std::uint32_t>(rng.below(nv)), static_cast<std::uint32_t>(rng.below(nv)),
           static_cast<std::uint32_t>(rng.below(nv))};
    if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2]) f.push_back(t);
  }
  return TriMesh(v, f);
}

template <typename F>
ErrorCategory category_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return static_cast<ErrorCategory>(-1);
}

}  // namespace

TEST(TriMesh, RejectsBadFaces) {
  EXPECT_EQ(category_of([] { TriMesh({{0, 0, 0}}, {{0, 1, 2}}); }), ErrorCategory::precondition);
  EXPECT_EQ(category_of([] { TriMesh({{0, 0, 0}, {1, 0, 0}}, {{0, 1, 1}}); }), ErrorCategory::precondition);
  EXPECT_EQ(category_of([] { tetra().with_vertices({{0, 0, 0}}); }), ErrorCategory::shape);
}

TEST(TriMesh, VertexAreasSumToSurfaceArea) {
  Rng rng(1);
  const auto m = random_mesh(rng, 30, 60);
  double total = 0;
  for (const auto& f : m.faces()) total += triangle_area(m.vertices()[f[0]], m.vertices()[f[1]], m.vertices()[f[2]]);
  double s = 0;
  for (double a : vertex_areas(m)) s += a;
  EXPECT_NEAR(s, total, 1e-10 * total);
}

TEST(TriMesh, ManifoldCheck) {
  EXPECT_TRUE(edges_manifold(tetra()));
  TriMesh fin({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}}, {{0, 1, 2}, {0, 1, 3}, {0, 1, 4}});
  EXPECT_FALSE(edges_manifold(fin));
}

TEST(TriMesh, NormalsPointOutwardOnTetra) {
  const auto n = vertex_normals(tetra());
  EXPECT_LT(n[0][0] + n[0][1] + n[0][2], 0.0);
  EXPECT_NEAR(oracle::d2(n[1], {0, 0, 0}), 1.0, 1e-12);
}

TEST(PointTriangle, MatchesPlaneEdgeOracle) {
  Rng rng(2);
  for (int t = 0; t < 2000; ++t) {
    const auto v = oracle::random_points(rng, 4, 3.0);
    const double d = std::sqrt(dist2(v[3], closest_point_on_triangle(v[3], v[0], v[1], v[2])));
    EXPECT_NEAR(d, oracle::point_triangle_distance(v[3], v[0], v[1], v[2]), 1e-9);
  }
}

TEST(PointMesh, BoundingSphereCullMatchesExhaustive) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto m = random_mesh(rng, 20, 40);
    for (const auto& p : oracle::random_points(rng, 20, 8.0)) {
      double best = 1e300;
      for (const auto& f : m.faces())
        best = std::min(best, oracle::point_triangle_distance(p, m.vertices()[f[0]], m.vertices()[f[1]], m.vertices()[f[2]]));
      EXPECT_NEAR(point_mesh_distance(p, m), best, 1e-9);
    }
  }
}

TEST(PointMesh, PlaneOffset) {
  TriMesh plane({{-10, -10, 0}, {10, -10, 0}, {10, 10, 0}, {-10, 10, 0}}, {{0, 1, 2}, {0, 2, 3}});
  EXPECT_NEAR(point_mesh_distance({1, 2, 1.0}, plane), 1.0, 1e-14);
  EXPECT_NEAR(point_mesh_distance({13, 0, 0}, plane), 3.0, 1e-14);
}

TEST(SampleSurface, PointsLieOnSurface) {
  Rng rng(4);
  const auto m = random_mesh(rng, 15, 25);
  for (const auto& p : sample_surface(m, 500, rng)) EXPECT_LT(point_mesh_distance(p, m), 1e-9);
}

TEST(SampleSurface, AreaProportional) {
  // Two triangles, the second 3x the area of the first.
  TriMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {10, 0, 0}, {13, 0, 0}, {10, 1, 0}}, {{0, 1, 2}, {3, 4, 5}});
  Rng rng(5);
  int big = 0;
  const int n = 20000;
  for (const auto& p : sample_surface(m, n, rng)) big += p[0] > 5;
  EXPECT_NEAR(static_cast<double>(big) / n, 0.75, 0.015);
}

TEST(MeshIo, ObjRoundTripExact) {
  Rng rng(6);
  const auto m = random_mesh(rng, 25, 40);
  const auto path = scratch("m.obj");
  io::write_obj(path, m);
  const auto r = io::read_mesh(path);
  EXPECT_EQ(r.vertices(), m.vertices());
  EXPECT_EQ(r.faces(), m.faces());
}

TEST(MeshIo, ObjPolygonsAndSlashIndices) {
  const auto path = scratch("quad.obj");
  io::write_text_file(path, "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n");
  const auto m = io::read_obj(path);
  ASSERT_EQ(m.face_count(), 2u);
  EXPECT_EQ(m.faces()[1], (Face{0, 2, 3}));
}

TEST(MeshIo, PlyRoundTripWithProperties) {
  Rng rng(7);
  const auto m = random_mesh(rng, 12, 10);
  std::vector<io::VertexProperty> props{{"err", io::PlyType::float64, {}}, {"red", io::PlyType::uint8, {}},
                                        {"segment", io::PlyType::int32, {}}};
  for (std::size_t i = 0; i < 12; ++i) {
    props[0].values.push_back(rng.uniform());
    props[1].values.push_back(static_cast<double>(i * 20));
    props[2].values.push_back(-static_cast<double>(i));
  }
  const auto path = scratch("m.ply");
  io::write_ply(path, m, props);
  const auto r = io::read_ply(path);
  EXPECT_EQ(r.mesh.vertices(), m.vertices());
  EXPECT_EQ(r.mesh.faces(), m.faces());
  for (const auto& p : props) {
    const auto* q = r.find(p.name);
    ASSERT_NE(q, nullptr) << p.name;
    EXPECT_EQ(q->type, p.type);
    EXPECT_EQ(q->values, p.values);
  }
}

TEST(MeshIo, ConvertObjPlyObjPreservesGeometry) {
  Rng rng(8);
  const auto m = random_mesh(rng, 9, 7);
  io::write_mesh(scratch("c.obj"), m);
  io::write_mesh(scratch("c.ply"), io::read_mesh(scratch("c.obj")));
  io::write_mesh(scratch("c2.obj"), io::read_mesh(scratch("c.ply")));
  EXPECT_EQ(io::read_text_file(scratch("c.obj")), io::read_text_file(scratch("c2.obj")));
}

TEST(MeshIo, ErrorsAreIoWithPath) {
  const auto missing = scratch("nope.obj");
  try {
    io::read_mesh(missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
    EXPECT_NE(std::string(e.what()).find("nope.obj"), std::string::npos);
  }
  io::write_text_file(scratch("bad.obj"), "v 0 0 0\nv 1 0 0\nf 1 2 7\n");
  EXPECT_EQ(category_of([] { io::read_mesh(scratch("bad.obj")); }), ErrorCategory::io);
  io::write_text_file(scratch("bad.ply"), "ply\nformat ascii 1.0\nend_header\n");
  EXPECT_EQ(category_of([] { io::read_mesh(scratch("bad.ply")); }), ErrorCategory::io);
  io::write_ply(scratch("trunc.ply"), tetra());
  auto bytes = io::read_text_file(scratch("trunc.ply"));
  io::write_text_file(scratch("trunc.ply"), bytes.substr(0, bytes.size() - 5));
  EXPECT_EQ(category_of([] { io::read_mesh(scratch("trunc.ply")); }), ErrorCategory::io);
  EXPECT_EQ(category_of([] { io::read_mesh(scratch("x.stl")); }), ErrorCategory::io);
}

TEST(PointsCsv, RoundTripWithDisplacement) {
  Rng rng(9);
  PointSet p(oracle::random_points(rng, 17, 30.0), Units::physical);
  DisplacementField v(oracle::random_points(rng, 17, 2.0), Units::physical);
  io::write_points_csv(scratch("p.csv"), p, &v);
  const auto r = io::read_points_csv(scratch("p.csv"), Units::physical);
  EXPECT_EQ(r.points.coords(), p.coords());
  ASSERT_TRUE(r.field.has_value());
  EXPECT_EQ(r.field->vectors(), v.vectors());
}

TEST(PointsCsv, RejectsBadRows) {
  io::write_text_file(scratch("b.csv"), "x,y,z\n1,2,3\n1,2\n");
  EXPECT_EQ(category_of([] { io::read_points_csv(scratch("b.csv"), Units::physical); }), ErrorCategory::io);
  io::write_text_file(scratch("c.csv"), "x,y,z\n1,2,abc\n");
  EXPECT_EQ(category_of([] { io::read_points_csv(scratch("c.csv"), Units::physical); }), ErrorCategory::io);
  io::write_text_file(scratch("d.csv"), "a,b,c\n1,2,3\n");
  EXPECT_EQ(category_of([] { io::read_points_csv(scratch("d.csv"), Units::physical); }), ErrorCategory::io);
}
