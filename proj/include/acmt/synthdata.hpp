#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acmt/error.hpp"
#include "acmt/geometry.hpp"
#include "acmt/mesh.hpp"
#include "acmt/mesh_io.hpp"
#include "acmt/rng.hpp"

namespace acmt::synth {

namespace fs = std::filesystem;

inline constexpr std::size_t kRegionCount = 6;

struct GenParams {
  std::uint64_t seed = 1;
  Vec3 radii{60.0, 50.0, 45.0};  // mm
  double thickness_min = 8.0;    // mm
  double thickness_max = 16.0;   // mm
  double bump_amplitude = 0.08;  // relative to the radius
  std::size_t bump_count = 6;
  std::size_t segments = 3;
  double kernel_h = 15.0;         // mm
  double max_rotation_deg = 15.0;
  double max_translation = 10.0;  // mm
  std::size_t subdivisions = 4;
  std::size_t samples = 4096;

  void validate() const {
    for (double r : radii) require(r > 0.0, ErrorCategory::usage, "radii must be positive");
    require(thickness_min > 0.0 && thickness_max >= thickness_min, ErrorCategory::usage,
            "thickness range must be positive and ordered");
    require(bump_amplitude > 0.0 && bump_amplitude < 0.5, ErrorCategory::usage, "bump amplitude must lie in (0, 0.5)");
    require(bump_count >= 1, ErrorCategory::usage, "bump count must be positive");
    require(segments >= 2 && segments <= 4, ErrorCategory::usage, "segment count must lie in [2, 4]");
    require(kernel_h > 0.0, ErrorCategory::usage, "kernel bandwidth must be positive");
    require(max_rotation_deg > 0.0 && max_translation > 0.0, ErrorCategory::usage,
            "transform bounds must be positive");
    require(subdivisions >= 1 && subdivisions <= 6, ErrorCategory::usage, "subdivisions must lie in [1, 6]");
    require(samples >= 32, ErrorCategory::usage, "sample count must be at least 32");
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"radii", radii},
            {"thickness_min", thickness_min},
            {"thickness_max", thickness_max},
            {"bump_amplitude", bump_amplitude},
            {"bump_count", bump_count},
            {"segments", segments},
            {"kernel_h", kernel_h},
            {"max_rotation_deg", max_rotation_deg},
            {"max_translation", max_translation},
            {"subdivisions", subdivisions},
            {"samples", samples}};
  }

  static GenParams from_json(const nlohmann::json& j) {
    GenParams p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.radii = j.at("radii").get<Vec3>();
    p.thickness_min = j.at("thickness_min").get<double>();
    p.thickness_max = j.at("thickness_max").get<double>();
    p.bump_amplitude = j.at("bump_amplitude").get<double>();
    p.bump_count = j.at("bump_count").get<std::size_t>();
    p.segments = j.at("segments").get<std::size_t>();
    p.kernel_h = j.at("kernel_h").get<double>();
    p.max_rotation_deg = j.at("max_rotation_deg").get<double>();
    p.max_translation = j.at("max_translation").get<double>();
    p.subdivisions = j.at("subdivisions").get<std::size_t>();
    p.samples = j.at("samples").get<std::size_t>();
    return p;
  }
};

/// x -> rotation * x + translation (world frame, mm).
struct RigidTransform {
  std::array<Vec3, 3> rotation{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};  // rows
  Vec3 translation{0, 0, 0};

  Vec3 apply(const Vec3& p) const {
    return Vec3{dot(rotation[0], p), dot(rotation[1], p), dot(rotation[2], p)} + translation;
  }
  Vec3 displacement(const Vec3& p) const { return apply(p) - p; }
};

/// Rotation of `angle` radians about the unit `axis` (Rodrigues).
inline std::array<Vec3, 3> axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {Vec3{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
          Vec3{t * x * y + s * z, t * y * y + c, t * y * z - s * x},
          Vec3{t * x * z - s * y, t * y * z + s * x, t * z * z + c}};
}

/// Bone partition by axis-aligned planes: segment 0 lies above z_cut (kept fixed), the
/// part below is split left to right by the x cuts.
struct SegmentCuts {
  double z_cut = 0.0;
  std::vector<double> x_cuts;

  std::uint32_t label(const Vec3& p) const {
    if (p[2] > z_cut) return 0;
    std::uint32_t s = 1;
    for (double x : x_cuts)
      if (p[0] > x) ++s;
    return s;
  }
};

/// Unit-sphere icosahedron subdivided `level` times.
inline TriMesh icosphere(std::size_t level) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p = (1.0 / norm(p)) * p;
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (std::size_t l = 0; l < level; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      Vec3 m = 0.5 * (v[a] + v[b]);
      v.push_back((1.0 / norm(m)) * m);
      const auto id = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  return TriMesh(std::move(v), std::move(f));
}

/// Six patches on the unit sphere: upper/lower hemisphere x three 120-degree azimuth sectors.
inline std::uint32_t region_of(const Vec3& u) {
  const double az = std::atan2(u[1], u[0]) + std::numbers::pi;  // [0, 2pi]
  const auto sector = std::min<std::uint32_t>(2, static_cast<std::uint32_t>(az / (2.0 * std::numbers::pi / 3.0)));
  return (u[2] >= 0.0 ? 0u : 3u) + sector;
}

inline const char* region_name(std::size_t r) {
  static const char* names[kRegionCount] = {"upper_a", "upper_b", "upper_c", "lower_a", "lower_b", "lower_c"};
  return names[r];
}

/// Gaussian-kernel transfer of bone displacement onto skin points:
///   d(x) = sum_j w_j d_j / sum_j w_j,  w_j = exp(-|x - b_j|^2 / h^2).
inline DisplacementField kernel_transfer_oracle(const PointSet& bone, const DisplacementField& bone_disp,
                                                const PointSet& skin, double h) {
  require(h > 0.0, ErrorCategory::precondition, "kernel bandwidth must be positive");
  require(bone.size() == bone_disp.size(), ErrorCategory::shape, "bone displacement not aligned with bone points");
  require(bone.units() == Units::physical && bone_disp.units() == Units::physical && skin.units() == Units::physical,
          ErrorCategory::mismatch, "the kernel oracle works in physical units");
  const double inv_h2 = 1.0 / (h * h);
  std::vector<Vec3> out(skin.size());
  std::vector<double> d2(bone.size());
  for (std::size_t i = 0; i < skin.size(); ++i) {
    double d2_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < bone.size(); ++j) {
      d2[j] = dist2(skin[i], bone[j]);
      d2_min = std::min(d2_min, d2[j]);
    }
    // Shifting every exponent by the same amount leaves the normalized weights unchanged.
    double wsum = 0.0;
    Vec3 acc{0, 0, 0};
    for (std::size_t j = 0; j < bone.size(); ++j) {
      const double w = std::exp(-(d2[j] - d2_min) * inv_h2);
      wsum += w;
      acc = acc + w * bone_disp[j];
    }
    out[i] = (1.0 / wsum) * acc;
  }
  return DisplacementField(std::move(out), Units::physical);
}

struct SyntheticCase {
  GenParams params;
  TriMesh bone_mesh;
  TriMesh skin_mesh;
  std::vector<std::uint32_t> segment_labels;  // per bone vertex
  std::vector<std::uint32_t> region_labels;   // per skin vertex
  SegmentCuts cuts;
  std::vector<RigidTransform> segment_transforms;
  DisplacementField gt_skin_disp;  // per skin vertex
  PointSet skin_samples;
  DisplacementField skin_sample_disp;
  PointSet bone_samples;
  DisplacementField bone_sample_disp;

  DisplacementField bone_vertex_disp() const {
    std::vector<Vec3> d(bone_mesh.vertex_count());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = segment_transforms[segment_labels[i]].displacement(bone_mesh.vertices()[i]);
    return DisplacementField(std::move(d), Units::physical);
  }

  TriMesh gt_skin_mesh() const {
    std::vector<Vec3> v(skin_mesh.vertex_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = skin_mesh.vertices()[i] + gt_skin_disp[i];
    return skin_mesh.with_vertices(std::move(v));
  }
};

/// Area-weighted samples reduced to `count` points by canonical FPS (4x oversampling).
inline PointSet sample_points(const TriMesh& mesh, std::size_t count, Rng& rng) {
  PointSet dense(sample_surface(mesh, 4 * count, rng), Units::physical);
  return dense.subset(farthest_point_sample_canonical(dense, count));
}

inline SyntheticCase generate_case(const GenParams& p) {
  p.validate();
  Rng rng(p.seed);

  const TriMesh sphere = icosphere(p.subdivisions);
  const auto& unit = sphere.vertices();

  // Bone: bumped ellipsoid.
  struct Bump {
    Vec3 dir;
    double height;
    double width;
  };
  std::vector<Bump> bumps(p.bump_count);
  for (auto& b : bumps) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    b.dir = (1.0 / norm(d)) * d;
    b.height = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0);
    b.width = rng.uniform(0.3, 0.6);
  }
  std::vector<Vec3> bone_v(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    double bump = 0.0;
    for (const auto& b : bumps) bump += b.height * std::exp(-(1.0 - dot(unit[i], b.dir)) / (b.width * b.width));
    const double s = 1.0 + p.bump_amplitude * bump;
    bone_v[i] = {s * p.radii[0] * unit[i][0], s * p.radii[1] * unit[i][1], s * p.radii[2] * unit[i][2]};
  }
  const TriMesh bone_mesh(std::move(bone_v), sphere.faces());

  // Skin: outward offset with smoothly varying thickness.
  Vec3 d1{rng.normal(), rng.normal(), rng.normal()}, d2{rng.normal(), rng.normal(), rng.normal()};
  d1 = (1.0 / norm(d1)) * d1;
  d2 = (1.0 / norm(d2)) * d2;
  const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi), ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto normals = vertex_normals(bone_mesh);
  std::vector<Vec3> skin_v(unit.size());
  std::vector<std::uint32_t> region_labels(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    const double mix = 0.5 + 0.25 * (std::cos(2.0 * dot(unit[i], d1) + ph1) + std::cos(3.0 * dot(unit[i], d2) + ph2));
    const double thick = p.thickness_min + (p.thickness_max - p.thickness_min) * mix;
    skin_v[i] = bone_mesh.vertices()[i] + thick * normals[i];
    region_labels[i] = region_of(unit[i]);
  }
  const TriMesh skin_mesh(std::move(skin_v), sphere.faces());

  // Segments: resample the cut planes until every segment owns bone vertices.
  SegmentCuts cuts;
  std::vector<std::uint32_t> segment_labels(bone_mesh.vertex_count());
  for (;;) {
    cuts.z_cut = rng.uniform(-0.3, 0.1) * p.radii[2];
    cuts.x_cuts.clear();
    for (std::size_t s = 0; s + 2 < p.segments; ++s) cuts.x_cuts.push_back(rng.uniform(-0.5, 0.5) * p.radii[0]);
    std::sort(cuts.x_cuts.begin(), cuts.x_cuts.end());
    std::vector<std::size_t> count(p.segments, 0);
    for (std::size_t i = 0; i < segment_labels.size(); ++i) {
      segment_labels[i] = cuts.label(bone_mesh.vertices()[i]);
      ++count[segment_labels[i]];
    }
    if (std::all_of(count.begin(), count.end(), [](std::size_t n) { return n >= 16; })) break;
  }

  // Rigid movement about each moving segment's centroid; segment 0 stays put.
  std::vector<RigidTransform> transforms(p.segments);
  for (std::size_t s = 1; s < p.segments; ++s) {
    Vec3 centroid{0, 0, 0};
    double n = 0;
    for (std::size_t i = 0; i < segment_labels.size(); ++i)
      if (segment_labels[i] == s) {
        centroid = centroid + bone_mesh.vertices()[i];
        n += 1;
      }
    centroid = (1.0 / n) * centroid;
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    axis = (1.0 / norm(axis)) * axis;
    const double angle = rng.uniform(0.0, p.max_rotation_deg) * std::numbers::pi / 180.0;
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    dir = (1.0 / norm(dir)) * dir;
    const Vec3 shift = rng.uniform(0.0, p.max_translation) * dir;
    RigidTransform t;
    t.rotation = axis_angle(axis, angle);
    const Vec3 rc{dot(t.rotation[0], centroid), dot(t.rotation[1], centroid), dot(t.rotation[2], centroid)};
    t.translation = centroid - rc + shift;
    transforms[s] = t;
  }

  const PointSet bone_pts = bone_mesh.vertex_set();
  std::vector<Vec3> bv(bone_pts.size());
  for (std::size_t i = 0; i < bv.size(); ++i) bv[i] = transforms[segment_labels[i]].displacement(bone_pts[i]);
  const DisplacementField bone_disp(std::move(bv), Units::physical);
  DisplacementField gt = kernel_transfer_oracle(bone_pts, bone_disp, skin_mesh.vertex_set(), p.kernel_h);

  PointSet skin_samples = sample_points(skin_mesh, p.samples, rng);
  DisplacementField skin_sample_disp = kernel_transfer_oracle(bone_pts, bone_disp, skin_samples, p.kernel_h);
  PointSet bone_samples = sample_points(bone_mesh, p.samples, rng);
  std::vector<Vec3> bd(bone_samples.size());
  for (std::size_t i = 0; i < bd.size(); ++i)
    bd[i] = transforms[cuts.label(bone_samples[i])].displacement(bone_samples[i]);
  DisplacementField bone_sample_disp(std::move(bd), Units::physical);

  return SyntheticCase{p,
                       bone_mesh,
                       skin_mesh,
                       std::move(segment_labels),
                       std::move(region_labels),
                       std::move(cuts),
                       std::move(transforms),
                       std::move(gt),
                       std::move(skin_samples),
                       std::move(skin_sample_disp),
                       std::move(bone_samples),
                       std::move(bone_sample_disp)};
}

// ---------------------------------------------------------------------------
// On-disk layout: <case>/bone.ply skin.ply labels.csv transforms.json samples.csv

inline void write_case(const fs::path& dir, const SyntheticCase& c) {
  fs::create_directories(dir);
  using io::VertexProperty;
  std::vector<double> seg(c.segment_labels.begin(), c.segment_labels.end());
  io::write_ply(dir / "bone.ply", c.bone_mesh, {VertexProperty{"segment", io::PlyType::int32, seg}});

  std::vector<double> gx(c.gt_skin_disp.size()), gy(gx.size()), gz(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = c.gt_skin_disp[i][0];
    gy[i] = c.gt_skin_disp[i][1];
    gz[i] = c.gt_skin_disp[i][2];
  }
  std::vector<double> reg(c.region_labels.begin(), c.region_labels.end());
  io::write_ply(dir / "skin.ply", c.skin_mesh,
                {VertexProperty{"gt_dx", io::PlyType::float64, gx}, VertexProperty{"gt_dy", io::PlyType::float64, gy},
                 VertexProperty{"gt_dz", io::PlyType::float64, gz}, VertexProperty{"region", io::PlyType::uint8, reg}});

  std::string labels = "mesh,index,label\n";
  for (std::size_t i = 0; i < c.segment_labels.size(); ++i)
    labels += "bone," + std::to_string(i) + "," + std::to_string(c.segment_labels[i]) + "\n";
  for (std::size_t i = 0; i < c.region_labels.size(); ++i)
    labels += "skin," + std::to_string(i) + "," + std::to_string(c.region_labels[i]) + "\n";
  io::write_text_file(dir / "labels.csv", labels);

  nlohmann::json tj;
  tj["kernel_h"] = c.params.kernel_h;
  tj["cuts"] = {{"z", c.cuts.z_cut}, {"x", c.cuts.x_cuts}};
  nlohmann::json segs = nlohmann::json::array();
  for (std::size_t s = 0; s < c.segment_transforms.size(); ++s) {
    const auto& t = c.segment_transforms[s];
    segs.push_back({{"id", s}, {"rotation", t.rotation}, {"translation", t.translation}, {"fixed", s == 0}});
  }
  tj["segments"] = segs;
  io::write_text_file(dir / "transforms.json", tj.dump(2) + "\n");

  std::string samples = "set,x,y,z,dx,dy,dz\n";
  auto emit = [&](const char* set, const PointSet& ps, const DisplacementField& d) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      samples += set;
      for (double x : ps[i]) samples += "," + io::format_double(x);
      for (double x : d[i]) samples += "," + io::format_double(x);
      samples += "\n";
    }
  };
  emit("skin", c.skin_samples, c.skin_sample_disp);
  emit("bone", c.bone_samples, c.bone_sample_disp);
  io::write_text_file(dir / "samples.csv", samples);
}

/// What training, simulation and evaluation read back from a case directory.
struct CaseData {
  std::string id;
  TriMesh skin_mesh;
  DisplacementField gt_skin_disp;
  std::vector<std::uint32_t> region_labels;
  PointSet skin_samples;
  DisplacementField skin_sample_disp;
  PointSet bone_samples;
  DisplacementField bone_sample_disp;

  TriMesh gt_skin_mesh() const {
    std::vector<Vec3> v(skin_mesh.vertex_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = skin_mesh.vertices()[i] + gt_skin_disp[i];
    return skin_mesh.with_vertices(std::move(v));
  }
};

inline CaseData load_case(const fs::path& dir) {
  const auto skin = io::read_ply(dir / "skin.ply");
  const auto* gx = skin.find("gt_dx");
  const auto* gy = skin.find("gt_dy");
  const auto* gz = skin.find("gt_dz");
  const auto* reg = skin.find("region");
  if (!gx || !gy || !gz || !reg) throw io::io_error(dir / "skin.ply", "missing gt_dx/gt_dy/gt_dz/region properties");
  std::vector<Vec3> gt(skin.mesh.vertex_count());
  std::vector<std::uint32_t> regions(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = {gx->values[i], gy->values[i], gz->values[i]};
    regions[i] = static_cast<std::uint32_t>(reg->values[i]);
    if (regions[i] >= kRegionCount) throw io::io_error(dir / "skin.ply", "region label out of range");
  }

  const fs::path sp = dir / "samples.csv";
  std::istringstream in(io::read_text_file(sp));
  std::string line;
  std::getline(in, line);
  if (io::split_csv_line(line) != std::vector<std::string>{"set", "x", "y", "z", "dx", "dy", "dz"})
    throw io::io_error(sp, "expected header 'set,x,y,z,dx,dy,dz'");
  std::vector<Vec3> sk, skd, bo, bod;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = io::split_csv_line(line);
    if (cells.size() != 7) throw io::io_error(sp, "line " + std::to_string(line_no) + ": expected 7 columns");
    Vec3 p, d;
    for (int k = 0; k < 3; ++k) {
      p[k] = io::parse_double(cells[1 + k], sp, line_no);
      d[k] = io::parse_double(cells[4 + k], sp, line_no);
    }
    if (cells[0] == "skin") {
      sk.push_back(p);
      skd.push_back(d);
    } else if (cells[0] == "bone") {
      bo.push_back(p);
      bod.push_back(d);
    } else {
      throw io::io_error(sp, "line " + std::to_string(line_no) + ": unknown set '" + cells[0] + "'");
    }
  }
  if (sk.empty() || bo.empty()) throw io::io_error(sp, "needs both skin and bone samples");
  return CaseData{dir.filename().string(),
                  skin.mesh,
                  DisplacementField(std::move(gt), Units::physical),
                  std::move(regions),
                  PointSet(std::move(sk), Units::physical),
                  DisplacementField(std::move(skd), Units::physical),
                  PointSet(std::move(bo), Units::physical),
                  DisplacementField(std::move(bod), Units::physical)};
}

// ---------------------------------------------------------------------------
// Dataset: many cases plus a fold partition, described by manifest.json.

struct Manifest {
  std::uint64_t master_seed = 0;
  std::vector<std::string> cases;
  std::vector<std::uint64_t> case_seeds;
  std::vector<std::vector<std::string>> folds;
  GenParams params;

  nlohmann::json to_json() const {
    nlohmann::json cj = nlohmann::json::array();
    for (std::size_t i = 0; i < cases.size(); ++i) cj.push_back({{"id", cases[i]}, {"seed", case_seeds[i]}});
    return {{"version", 1}, {"master_seed", master_seed}, {"cases", cj}, {"folds", folds}, {"gen_params", params.to_json()}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& c : j.at("cases")) {
      m.cases.push_back(c.at("id").get<std::string>());
      m.case_seeds.push_back(c.at("seed").get<std::uint64_t>());
    }
    m.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    m.params = GenParams::from_json(j.at("gen_params"));
    return m;
  }

  std::vector<std::string> test_cases(std::size_t fold) const {
    require(fold < folds.size(), ErrorCategory::usage,
            "fold " + std::to_string(fold) + " out of range (dataset has " + std::to_string(folds.size()) + ")");
    return folds[fold];
  }

  std::vector<std::string> train_cases(std::size_t fold) const {
    require(fold < folds.size(), ErrorCategory::usage,
            "fold " + std::to_string(fold) + " out of range (dataset has " + std::to_string(folds.size()) + ")");
    std::vector<std::string> out;
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline Manifest load_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.json";
  try {
    return Manifest::from_json(nlohmann::json::parse(io::read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw io::io_error(path, std::string("malformed manifest: ") + e.what());
  }
}

inline std::string case_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03zu", i);
  return buf;
}

/// Deterministic partition of case indices into `folds` disjoint groups.
inline std::vector<std::vector<std::size_t>> assign_folds(std::size_t n_cases, std::size_t folds, std::uint64_t master_seed) {
  require(folds >= 1 && n_cases >= folds, ErrorCategory::usage, "need at least as many cases as folds");
  std::vector<std::size_t> order(n_cases);
  for (std::size_t i = 0; i < n_cases; ++i) order[i] = i;
  Rng rng(derive_seed(master_seed, 0xF01D));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n_cases; ++i) out[i % folds].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

/// Generates n_cases cases (seed per case derived from the master seed) with up to `jobs`
/// worker threads, then writes manifest.json.
inline Manifest build_dataset(const fs::path& out_dir, std::size_t n_cases, std::size_t folds, GenParams params,
                              std::size_t jobs = 1) {
  params.validate();
  const auto fold_idx = assign_folds(n_cases, folds, params.seed);
  Manifest m;
  m.master_seed = params.seed;
  m.params = params;
  for (std::size_t i = 0; i < n_cases; ++i) {
    m.cases.push_back(case_id(i));
    m.case_seeds.push_back(derive_seed(params.seed, i));
  }
  for (const auto& f : fold_idx) {
    m.folds.emplace_back();
    for (auto i : f) m.folds.back().push_back(m.cases[i]);
  }

  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw io::io_error(out_dir, e.what());
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_cases);
  auto worker = [&] {
    for (std::size_t i = next++; i < n_cases; i = next++) {
      try {
        GenParams p = params;
        p.seed = m.case_seeds[i];
        write_case(out_dir / m.cases[i], generate_case(p));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  io::write_text_file(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

}  // namespace acmt::synth
