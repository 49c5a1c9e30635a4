#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acmt/error.hpp"
#include "acmt/geometry.hpp"
#include "acmt/mesh.hpp"

namespace acmt::io {

namespace fs = std::filesystem;

inline Error io_error(const fs::path& path, const std::string& what) {
  return Error(ErrorCategory::io, path.string() + ": " + what);
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, "cannot open for writing");
  out << text;
  if (!out) throw io_error(path, "write failed");
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// OBJ (ASCII): v / f records only; polygons are fan-triangulated.

inline TriMesh read_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, "cannot open for reading");
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p[0] >> p[1] >> p[2])) throw io_error(path, "bad vertex on line " + std::to_string(line_no));
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) {
        long v = 0;
        try {
          v = std::stol(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          throw io_error(path, "bad face index '" + tok + "' on line " + std::to_string(line_no));
        }
        if (v < 0) v = static_cast<long>(verts.size()) + v + 1;  // relative index
        if (v < 1) throw io_error(path, "bad face index on line " + std::to_string(line_no));
        idx.push_back(static_cast<std::uint32_t>(v - 1));
      }
      if (idx.size() < 3) throw io_error(path, "face with fewer than 3 vertices on line " + std::to_string(line_no));
      for (std::size_t t = 1; t + 1 < idx.size(); ++t) faces.push_back({idx[0], idx[t], idx[t + 1]});
    }
  }
  try {
    return TriMesh(std::move(verts), std::move(faces));
  } catch (const Error& e) {
    throw io_error(path, e.what());
  }
}

inline void write_obj(const fs::path& path, const TriMesh& mesh) {
  std::ostringstream out;
  for (const auto& v : mesh.vertices())
    out << "v " << format_double(v[0]) << ' ' << format_double(v[1]) << ' ' << format_double(v[2]) << '\n';
  for (const auto& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// PLY, binary little-endian. Vertex positions are written as float64.

enum class PlyType { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

inline std::optional<PlyType> ply_type_from_name(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::int8;
  if (s == "uchar" || s == "uint8") return PlyType::uint8;
  if (s == "short" || s == "int16") return PlyType::int16;
  if (s == "ushort" || s == "uint16") return PlyType::uint16;
  if (s == "int" || s == "int32") return PlyType::int32;
  if (s == "uint" || s == "uint32") return PlyType::uint32;
  if (s == "float" || s == "float32") return PlyType::float32;
  if (s == "double" || s == "float64") return PlyType::float64;
  return std::nullopt;
}

inline const char* ply_type_name(PlyType t) {
  switch (t) {
    case PlyType::int8: return "char";
    case PlyType::uint8: return "uchar";
    case PlyType::int16: return "short";
    case PlyType::uint16: return "ushort";
    case PlyType::int32: return "int";
    case PlyType::uint32: return "uint";
    case PlyType::float32: return "float";
    case PlyType::float64: return "double";
  }
  return "";
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::int8:
    case PlyType::uint8: return 1;
    case PlyType::int16:
    case PlyType::uint16: return 2;
    case PlyType::int32:
    case PlyType::uint32:
    case PlyType::float32: return 4;
    case PlyType::float64: return 8;
  }
  return 0;
}

/// Extra per-vertex scalar attribute (error values, colours, ground-truth offsets, ...).
struct VertexProperty {
  std::string name;
  PlyType type = PlyType::float64;
  std::vector<double> values;
};

struct PlyMesh {
  TriMesh mesh;
  std::vector<VertexProperty> properties;

  const VertexProperty* find(const std::string& name) const {
    for (const auto& p : properties)
      if (p.name == name) return &p;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(static_cast<U>(p[b]) << (8 * b));
  return std::bit_cast<T>(bits);
}

inline void put_scalar(std::string& out, PlyType t, double v) {
  switch (t) {
    case PlyType::int8: put_le(out, static_cast<std::int8_t>(v)); break;
    case PlyType::uint8: put_le(out, static_cast<std::uint8_t>(v)); break;
    case PlyType::int16: put_le(out, static_cast<std::int16_t>(v)); break;
    case PlyType::uint16: put_le(out, static_cast<std::uint16_t>(v)); break;
    case PlyType::int32: put_le(out, static_cast<std::int32_t>(v)); break;
    case PlyType::uint32: put_le(out, static_cast<std::uint32_t>(v)); break;
    case PlyType::float32: put_le(out, static_cast<float>(v)); break;
    case PlyType::float64: put_le(out, v); break;
  }
}

inline double get_scalar(PlyType t, const unsigned char* p) {
  switch (t) {
    case PlyType::int8: return get_le<std::int8_t>(p);
    case PlyType::uint8: return get_le<std::uint8_t>(p);
    case PlyType::int16: return get_le<std::int16_t>(p);
    case PlyType::uint16: return get_le<std::uint16_t>(p);
    case PlyType::int32: return get_le<std::int32_t>(p);
    case PlyType::uint32: return get_le<std::uint32_t>(p);
    case PlyType::float32: return get_le<float>(p);
    case PlyType::float64: return get_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  std::optional<PlyType> list_count;  // set for list properties
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

}  // namespace detail

inline void write_ply(const fs::path& path, const TriMesh& mesh, const std::vector<VertexProperty>& extra = {}) {
  for (const auto& p : extra)
    require(p.values.size() == mesh.vertex_count(), ErrorCategory::shape,
            "vertex property '" + p.name + "' does not match the vertex count");
  std::string out;
  out += "ply\nformat binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(mesh.vertex_count()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  for (const auto& p : extra) out += std::string("property ") + ply_type_name(p.type) + " " + p.name + "\n";
  out += "element face " + std::to_string(mesh.face_count()) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    for (double c : mesh.vertices()[i]) detail::put_le(out, c);
    for (const auto& p : extra) detail::put_scalar(out, p.type, p.values[i]);
  }
  for (const auto& f : mesh.faces()) {
    detail::put_le(out, std::uint8_t{3});
    for (auto i : f) detail::put_le(out, static_cast<std::int32_t>(i));
  }
  write_text_file(path, out);
}

inline PlyMesh read_ply(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  const auto header_end = bytes.find("end_header");
  if (bytes.rfind("ply", 0) != 0 || header_end == std::string::npos) throw io_error(path, "not a PLY file");
  const auto body_start = bytes.find('\n', header_end);
  if (body_start == std::string::npos) throw io_error(path, "truncated PLY header");

  std::istringstream header(bytes.substr(0, header_end));
  std::vector<detail::PlyElement> elements;
  std::string line;
  bool format_ok = false;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw io_error(path, "unsupported PLY format '" + fmt + "'");
      format_ok = true;
    } else if (tag == "element") {
      detail::PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw io_error(path, "property before element");
      std::string t1;
      ls >> t1;
      detail::PlyProperty prop;
      if (t1 == "list") {
        std::string count_t, item_t;
        ls >> count_t >> item_t >> prop.name;
        auto ct = ply_type_from_name(count_t), it = ply_type_from_name(item_t);
        if (!ct || !it) throw io_error(path, "unknown list property type");
        prop.list_count = *ct;
        prop.type = *it;
      } else {
        auto t = ply_type_from_name(t1);
        if (!t) throw io_error(path, "unknown property type '" + t1 + "'");
        prop.type = *t;
        ls >> prop.name;
      }
      elements.back().props.push_back(prop);
    }
  }
  if (!format_ok) throw io_error(path, "missing format line");

  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = body_start + 1;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw io_error(path, "unexpected end of PLY body");
  };

  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<VertexProperty> extra;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    std::vector<double> scalars(e.props.size());
    if (is_vertex) {
      verts.resize(e.count);
      for (const auto& p : e.props)
        if (!p.list_count && p.name != "x" && p.name != "y" && p.name != "z")
          extra.push_back({p.name, p.type, std::vector<double>(e.count)});
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      std::size_t extra_slot = 0;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& p = e.props[k];
        if (p.list_count) {
          need(ply_type_size(*p.list_count));
          const auto n = static_cast<std::size_t>(detail::get_scalar(*p.list_count, data + pos));
          pos += ply_type_size(*p.list_count);
          need(n * ply_type_size(p.type));
          if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (n < 3) throw io_error(path, "face with fewer than 3 vertices");
            std::vector<std::uint32_t> idx(n);
            for (std::size_t t = 0; t < n; ++t)
              idx[t] = static_cast<std::uint32_t>(detail::get_scalar(p.type, data + pos + t * ply_type_size(p.type)));
            for (std::size_t t = 1; t + 1 < n; ++t) faces.push_back({idx[0], idx[t], idx[t + 1]});
          }
          pos += n * ply_type_size(p.type);
        } else {
          need(ply_type_size(p.type));
          const double v = detail::get_scalar(p.type, data + pos);
          pos += ply_type_size(p.type);
          if (is_vertex) {
            if (p.name == "x") verts[r][0] = v;
            else if (p.name == "y") verts[r][1] = v;
            else if (p.name == "z") verts[r][2] = v;
            else extra[extra_slot++].values[r] = v;
          }
        }
      }
    }
  }
  try {
    return PlyMesh{TriMesh(std::move(verts), std::move(faces)), std::move(extra)};
  } catch (const Error& e) {
    throw io_error(path, e.what());
  }
}

/// Dispatch on extension (.obj / .ply).
inline TriMesh read_mesh(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".obj") return read_obj(path);
  if (ext == ".ply") return read_ply(path).mesh;
  throw io_error(path, "unknown mesh extension '" + ext + "' (expected .obj or .ply)");
}

inline void write_mesh(const fs::path& path, const TriMesh& mesh) {
  const auto ext = path.extension().string();
  if (ext == ".obj") return write_obj(path, mesh);
  if (ext == ".ply") return write_ply(path, mesh);
  throw io_error(path, "unknown mesh extension '" + ext + "' (expected .obj or .ply)");
}

// ---------------------------------------------------------------------------
// CSV point sets: header row, then x,y,z[,dx,dy,dz].

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

inline double parse_double(const std::string& s, const fs::path& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(path, "line " + std::to_string(line_no) + ": not a number: '" + s + "'");
  }
}

inline void write_points_csv(const fs::path& path, const PointSet& ps, const DisplacementField* field = nullptr) {
  if (field) require(field->size() == ps.size(), ErrorCategory::shape, "displacement field not aligned with points");
  std::string out = field ? "x,y,z,dx,dy,dz\n" : "x,y,z\n";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out += format_double(ps[i][0]) + ',' + format_double(ps[i][1]) + ',' + format_double(ps[i][2]);
    if (field)
      for (double d : (*field)[i]) out += ',' + format_double(d);
    out += '\n';
  }
  write_text_file(path, out);
}

struct PointsCsv {
  PointSet points;
  std::optional<DisplacementField> field;
};

inline PointsCsv read_points_csv(const fs::path& path, Units units) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw io_error(path, "empty CSV (header row required)");
  const auto header = split_csv_line(line);
  const bool has_disp = header.size() == 6;
  if (!(header.size() == 3 || has_disp) || header[0] != "x" || header[1] != "y" || header[2] != "z" ||
      (has_disp && (header[3] != "dx" || header[4] != "dy" || header[5] != "dz")))
    throw io_error(path, "expected header 'x,y,z' or 'x,y,z,dx,dy,dz'");
  std::vector<Vec3> pts, disp;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw io_error(path, "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " columns");
    pts.push_back({parse_double(cells[0], path, line_no), parse_double(cells[1], path, line_no),
                   parse_double(cells[2], path, line_no)});
    if (has_disp)
      disp.push_back({parse_double(cells[3], path, line_no), parse_double(cells[4], path, line_no),
                      parse_double(cells[5], path, line_no)});
  }
  if (pts.empty()) throw io_error(path, "CSV holds no points");
  PointsCsv result{PointSet(std::move(pts), units), std::nullopt};
  if (has_disp) result.field = DisplacementField(std::move(disp), units);
  return result;
}

}  // namespace acmt::io
