#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cardiomesh/core.hpp"

namespace cardio {

enum class SurfRegion : int {
  LV_ENDO = 0,
  LV_EPI = 1,
  RV_ENDO_SEPTAL = 2,
  RV_ENDO_FREEWALL = 3,
  RV_EPI = 4,
  MV_RING = 5,
  TV_RING = 6,
  AV_RING = 7,
  PV_RING = 8,
};

inline std::string to_string(SurfRegion r) {
  switch (r) {
    case SurfRegion::LV_ENDO: return "LV_ENDO";
    case SurfRegion::LV_EPI: return "LV_EPI";
    case SurfRegion::RV_ENDO_SEPTAL: return "RV_ENDO_SEPTAL";
    case SurfRegion::RV_ENDO_FREEWALL: return "RV_ENDO_FREEWALL";
    case SurfRegion::RV_EPI: return "RV_EPI";
    case SurfRegion::MV_RING: return "MV_RING";
    case SurfRegion::TV_RING: return "TV_RING";
    case SurfRegion::AV_RING: return "AV_RING";
    case SurfRegion::PV_RING: return "PV_RING";
  }
  return "?";
}

// A named anchor on the template: a 3D position and, when the anchor
// coincides with a mesh vertex, that vertex index (else -1).
struct LandmarkAnchor {
  Vec3 position = Vec3::Zero();
  int vertex = -1;
};

// Triangulated biventricular surface with fixed template correspondence:
// vertex count, order and connectivity are identical across all meshes that
// share a template_id.
struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<SurfRegion> vertex_region;
  std::string template_id;
  std::map<std::string, LandmarkAnchor> landmarks;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }

  std::vector<int> region_vertices(SurfRegion r) const {
    std::vector<int> out;
    for (int i = 0; i < num_vertices(); ++i)
      if (vertex_region[i] == r) out.push_back(i);
    return out;
  }
};

inline Vec3 triangle_normal(const SurfaceMesh& m, int t) {
  const auto& tr = m.triangles[t];
  return (m.vertices[tr[1]] - m.vertices[tr[0]]).cross(m.vertices[tr[2]] - m.vertices[tr[0]]);
}

inline double triangle_area(const SurfaceMesh& m, int t) {
  return 0.5 * triangle_normal(m, t).norm();
}

// Area-weighted outward vertex normals (sum of incident triangle normals).
inline std::vector<Vec3> vertex_normals(const SurfaceMesh& m) {
  std::vector<Vec3> n(m.vertices.size(), Vec3::Zero());
  for (int t = 0; t < m.num_triangles(); ++t) {
    Vec3 tn = triangle_normal(m, t);
    for (int c = 0; c < 3; ++c) n[m.triangles[t][c]] += tn;
  }
  for (auto& v : n) {
    double len = v.norm();
    if (len > 0) v /= len;
  }
  return n;
}

// Edges owned by exactly one triangle.
inline long boundary_edge_count(const std::vector<std::array<int, 3>>& tris) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& t : tris)
    for (int c = 0; c < 3; ++c) {
      int a = t[c], b = t[(c + 1) % 3];
      count[{std::min(a, b), std::max(a, b)}]++;
    }
  long n = 0;
  for (const auto& [e, c] : count)
    if (c == 1) ++n;
  return n;
}

// Plain text export: vertex count, "x y z" lines, triangle count,
// "i j k region" lines (region = region tag of the triangle's first vertex).
inline void write_surface_text(const SurfaceMesh& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_surface_text: cannot open " + path);
  out << m.num_vertices() << "\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& v : m.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
  out << m.num_triangles() << "\n";
  for (const auto& t : m.triangles)
    out << t[0] << " " << t[1] << " " << t[2] << " "
        << static_cast<int>(m.vertex_region[t[0]]) << "\n";
  require(out.good(), "write_surface_text: write failure on " + path);
}

inline void write_surface_vtk(const SurfaceMesh& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_surface_vtk: cannot open " + path);
  out << "# vtk DataFile Version 3.0\n";
  out << "biventricular surface " << m.template_id << "\n";
  out << "ASCII\nDATASET POLYDATA\n";
  out << "POINTS " << m.num_vertices() << " double\n";
  out << std::setprecision(9);
  for (const auto& v : m.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
  out << "POLYGONS " << m.num_triangles() << " " << 4 * m.num_triangles() << "\n";
  for (const auto& t : m.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  out << "POINT_DATA " << m.num_vertices() << "\n";
  out << "SCALARS region int 1\nLOOKUP_TABLE default\n";
  for (auto r : m.vertex_region) out << static_cast<int>(r) << "\n";
  require(out.good(), "write_surface_vtk: write failure on " + path);
}

}  // namespace cardio
