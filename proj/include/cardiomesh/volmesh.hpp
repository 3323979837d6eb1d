#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <string>
#include <utility>
#include <vector>

#include "cardiomesh/femcore.hpp"
#include "cardiomesh/heart_template.hpp"
#include "cardiomesh/surface.hpp"

namespace cardio {

// Deform the template tetrahedral mesh onto a fitted surface: boundary nodes
// take the fitted vertex positions, interior nodes follow the harmonic
// extension of the boundary displacement (one Laplace solve per component).
// Region tags and connectivity are inherited unchanged.
inline TetMesh harmonic_volumize(const TetMesh& template_vol,
                                 const std::vector<int>& surface_to_volume,
                                 const SurfaceMesh& fitted) {
  require(static_cast<int>(surface_to_volume.size()) == fitted.num_vertices(),
          "harmonic_volumize: surface correspondence size mismatch");
  CsrMatrix k = assemble_stiffness(template_vol);

  TetMesh out = template_vol;
  for (int d = 0; d < 3; ++d) {
    std::map<int, double> bc;
    for (int sv = 0; sv < fitted.num_vertices(); ++sv) {
      int vn = surface_to_volume[sv];
      require(vn >= 0 && vn < template_vol.num_nodes(),
              "harmonic_volumize: correspondence index out of range");
      bc[vn] = fitted.vertices[sv][d] - template_vol.nodes[vn][d];
    }
    NodalField u = solve_dirichlet(k, bc, 1e-12, "u" + std::to_string(d));
    for (int i = 0; i < out.num_nodes(); ++i) out.nodes[i][d] += u.values[i];
  }

  long inverted = 0;
  for (int e = 0; e < out.num_elems(); ++e)
    if (tet_signed_volume(out, e) <= 0.0) ++inverted;
  require(inverted == 0, "harmonic_volumize: " + std::to_string(inverted) +
                             " inverted tetrahedra after deformation");
  return out;
}

inline TetMesh harmonic_volumize(const TemplateModel& tm, const SurfaceMesh& fitted) {
  return harmonic_volumize(tm.volume, tm.surface_to_volume, fitted);
}

struct ElementQuality {
  std::vector<double> signed_volume;
  std::vector<double> aspect;  // circumradius / inradius; 3 for the regular tet
  double min_aspect = 0, median_aspect = 0, max_aspect = 0;
  long nonpositive_volumes = 0;
};

inline ElementQuality element_quality(const TetMesh& mesh) {
  ElementQuality q;
  q.signed_volume.reserve(mesh.num_elems());
  q.aspect.reserve(mesh.num_elems());
  for (int e = 0; e < mesh.num_elems(); ++e) {
    const auto& t = mesh.tets[e];
    const Vec3 &p0 = mesh.nodes[t[0]], &p1 = mesh.nodes[t[1]], &p2 = mesh.nodes[t[2]],
               &p3 = mesh.nodes[t[3]];
    double vol = tet_signed_volume(p0, p1, p2, p3);
    q.signed_volume.push_back(vol);
    if (vol <= 0.0) ++q.nonpositive_volumes;

    // Circumcenter from 2 (p_i - p_0) . c = |p_i|^2 - |p_0|^2.
    Mat3 a;
    Vec3 rhs;
    for (int i = 0; i < 3; ++i) {
      Vec3 d = mesh.nodes[t[i + 1]] - p0;
      a.row(i) = 2.0 * d.transpose();
      rhs(i) = mesh.nodes[t[i + 1]].squaredNorm() - p0.squaredNorm();
    }
    double circum = std::numeric_limits<double>::infinity();
    if (std::abs(a.determinant()) > 1e-12) {
      Vec3 c = a.partialPivLu().solve(rhs);
      circum = (c - p0).norm();
    }
    double area = 0.5 * ((p1 - p0).cross(p2 - p0).norm() + (p1 - p0).cross(p3 - p0).norm() +
                         (p2 - p0).cross(p3 - p0).norm() + (p2 - p1).cross(p3 - p1).norm());
    double inradius = area > 0 ? 3.0 * std::abs(vol) / area : 0.0;
    q.aspect.push_back(inradius > 0 ? circum / inradius
                                    : std::numeric_limits<double>::infinity());
  }
  if (!q.aspect.empty()) {
    std::vector<double> sorted = q.aspect;
    std::sort(sorted.begin(), sorted.end());
    q.min_aspect = sorted.front();
    q.max_aspect = sorted.back();
    size_t n = sorted.size();
    q.median_aspect = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return q;
}

inline double mesh_total_volume(const TetMesh& mesh) {
  double v = 0;
  for (int e = 0; e < mesh.num_elems(); ++e) v += tet_signed_volume(mesh, e);
  return v;
}

// --- bit-exact text exports -------------------------------------------------

inline void write_tet_nodes(const TetMesh& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_tet_nodes: cannot open " + path);
  out << m.num_nodes() << "\n" << std::fixed << std::setprecision(6);
  for (const auto& p : m.nodes) out << p.x() << " " << p.y() << " " << p.z() << "\n";
  require(out.good(), "write_tet_nodes: write failure on " + path);
}

inline void write_tet_elements(const TetMesh& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_tet_elements: cannot open " + path);
  out << m.num_elems() << "\n";
  for (int e = 0; e < m.num_elems(); ++e) {
    const auto& t = m.tets[e];
    out << "Tt " << t[0] << " " << t[1] << " " << t[2] << " " << t[3] << " "
        << static_cast<int>(m.region[e]) << "\n";
  }
  require(out.good(), "write_tet_elements: write failure on " + path);
}

// VTK legacy ASCII unstructured grid; always writes CELL_DATA region, plus
// optional nodal scalar arrays and per-cell vector arrays (e.g. fibers).
inline void write_tet_vtk(
    const TetMesh& m, const std::string& path,
    const std::vector<NodalField>& point_fields = {},
    const std::vector<std::pair<std::string, std::vector<Vec3>>>& cell_vectors = {}) {
  std::ofstream out(path);
  require(out.good(), "write_tet_vtk: cannot open " + path);
  out << "# vtk DataFile Version 3.0\n";
  out << "biventricular volume mesh\n";
  out << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << m.num_nodes() << " double\n";
  out << std::setprecision(9);
  for (const auto& p : m.nodes) out << p.x() << " " << p.y() << " " << p.z() << "\n";
  out << "CELLS " << m.num_elems() << " " << 5 * m.num_elems() << "\n";
  for (const auto& t : m.tets)
    out << "4 " << t[0] << " " << t[1] << " " << t[2] << " " << t[3] << "\n";
  out << "CELL_TYPES " << m.num_elems() << "\n";
  for (int e = 0; e < m.num_elems(); ++e) out << "10\n";
  out << "CELL_DATA " << m.num_elems() << "\n";
  out << "SCALARS region int 1\nLOOKUP_TABLE default\n";
  for (auto r : m.region) out << static_cast<int>(r) << "\n";
  for (const auto& [name, vecs] : cell_vectors) {
    require(static_cast<int>(vecs.size()) == m.num_elems(),
            "write_tet_vtk: cell vector field length mismatch: " + name);
    out << "VECTORS " << name << " double\n";
    for (const auto& v : vecs) out << v.x() << " " << v.y() << " " << v.z() << "\n";
  }
  if (!point_fields.empty()) {
    out << "POINT_DATA " << m.num_nodes() << "\n";
    for (const auto& f : point_fields) {
      require(static_cast<int>(f.values.size()) == m.num_nodes(),
              "write_tet_vtk: point field length mismatch: " + f.name);
      out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
      for (double v : f.values) out << v << "\n";
    }
  }
  require(out.good(), "write_tet_vtk: write failure on " + path);
}

}  // namespace cardio
