#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <queue>
#include <string>
#include <vector>

#include "cardiomesh/femcore.hpp"

namespace cardio {

// Universal ventricular coordinates, one value per mesh node.
struct UVCField {
  std::vector<double> z;    // apicobasal, 0 at apex .. 1 at base
  std::vector<double> rho;  // transmural, 0 endo .. 1 epi
  std::vector<double> phi;  // rotational, (-pi, pi], 0 at the anterior junction
  std::vector<int> chamber;  // 0 = LV, 1 = RV
};

namespace fields_detail {

inline void check_connected(const TetMesh& mesh) {
  if (mesh.num_nodes() == 0) throw Error("compute_uvc: empty mesh");
  std::vector<std::vector<int>> adj(mesh.num_nodes());
  for (const auto& t : mesh.tets)
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) {
        adj[t[a]].push_back(t[b]);
        adj[t[b]].push_back(t[a]);
      }
  std::vector<char> seen(mesh.num_nodes(), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  long count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  require(count == mesh.num_nodes(), "compute_uvc: disconnected myocardium (" +
                                         std::to_string(mesh.num_nodes() - count) +
                                         " unreachable nodes)");
}

}  // namespace fields_detail

// z: Laplace with apex 0 / base 1. rho: Laplace with endocardium 0 /
// epicardium 1 (one global solve; the septal sheet carries both chambers'
// transmural direction). phi: geometric angle about the long axis, zero on
// the anterior side, branch cut on the inferoseptal side (the antipode).
// chamber: LV if the node touches any LV-side element (septum counts as LV).
inline UVCField compute_uvc(const TetMesh& mesh) {
  fields_detail::check_connected(mesh);
  for (const auto& name : {surf::APEX_NODE, surf::BASE, surf::LV_ENDO, surf::EPI})
    require(!mesh.tagged(name).empty(), "compute_uvc: empty surface node set " + name);
  // RV endocardium may be absent (LV-only meshes).
  static const std::vector<int> kNone;
  const std::vector<int>& rv_endo =
      mesh.surface_tags.count(surf::RV_ENDO) ? mesh.tagged(surf::RV_ENDO) : kNone;

  CsrMatrix k = assemble_stiffness(mesh);

  UVCField f;
  {
    std::map<int, double> bc;
    for (int n : mesh.tagged(surf::APEX_NODE)) bc[n] = 0.0;
    for (int n : mesh.tagged(surf::BASE)) bc[n] = 1.0;
    f.z = solve_dirichlet(k, bc, 1e-10, "z").values;
  }
  {
    std::map<int, double> bc;
    for (int n : mesh.tagged(surf::LV_ENDO)) bc[n] = 0.0;
    for (int n : rv_endo) bc[n] = 0.0;
    for (int n : mesh.tagged(surf::EPI)) bc[n] = 1.0;
    f.rho = solve_dirichlet(k, bc, 1e-10, "rho").values;
  }
  // The normalized coordinates are [0,1] by definition; the P1 solve only
  // guarantees that on Delaunay-quality meshes, so clamp the (localized)
  // maximum-principle violations a deformed subject mesh can produce.
  for (double& v : f.z) v = std::clamp(v, 0.0, 1.0);
  for (double& v : f.rho) v = std::clamp(v, 0.0, 1.0);

  // Long axis from the apex node to the base centroid.
  Vec3 apex = mesh.nodes[mesh.tagged(surf::APEX_NODE)[0]];
  Vec3 base_c = Vec3::Zero();
  for (int n : mesh.tagged(surf::BASE)) base_c += mesh.nodes[n];
  base_c /= static_cast<double>(mesh.tagged(surf::BASE).size());
  Vec3 axis = base_c - apex;
  require(axis.norm() > 1e-9, "compute_uvc: degenerate long axis");
  axis.normalize();

  // LV centroid and the septum (LV -> RV) direction fix the angular origin.
  Vec3 lv_c = Vec3::Zero(), rv_c = Vec3::Zero();
  double lv_w = 0, rv_w = 0;
  for (int e = 0; e < mesh.num_elems(); ++e) {
    const auto& t = mesh.tets[e];
    Vec3 c = (mesh.nodes[t[0]] + mesh.nodes[t[1]] + mesh.nodes[t[2]] + mesh.nodes[t[3]]) / 4.0;
    double w = std::abs(tet_signed_volume(mesh, e));
    if (mesh.region[e] == ElemRegion::RV_MYO) {
      rv_c += w * c;
      rv_w += w;
    } else if (mesh.region[e] == ElemRegion::LV_MYO) {
      lv_c += w * c;
      lv_w += w;
    }
  }
  require(lv_w > 0, "compute_uvc: no LV myocardial elements");
  lv_c /= lv_w;
  Vec3 septum_dir;
  if (rv_w > 0) {
    rv_c /= rv_w;
    septum_dir = rv_c - lv_c;
  } else {
    // LV-only meshes: any transverse reference; pick the most axis-orthogonal
    // of the global axes for determinism.
    septum_dir = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  }
  septum_dir -= axis * septum_dir.dot(axis);
  require(septum_dir.norm() > 1e-9, "compute_uvc: septum direction parallel to long axis");
  septum_dir.normalize();
  Vec3 anterior = axis.cross(septum_dir);  // phi = 0 axis
  Vec3 e2 = axis.cross(anterior);

  f.phi.resize(mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    Vec3 q = mesh.nodes[n] - lv_c;
    double a = anterior.dot(q), b = e2.dot(q);
    double p = (a == 0.0 && b == 0.0) ? 0.0 : std::atan2(b, a);
    if (p <= -kPi) p = kPi;  // keep the range half-open (-pi, pi]
    f.phi[n] = p;
  }

  // Chamber labels: LV wins on shared (septal / mitral / aortic) nodes.
  f.chamber.assign(mesh.num_nodes(), -1);
  auto is_lv_side = [](ElemRegion r) {
    return r == ElemRegion::LV_MYO || r == ElemRegion::MITRAL_VALVE ||
           r == ElemRegion::AORTIC_VALVE;
  };
  for (int e = 0; e < mesh.num_elems(); ++e)
    for (int a = 0; a < 4; ++a) {
      int n = mesh.tets[e][a];
      if (is_lv_side(mesh.region[e]))
        f.chamber[n] = 0;
      else if (f.chamber[n] < 0)
        f.chamber[n] = 1;
    }
  return f;
}

struct FiberAngles {
  double alpha_endo_deg = 60.0;
  double alpha_epi_deg = -60.0;
  double beta_endo_deg = -65.0;
  double beta_epi_deg = 25.0;
};

struct FiberFrame {
  std::vector<Vec3> f;  // fiber
  std::vector<Vec3> s;  // sheet
  std::vector<Vec3> n;  // sheet-normal
  std::vector<int> fallback_elements;  // near-singular elements, frames averaged from neighbors
};

// Rule-based fibers: per element, circumferential direction from grad z x
// grad rho, helix rotation alpha(rho) about the transmural direction, then
// sheet rotation beta(rho) about the fiber; angles linear in the element-mean
// rho. Elements with vanishing gradients inherit the average of their
// node-neighbors' frames.
inline FiberFrame compute_fibers(const TetMesh& mesh, const UVCField& uvc,
                                 const FiberAngles& angles = {}) {
  require(uvc.z.size() == mesh.nodes.size() && uvc.rho.size() == mesh.nodes.size(),
          "compute_fibers: UVC field size mismatch");
  std::vector<Vec3> gz = element_gradient(mesh, {"z", uvc.z});
  std::vector<Vec3> gr = element_gradient(mesh, {"rho", uvc.rho});

  int ne = mesh.num_elems();
  FiberFrame out;
  out.f.assign(ne, Vec3::Zero());
  out.s.assign(ne, Vec3::Zero());
  out.n.assign(ne, Vec3::Zero());
  std::vector<char> ok(ne, 0);

  const double eps = 1e-8;
  for (int e = 0; e < ne; ++e) {
    Vec3 c = gz[e].cross(gr[e]);
    if (gr[e].norm() < eps || gz[e].norm() < eps || c.norm() < eps) continue;
    Vec3 t_hat = gr[e].normalized();
    Vec3 c_hat = c.normalized();

    const auto& t = mesh.tets[e];
    double rho =
        (uvc.rho[t[0]] + uvc.rho[t[1]] + uvc.rho[t[2]] + uvc.rho[t[3]]) / 4.0;
    double alpha = deg2rad(angles.alpha_endo_deg * (1.0 - rho) + angles.alpha_epi_deg * rho);
    double beta = deg2rad(angles.beta_endo_deg * (1.0 - rho) + angles.beta_epi_deg * rho);

    Vec3 fiber = Eigen::AngleAxisd(alpha, t_hat) * c_hat;
    Vec3 sheet = Eigen::AngleAxisd(beta, fiber) * t_hat;
    // Orthonormalize (exact up to roundoff already).
    fiber.normalize();
    sheet = (sheet - fiber * fiber.dot(sheet)).normalized();
    out.f[e] = fiber;
    out.s[e] = sheet;
    out.n[e] = fiber.cross(sheet);
    ok[e] = 1;
  }

  // Neighbor fallback for singular elements (typically at the apex).
  std::vector<std::vector<int>> node_elems(mesh.num_nodes());
  for (int e = 0; e < ne; ++e)
    for (int a = 0; a < 4; ++a) node_elems[mesh.tets[e][a]].push_back(e);
  bool progress = true;
  while (progress) {
    progress = false;
    for (int e = 0; e < ne; ++e) {
      if (ok[e]) continue;
      Vec3 fsum = Vec3::Zero(), ssum = Vec3::Zero();
      for (int a = 0; a < 4; ++a)
        for (int nb : node_elems[mesh.tets[e][a]])
          if (ok[nb] && nb != e) {
            fsum += out.f[nb];
            ssum += out.s[nb];
          }
      if (fsum.norm() < eps) continue;
      Vec3 fiber = fsum.normalized();
      Vec3 sheet = ssum - fiber * fiber.dot(ssum);
      if (sheet.norm() < eps) continue;
      sheet.normalize();
      out.f[e] = fiber;
      out.s[e] = sheet;
      out.n[e] = fiber.cross(sheet);
      ok[e] = 1;
      out.fallback_elements.push_back(e);
      progress = true;
    }
  }
  for (int e = 0; e < ne; ++e)
    require(ok[e] != 0, "compute_fibers: element " + std::to_string(e) +
                            " has vanishing gradients and no resolvable neighbors");
  std::sort(out.fallback_elements.begin(), out.fallback_elements.end());
  return out;
}

// Fibers file: header "2", then per element "fx fy fz sx sy sz" (6 decimals).
inline void write_fibers(const FiberFrame& fib, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_fibers: cannot open " + path);
  out << "2\n" << std::fixed << std::setprecision(6);
  for (size_t e = 0; e < fib.f.size(); ++e)
    out << fib.f[e].x() << " " << fib.f[e].y() << " " << fib.f[e].z() << " " << fib.s[e].x()
        << " " << fib.s[e].y() << " " << fib.s[e].z() << "\n";
  require(out.good(), "write_fibers: write failure on " + path);
}

inline std::vector<NodalField> uvc_point_fields(const UVCField& f) {
  std::vector<NodalField> out;
  out.push_back({"z", f.z});
  out.push_back({"rho", f.rho});
  out.push_back({"phi", f.phi});
  NodalField ch{"chamber", {}};
  ch.values.assign(f.chamber.begin(), f.chamber.end());
  out.push_back(ch);
  return out;
}

}  // namespace cardio
