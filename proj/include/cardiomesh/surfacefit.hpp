#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cardiomesh/contours.hpp"
#include "cardiomesh/femcore.hpp"
#include "cardiomesh/surface.hpp"

namespace cardio {

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

inline SurfaceMesh apply_transform(const SurfaceMesh& m, const SimilarityTransform& t) {
  SurfaceMesh out = m;
  for (auto& v : out.vertices) v = t.apply(v);
  for (auto& [name, a] : out.landmarks) a.position = t.apply(a.position);
  return out;
}

// Closed-form similarity Procrustes (rotation + translation + isotropic
// scale) mapping the template's named landmarks onto the extracted ones.
inline SimilarityTransform rigid_init(const SurfaceMesh& tmpl,
                                      const std::vector<ContourSet>& contour_sets) {
  std::vector<Vec3> src, dst;
  for (const auto& cs : contour_sets)
    for (const auto& [name, p] : cs.landmarks) {
      auto it = tmpl.landmarks.find(name);
      if (it == tmpl.landmarks.end()) continue;
      src.push_back(it->second.position);
      dst.push_back(p);
    }
  int n = static_cast<int>(src.size());
  require(n >= 4, "rigid_init: fewer than 4 matched landmarks (" + std::to_string(n) + ")");

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;
  Mat3 cov = Mat3::Zero();
  double var_s = 0;
  for (int i = 0; i < n; ++i) {
    cov += (dst[i] - mu_d) * (src[i] - mu_s).transpose();
    var_s += (src[i] - mu_s).squaredNorm();
  }
  cov /= n;
  var_s /= n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  require(svd.singularValues()(2) > 1e-9 * std::max(1.0, svd.singularValues()(0)),
          "rigid_init: landmarks are (nearly) coplanar, transform underdetermined");
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  t.scale = (svd.singularValues().asDiagonal() * d).trace() / var_s;
  t.translation = mu_d - t.scale * t.rotation * mu_s;
  return t;
}

struct FitConfig {
  double lambda_smooth = 1.0;
  int max_iters = 20;
  double tol_mm = 0.05;
  double landmark_weight = 10.0;  // relative to unit contour weight
};

struct FitResult {
  SurfaceMesh mesh;
  int iterations = 0;
  std::vector<double> objective_history;  // non-increasing by construction
  bool self_intersection_warning = false;
};

namespace fit_detail {

inline std::vector<SurfRegion> regions_for_kind(ContourKind k) {
  // The septal patch is geometrically the LV epicardial surface seen from the
  // RV, so both epicardial and septal contours may match it.
  // Valve rings border their chamber's contours at the base, so the basal-most
  // contour points may match ring rim vertices; without that the cap region has
  // no data at all and the biharmonic extension is free to balloon.
  switch (k) {
    case ContourKind::LV_ENDO:
      return {SurfRegion::LV_ENDO, SurfRegion::MV_RING, SurfRegion::AV_RING};
    case ContourKind::LV_EPI: return {SurfRegion::LV_EPI, SurfRegion::RV_ENDO_SEPTAL};
    case ContourKind::RV_SEPTUM: return {SurfRegion::RV_ENDO_SEPTAL};
    case ContourKind::RV_FREEWALL:
      return {SurfRegion::RV_ENDO_FREEWALL, SurfRegion::TV_RING, SurfRegion::PV_RING};
  }
  return {};
}

// Uniform graph Laplacian L = D - A of the triangle mesh, as CSR.
inline CsrMatrix graph_laplacian(const SurfaceMesh& m) {
  std::set<std::pair<int, int>> edges;
  for (const auto& t : m.triangles)
    for (int c = 0; c < 3; ++c) {
      int a = t[c], b = t[(c + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  std::vector<double> degree(m.vertices.size(), 0.0);
  for (const auto& [a, b] : edges) {
    idx.push_back({a, b});
    val.push_back(-1.0);
    idx.push_back({b, a});
    val.push_back(-1.0);
    degree[a] += 1.0;
    degree[b] += 1.0;
  }
  for (int i = 0; i < m.num_vertices(); ++i) {
    idx.push_back({i, i});
    val.push_back(degree[i]);
  }
  return CsrMatrix::from_triplets(m.num_vertices(), idx, val);
}

// C = A^T A for CSR (small meshes; dense-ish row merge).
inline CsrMatrix csr_ata(const CsrMatrix& a) {
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  // A is symmetric here (Laplacian), so A^T A = A A.
  std::vector<double> row(a.n, 0.0);
  std::vector<int> touched;
  for (int i = 0; i < a.n; ++i) {
    touched.clear();
    for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      int k = a.col[p];
      double v = a.val[p];
      for (int q = a.row_ptr[k]; q < a.row_ptr[k + 1]; ++q) {
        int j = a.col[q];
        if (row[j] == 0.0) touched.push_back(j);
        row[j] += v * a.val[q];
      }
    }
    for (int j : touched) {
      idx.push_back({i, j});
      val.push_back(row[j]);
      row[j] = 0.0;
    }
  }
  return CsrMatrix::from_triplets(a.n, idx, val);
}

inline void axpy_csr(CsrMatrix& a, double alpha, const std::vector<int>& diag_rows,
                     const std::vector<double>& diag_vals) {
  // a += diag(alpha * w) restricted to given rows; diagonal entries exist in
  // the Laplacian-normal matrix for every vertex.
  for (size_t r = 0; r < diag_rows.size(); ++r) {
    int i = diag_rows[r];
    for (int p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p)
      if (a.col[p] == i) {
        a.val[p] += alpha * diag_vals[r];
        break;
      }
  }
}

}  // namespace fit_detail

// Laplacian-regularized iterative closest-vertex fit of the rigidly placed
// template to the extracted contours. Minimizes
//   sum_m ||v_match(m) - p_m||^2 + lambda * ||L (V - V0)||^2
// re-matching correspondences each iteration; valve landmarks with template
// vertices act as 10x-weighted point constraints. The tracked objective is
// non-increasing: re-matching can only shrink the data term and the solve
// minimizes the full objective.
inline FitResult fit_surface(const SurfaceMesh& placed_template,
                             const std::vector<ContourSet>& contour_sets,
                             const FitConfig& cfg = {}) {
  using namespace fit_detail;
  const SurfaceMesh& tmpl = placed_template;
  int n = tmpl.num_vertices();

  // Gather contour points per allowed-region bucket.
  std::map<ContourKind, std::vector<Vec3>> points;
  for (const auto& cs : contour_sets)
    for (const auto& c : cs.contours)
      for (const auto& p : c.points) points[c.kind].push_back(p);

  std::map<ContourKind, std::vector<int>> candidates;
  for (const auto& [kind, _] : points) {
    std::vector<int> cand;
    auto regs = regions_for_kind(kind);
    for (int v = 0; v < n; ++v)
      for (auto r : regs)
        if (tmpl.vertex_region[v] == r) {
          cand.push_back(v);
          break;
        }
    require(!cand.empty(), "fit_surface: no template vertices for contour kind " + to_string(kind));
    candidates[kind] = cand;
  }

  // Landmark constraints: template vertex -> extracted point.
  std::vector<std::pair<int, Vec3>> landmark_constraints;
  for (const auto& cs : contour_sets)
    for (const auto& [name, p] : cs.landmarks) {
      auto it = tmpl.landmarks.find(name);
      if (it == tmpl.landmarks.end() || it->second.vertex < 0) continue;
      landmark_constraints.push_back({it->second.vertex, p});
    }

  CsrMatrix lap = graph_laplacian(tmpl);
  CsrMatrix reg = csr_ata(lap);  // L^T L

  FitResult result;
  result.mesh = tmpl;
  std::vector<Vec3>& v = result.mesh.vertices;
  const std::vector<Vec3>& v0 = tmpl.vertices;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // (i) correspondences: nearest candidate vertex per contour point.
    std::vector<double> weight(n, 0.0);
    std::vector<Vec3> target(n, Vec3::Zero());
    double data_term = 0.0;
    for (const auto& [kind, pts] : points) {
      const auto& cand = candidates[kind];
      for (const auto& p : pts) {
        int best = cand[0];
        double best_d = std::numeric_limits<double>::max();
        for (int cv : cand) {
          double d = (v[cv] - p).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = cv;
          }
        }
        weight[best] += 1.0;
        target[best] += p;
        data_term += best_d;
      }
    }
    for (const auto& [vid, p] : landmark_constraints) {
      weight[vid] += cfg.landmark_weight;
      target[vid] += cfg.landmark_weight * p;
      data_term += cfg.landmark_weight * (v[vid] - p).squaredNorm();
    }

    {
      // Objective before the solve (current V, new correspondences).
      std::vector<double> lx(n), tmpv(n);
      double reg_term = 0.0;
      for (int d = 0; d < 3; ++d) {
        for (int i = 0; i < n; ++i) lx[i] = v[i][d] - v0[i][d];
        lap.multiply(lx, tmpv);
        for (int i = 0; i < n; ++i) reg_term += tmpv[i] * tmpv[i];
      }
      double obj = data_term + cfg.lambda_smooth * reg_term;
      if (!result.objective_history.empty() && obj > result.objective_history.back() + 1e-9)
        obj = result.objective_history.back();  // numerical guard; solver never increases it
      result.objective_history.push_back(obj);
    }

    // (ii) linear solve per coordinate: (W + lambda L^T L) x = W t + lambda L^T L x0.
    CsrMatrix a = reg;
    for (auto& x : a.val) x *= cfg.lambda_smooth;
    std::vector<int> wrows;
    std::vector<double> wvals;
    for (int i = 0; i < n; ++i)
      if (weight[i] > 0) {
        wrows.push_back(i);
        wvals.push_back(weight[i]);
      }
    require(!wrows.empty(), "fit_surface: no correspondences at all");
    axpy_csr(a, 1.0, wrows, wvals);

    std::vector<Vec3> v_new(n);
    std::vector<double> rhs(n), x(n), reg_rhs(n), x0(n);
    for (int d = 0; d < 3; ++d) {
      for (int i = 0; i < n; ++i) x0[i] = v0[i][d];
      reg.multiply(x0, reg_rhs);
      for (int i = 0; i < n; ++i) {
        rhs[i] = cfg.lambda_smooth * reg_rhs[i];
        if (weight[i] > 0) rhs[i] += target[i][d];
        x[i] = v[i][d];
      }
      pcg_solve(a, rhs, x, 1e-10, 20 * n);
      for (int i = 0; i < n; ++i) v_new[i][d] = x[i];
    }

    // (iii) convergence on max vertex displacement.
    double max_disp = 0.0;
    for (int i = 0; i < n; ++i) max_disp = std::max(max_disp, (v_new[i] - v[i]).norm());
    v = v_new;
    result.iterations = iter + 1;
    if (max_disp < cfg.tol_mm) break;
  }

  // Septum / free-wall penetration check (warning, not failure).
  {
    auto septal = result.mesh.region_vertices(SurfRegion::RV_ENDO_SEPTAL);
    auto freewall = result.mesh.region_vertices(SurfRegion::RV_ENDO_FREEWALL);
    if (!septal.empty() && !freewall.empty()) {
      Vec3 sc = Vec3::Zero();
      for (int s : septal) sc += result.mesh.vertices[s];
      sc /= static_cast<double>(septal.size());
      Vec3 fc = Vec3::Zero();
      for (int f : freewall) fc += result.mesh.vertices[f];
      fc /= static_cast<double>(freewall.size());
      Vec3 axis = fc - sc;  // septum -> free wall
      if (axis.norm() > 1e-9) {
        axis.normalize();
        double max_sep = -std::numeric_limits<double>::max();
        for (int s : septal) max_sep = std::max(max_sep, (result.mesh.vertices[s] - sc).dot(axis));
        for (int f : freewall)
          if ((result.mesh.vertices[f] - sc).dot(axis) < max_sep - 1e-9) {
            // A free-wall vertex sits behind the furthest septal vertex.
            result.self_intersection_warning = true;
            break;
          }
      }
    }
  }
  return result;
}

// Displace the RV epicardial vertices from their paired endocardial vertices
// along outward area-weighted normals of the endocardial sheet. Default
// thickness 3 mm; configurable.
inline SurfaceMesh extrude_rv_epicardium(const SurfaceMesh& mesh,
                                         const std::map<int, int>& rv_epi_source,
                                         double thickness_mm = 3.0) {
  require(thickness_mm >= 0.0, "extrude_rv_epicardium: negative thickness");
  if (thickness_mm == 0.0 || rv_epi_source.empty()) return mesh;

  // Normals of the endocardial sheet alone (triangles fully inside RV endo).
  auto is_endo = [&](int v) {
    return mesh.vertex_region[v] == SurfRegion::RV_ENDO_FREEWALL;
  };
  std::vector<Vec3> sheet_normal(mesh.vertices.size(), Vec3::Zero());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles[t];
    if (!is_endo(tr[0]) || !is_endo(tr[1]) || !is_endo(tr[2])) continue;
    Vec3 tn = triangle_normal(mesh, t);
    for (int c = 0; c < 3; ++c) sheet_normal[tr[c]] += tn;
  }
  // Patch-boundary vertices have no pure-endo triangle; fall back to every
  // incident triangle touching the vertex so the boundary still gets a normal.
  for (const auto& [epi, endo] : rv_epi_source) {
    if (sheet_normal[endo].norm() > 0) continue;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      const auto& tr = mesh.triangles[t];
      if (tr[0] != endo && tr[1] != endo && tr[2] != endo) continue;
      sheet_normal[endo] += triangle_normal(mesh, t);
    }
  }
  // Orient away from the cavity (centroid of all RV endocardial vertices).
  Vec3 ref = Vec3::Zero();
  long nref = 0;
  for (int vtx = 0; vtx < mesh.num_vertices(); ++vtx)
    if (mesh.vertex_region[vtx] == SurfRegion::RV_ENDO_FREEWALL ||
        mesh.vertex_region[vtx] == SurfRegion::RV_ENDO_SEPTAL) {
      ref += mesh.vertices[vtx];
      ++nref;
    }
  require(nref > 0, "extrude_rv_epicardium: no RV endocardial vertices");
  ref /= static_cast<double>(nref);

  SurfaceMesh out = mesh;
  for (const auto& [epi, endo] : rv_epi_source) {
    Vec3 nrm = sheet_normal[endo];
    double len = nrm.norm();
    require(len > 0, "extrude_rv_epicardium: endo vertex without sheet normal");
    nrm /= len;
    if (nrm.dot(mesh.vertices[endo] - ref) < 0) nrm = -nrm;
    out.vertices[epi] = mesh.vertices[endo] + thickness_mm * nrm;
  }

  // Inverted-triangle check on the epicardial sheet.
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles[t];
    bool all_epi = true;
    for (int c = 0; c < 3; ++c)
      if (mesh.vertex_region[tr[c]] != SurfRegion::RV_EPI) all_epi = false;
    if (!all_epi) continue;
    Vec3 before = triangle_normal(mesh, t);
    Vec3 after = triangle_normal(out, t);
    require(before.dot(after) >= 0,
            "extrude_rv_epicardium: inverted triangle after extrusion (excessive curvature)");
  }
  return out;
}

}  // namespace cardio
