#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cardiomesh/core.hpp"

namespace cardio {

enum class ElemRegion : int {
  LV_MYO = 1,
  RV_MYO = 2,
  AORTIC_VALVE = 3,
  TRICUSPID_VALVE = 4,
  PULMONARY_VALVE = 5,
  MITRAL_VALVE = 6,
};

// Named boundary node sets on a TetMesh.
namespace surf {
inline const std::string LV_ENDO = "LV_ENDO";
inline const std::string RV_ENDO = "RV_ENDO";
inline const std::string EPI = "EPI";
inline const std::string BASE = "BASE";
inline const std::string APEX_NODE = "APEX_NODE";
inline const std::string MV_RING = "MV_RING";
inline const std::string TV_RING = "TV_RING";
inline const std::string AV_RING = "AV_RING";
inline const std::string PV_RING = "PV_RING";
}  // namespace surf

struct TetMesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 4>> tets;
  std::vector<ElemRegion> region;                     // one tag per element
  std::map<std::string, std::vector<int>> surface_tags;  // named node sets

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_elems() const { return static_cast<int>(tets.size()); }

  const std::vector<int>& tagged(const std::string& name) const {
    auto it = surface_tags.find(name);
    require(it != surface_tags.end(), "TetMesh: missing surface tag " + name);
    return it->second;
  }
};

inline double tet_signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

inline double tet_signed_volume(const TetMesh& m, int e) {
  const auto& t = m.tets[e];
  return tet_signed_volume(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]], m.nodes[t[3]]);
}

struct NodalField {
  std::string name;
  std::vector<double> values;
};

// Compressed sparse row, symmetric matrices stored in full.
struct CsrMatrix {
  int n = 0;
  std::vector<int> row_ptr;
  std::vector<int> col;
  std::vector<double> val;

  static CsrMatrix from_triplets(int n, std::vector<std::array<int, 2>>& idx,
                                 std::vector<double>& v) {
    // Sort by (row, col), merge duplicates.
    std::vector<size_t> order(idx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return idx[a] < idx[b];
    });
    CsrMatrix m;
    m.n = n;
    m.row_ptr.assign(n + 1, 0);
    int prev_r = -1, prev_c = -1;
    for (size_t oi : order) {
      int r = idx[oi][0], c = idx[oi][1];
      if (r == prev_r && c == prev_c) {
        m.val.back() += v[oi];
      } else {
        m.col.push_back(c);
        m.val.push_back(v[oi]);
        m.row_ptr[r + 1]++;
        prev_r = r;
        prev_c = c;
      }
    }
    for (int r = 0; r < n; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
    return m;
  }

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
      y[r] = s;
    }
  }

  double diagonal(int r) const {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
      if (col[k] == r) return val[k];
    return 0.0;
  }
};

// P1 barycentric gradients for one tetrahedron; rows 0..3 are grad(lambda_i).
inline std::array<Vec3, 4> p1_shape_gradients(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                                              const Vec3& p3) {
  Mat3 j;
  j.col(0) = p1 - p0;
  j.col(1) = p2 - p0;
  j.col(2) = p3 - p0;
  Mat3 jinv_t = j.inverse().transpose();
  std::array<Vec3, 4> g;
  g[1] = jinv_t.col(0);
  g[2] = jinv_t.col(1);
  g[3] = jinv_t.col(2);
  g[0] = -(g[1] + g[2] + g[3]);
  return g;
}

// Global P1 Laplace stiffness: K_ij = sum_e V_e grad(phi_i) . grad(phi_j).
inline CsrMatrix assemble_stiffness(const TetMesh& mesh) {
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  idx.reserve(mesh.tets.size() * 16);
  val.reserve(mesh.tets.size() * 16);
  for (int e = 0; e < mesh.num_elems(); ++e) {
    const auto& t = mesh.tets[e];
    double vol = tet_signed_volume(mesh, e);
    require(std::abs(vol) > 1e-12,
            "assemble_stiffness: degenerate element " + std::to_string(e));
    auto g = p1_shape_gradients(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]],
                                mesh.nodes[t[3]]);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        idx.push_back({t[a], t[b]});
        val.push_back(std::abs(vol) * g[a].dot(g[b]));
      }
  }
  return CsrMatrix::from_triplets(mesh.num_nodes(), idx, val);
}

// Jacobi-preconditioned conjugate gradients. Deterministic for a fixed
// ordering; returns the iteration count.
inline int pcg_solve(const CsrMatrix& a, const std::vector<double>& b, std::vector<double>& x,
                     double rel_tol, int max_iters,
                     std::vector<double>* residual_history = nullptr) {
  int n = a.n;
  std::vector<double> r(n), z(n), p(n), ap(n), dinv(n);
  for (int i = 0; i < n; ++i) {
    double d = a.diagonal(i);
    dinv[i] = d != 0.0 ? 1.0 / d : 1.0;
  }
  a.multiply(x, ap);
  double bnorm = 0;
  for (int i = 0; i < n; ++i) {
    r[i] = b[i] - ap[i];
    bnorm += b[i] * b[i];
  }
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return 0;
  }
  double rz = 0;
  for (int i = 0; i < n; ++i) {
    z[i] = dinv[i] * r[i];
    rz += r[i] * z[i];
  }
  p = z;
  int it = 0;
  for (; it < max_iters; ++it) {
    double rnorm = 0;
    for (int i = 0; i < n; ++i) rnorm += r[i] * r[i];
    if (residual_history) residual_history->push_back(std::sqrt(rnorm));
    if (std::sqrt(rnorm) <= rel_tol * bnorm) return it;
    a.multiply(p, ap);
    double pap = 0;
    for (int i = 0; i < n; ++i) pap += p[i] * ap[i];
    require(pap > 0, "pcg_solve: matrix not positive definite on search direction");
    double alpha = rz / pap;
    for (int i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    double rz_new = 0;
    for (int i = 0; i < n; ++i) {
      z[i] = dinv[i] * r[i];
      rz_new += r[i] * z[i];
    }
    double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw Error("pcg_solve: no convergence in " + std::to_string(max_iters) + " iterations");
}

// Dirichlet solve by row/column elimination: fixed nodes hold their boundary
// values exactly, the reduced SPD system is solved with preconditioned CG.
inline NodalField solve_dirichlet(const CsrMatrix& k, const std::map<int, double>& bc,
                                  double tol = 1e-10, const std::string& name = "u") {
  require(!bc.empty(), "solve_dirichlet: empty boundary condition set");
  int n = k.n;
  std::vector<int> reduced_index(n, -1);
  std::vector<int> free_nodes;
  for (int i = 0; i < n; ++i)
    if (!bc.count(i)) {
      reduced_index[i] = static_cast<int>(free_nodes.size());
      free_nodes.push_back(i);
    }
  NodalField out{name, std::vector<double>(n, 0.0)};
  for (const auto& [node, value] : bc) {
    require(node >= 0 && node < n, "solve_dirichlet: bc node out of range");
    out.values[node] = value;
  }
  if (free_nodes.empty()) return out;

  int nf = static_cast<int>(free_nodes.size());
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  std::vector<double> rhs(nf, 0.0);
  for (int fi = 0; fi < nf; ++fi) {
    int i = free_nodes[fi];
    for (int p = k.row_ptr[i]; p < k.row_ptr[i + 1]; ++p) {
      int j = k.col[p];
      if (reduced_index[j] >= 0) {
        idx.push_back({fi, reduced_index[j]});
        val.push_back(k.val[p]);
      } else {
        rhs[fi] -= k.val[p] * out.values[j];
      }
    }
  }
  CsrMatrix kr = CsrMatrix::from_triplets(nf, idx, val);
  std::vector<double> x(nf, 0.0);
  pcg_solve(kr, rhs, x, tol, 20 * n);
  for (int fi = 0; fi < nf; ++fi) out.values[free_nodes[fi]] = x[fi];
  return out;
}

// Exact P1 gradient of a nodal field, one 3-vector per tetrahedron.
inline std::vector<Vec3> element_gradient(const TetMesh& mesh, const NodalField& f) {
  require(f.values.size() == mesh.nodes.size(), "element_gradient: field length mismatch");
  std::vector<Vec3> grads(mesh.tets.size());
  for (int e = 0; e < mesh.num_elems(); ++e) {
    const auto& t = mesh.tets[e];
    auto g = p1_shape_gradients(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]],
                                mesh.nodes[t[3]]);
    Vec3 sum = Vec3::Zero();
    for (int a = 0; a < 4; ++a) sum += f.values[t[a]] * g[a];
    grads[e] = sum;
  }
  return grads;
}

}  // namespace cardio
