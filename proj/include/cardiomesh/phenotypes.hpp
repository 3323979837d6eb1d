#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cardiomesh/labelgrid.hpp"
#include "cardiomesh/surface.hpp"

namespace cardio {

struct PhenotypeRecord {
  std::string subject_id;
  std::string source;  // "MASK" or "MESH"
  double lvedv_ml = 0, lvesv_ml = 0;
  double rvedv_ml = 0, rvesv_ml = 0;
  double lvm_g = 0;
  double lvef_pct = 0, rvef_pct = 0;
};

// Voxel-count phenotypes from the SAX segmentation. RV values are zero when
// the view carries no RV label or the RV is absent.
inline PhenotypeRecord mask_phenotypes(const LabelVolume& sax, int ed, int es,
                                       double density_g_per_ml = 1.05) {
  require(sax.view() == View::SAX, "mask_phenotypes: SAX volume required");
  require(ed >= 0 && ed < sax.nt() && es >= 0 && es < sax.nt(),
          "mask_phenotypes: frame out of range");
  double vox_ml = sax.spacing()[0] * sax.spacing()[1] * sax.spacing()[2] / 1000.0;

  auto count = [&](const std::string& name, int frame) -> long {
    auto code = sax.label_code(name);
    return code ? count_label(sax, frame, *code) : 0;
  };
  PhenotypeRecord r;
  r.source = "MASK";
  r.lvedv_ml = count(label::LV_CAVITY, ed) * vox_ml;
  r.lvesv_ml = count(label::LV_CAVITY, es) * vox_ml;
  require(r.lvedv_ml > 0, "mask_phenotypes: zero LV end-diastolic volume");
  r.rvedv_ml = count(label::RV_CAVITY, ed) * vox_ml;
  r.rvesv_ml = count(label::RV_CAVITY, es) * vox_ml;
  r.lvm_g = count(label::LV_MYO, ed) * vox_ml * density_g_per_ml;
  r.lvef_pct = 100.0 * (r.lvedv_ml - r.lvesv_ml) / r.lvedv_ml;
  r.rvef_pct = r.rvedv_ml > 0 ? 100.0 * (r.rvedv_ml - r.rvesv_ml) / r.rvedv_ml : 0.0;
  return r;
}

namespace pheno_detail {

inline double signed_volume_mm3(const std::vector<std::array<int, 3>>& tris,
                                const std::vector<Vec3>& verts) {
  double v = 0;
  for (const auto& t : tris)
    v += verts[t[0]].cross(verts[t[1]]).dot(verts[t[2]]) / 6.0;
  return v;
}

// Fan-cap every boundary loop of an open oriented triangle subset with its
// own centroid, preserving orientation, and return the capped triangle list.
inline std::vector<std::array<int, 3>> cap_boundary_loops(
    std::vector<std::array<int, 3>> tris, std::vector<Vec3>& verts) {
  std::map<std::pair<int, int>, int> dir_count;
  for (const auto& t : tris)
    for (int c = 0; c < 3; ++c) dir_count[{t[c], t[(c + 1) % 3]}]++;
  std::map<int, int> next;  // boundary successor: edge a->b unmatched means b->a is a boundary step
  for (const auto& [e, n] : dir_count) {
    require(n == 1, "mesh_volume: non-manifold edge");
    if (!dir_count.count({e.second, e.first})) {
      require(!next.count(e.second), "mesh_volume: branching boundary");
      next[e.second] = e.first;  // cap edges run opposite to the surface edges
    }
  }
  std::set<int> visited;
  for (const auto& [start, _] : next) {
    if (visited.count(start)) continue;
    std::vector<int> loop;
    int cur = start;
    do {
      loop.push_back(cur);
      visited.insert(cur);
      auto it = next.find(cur);
      require(it != next.end(), "mesh_volume: open (untraceable) boundary loop");
      cur = it->second;
    } while (cur != start);
    require(loop.size() >= 3, "mesh_volume: degenerate boundary loop");
    Vec3 c = Vec3::Zero();
    for (int v : loop) c += verts[v];
    c /= static_cast<double>(loop.size());
    int ci = static_cast<int>(verts.size());
    verts.push_back(c);
    for (size_t i = 0; i < loop.size(); ++i)
      tris.push_back({loop[i], loop[(i + 1) % loop.size()], ci});
  }
  return tris;
}

}  // namespace pheno_detail

// Signed divergence-theorem volume of a closed triangulated surface, in mL.
// Positive for outward orientation; negative signals an inside-out surface.
inline double mesh_volume(const SurfaceMesh& m) {
  require(boundary_edge_count(m.triangles) == 0,
          "mesh_volume: open surface (boundary edges present)");
  return pheno_detail::signed_volume_mm3(m.triangles, m.vertices) / 1000.0;
}

// Cavity volume in mL: select the triangles lying on the cavity wall (all
// vertices in core+helper regions, at least one in core), fan-cap each
// boundary loop (basal mouth, possible pinholes at patch corners), and
// integrate. Endocardial surfaces are oriented out of the myocardium, i.e.
// into the cavity, hence the sign flip.
inline double cavity_volume_ml(const SurfaceMesh& m, const std::set<SurfRegion>& core,
                               const std::set<SurfRegion>& helper, bool inward_oriented = true) {
  std::vector<std::array<int, 3>> tris;
  for (const auto& t : m.triangles) {
    bool allowed = true, has_core = false;
    for (int c = 0; c < 3; ++c) {
      SurfRegion r = m.vertex_region[t[c]];
      if (core.count(r))
        has_core = true;
      else if (!helper.count(r))
        allowed = false;
    }
    if (allowed && has_core) tris.push_back(t);
  }
  require(!tris.empty(), "cavity_volume_ml: empty cavity surface selection");
  std::vector<Vec3> verts = m.vertices;
  tris = pheno_detail::cap_boundary_loops(std::move(tris), verts);
  require(boundary_edge_count(tris) == 0, "cavity_volume_ml: surface not closed after capping");
  double sign = inward_oriented ? -1.0 : 1.0;
  double vol = sign * pheno_detail::signed_volume_mm3(tris, verts) / 1000.0;
  require(vol > 0, "cavity_volume_ml: non-positive cavity volume (orientation error?)");
  return vol;
}

inline double lv_cavity_volume_ml(const SurfaceMesh& m) {
  return cavity_volume_ml(m, {SurfRegion::LV_ENDO},
                          {SurfRegion::MV_RING, SurfRegion::AV_RING});
}

inline double rv_cavity_volume_ml(const SurfaceMesh& m) {
  return cavity_volume_ml(
      m, {SurfRegion::RV_ENDO_SEPTAL, SurfRegion::RV_ENDO_FREEWALL},
      {SurfRegion::TV_RING, SurfRegion::PV_RING, SurfRegion::LV_EPI});
}

// LV wall volume: epicardial enclosure minus the cavity. The septal patch is
// part of the LV epicardial ellipsoid and completes the enclosure; the outer
// wall is oriented outward, unlike the endocardial selections.
inline double lv_wall_volume_ml(const SurfaceMesh& m) {
  double epi = cavity_volume_ml(m, {SurfRegion::LV_EPI, SurfRegion::RV_ENDO_SEPTAL},
                                {SurfRegion::MV_RING, SurfRegion::AV_RING},
                                /*inward_oriented=*/false);
  double cav = lv_cavity_volume_ml(m);
  require(epi > cav, "lv_wall_volume_ml: epicardial volume not larger than cavity");
  return epi - cav;
}

inline PhenotypeRecord mesh_phenotypes(const SurfaceMesh& ed, const SurfaceMesh& es,
                                       double density_g_per_ml = 1.05) {
  PhenotypeRecord r;
  r.source = "MESH";
  r.lvedv_ml = lv_cavity_volume_ml(ed);
  r.lvesv_ml = lv_cavity_volume_ml(es);
  r.rvedv_ml = rv_cavity_volume_ml(ed);
  r.rvesv_ml = rv_cavity_volume_ml(es);
  r.lvm_g = lv_wall_volume_ml(ed) * density_g_per_ml;
  r.lvef_pct = 100.0 * (r.lvedv_ml - r.lvesv_ml) / r.lvedv_ml;
  r.rvef_pct = r.rvedv_ml > 0 ? 100.0 * (r.rvedv_ml - r.rvesv_ml) / r.rvedv_ml : 0.0;
  return r;
}

// |mesh - mask| / mask; the denominator is the segmentation-derived value.
inline double relative_difference(double mesh_val, double mask_val) {
  require(mask_val > 0, "relative_difference: non-positive mask value");
  return std::abs(mesh_val - mask_val) / mask_val;
}

// Linear-interpolation (type-7) quantile of an unsorted sample.
inline double quantile_type7(std::vector<double> v, double p) {
  require(!v.empty(), "quantile_type7: empty sample");
  require(p >= 0.0 && p <= 1.0, "quantile_type7: p out of [0,1]");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  size_t lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

struct QcResult {
  std::map<std::string, double> threshold;  // per phenotype: Q3 + k*IQR
  std::set<std::string> excluded;           // subjects over threshold in ANY phenotype
};

// Tukey-style filter on per-subject, per-phenotype relative differences.
inline QcResult qc_outlier_filter(
    const std::map<std::string, std::map<std::string, double>>& rel_diff_by_subject,
    double k = 1.5) {
  require(!rel_diff_by_subject.empty(), "qc_outlier_filter: empty cohort");
  std::map<std::string, std::vector<double>> by_pheno;
  for (const auto& [subj, phenos] : rel_diff_by_subject)
    for (const auto& [name, v] : phenos) by_pheno[name].push_back(v);

  QcResult out;
  for (const auto& [name, vals] : by_pheno) {
    require(vals.size() >= 4, "qc_outlier_filter: fewer than 4 subjects for " + name);
    double q1 = quantile_type7(vals, 0.25);
    double q3 = quantile_type7(vals, 0.75);
    out.threshold[name] = q3 + k * (q3 - q1);
  }
  for (const auto& [subj, phenos] : rel_diff_by_subject)
    for (const auto& [name, v] : phenos)
      if (v > out.threshold.at(name)) {
        out.excluded.insert(subj);
        break;
      }
  return out;
}

inline void write_phenotypes_csv(const std::vector<PhenotypeRecord>& records,
                                 const std::set<std::string>& qc_excluded,
                                 const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_phenotypes_csv: cannot open " + path);
  out << "subject_id,source,lvedv_ml,lvesv_ml,rvedv_ml,rvesv_ml,lvm_g,lvef_pct,rvef_pct,"
         "qc_pass\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : records)
    out << r.subject_id << "," << r.source << "," << r.lvedv_ml << "," << r.lvesv_ml << ","
        << r.rvedv_ml << "," << r.rvesv_ml << "," << r.lvm_g << "," << r.lvef_pct << ","
        << r.rvef_pct << "," << (qc_excluded.count(r.subject_id) ? 0 : 1) << "\n";
  require(out.good(), "write_phenotypes_csv: write failure on " + path);
}

}  // namespace cardio
