#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cardiomesh/femcore.hpp"
#include "cardiomesh/surface.hpp"

#include <nlohmann/json.hpp>

namespace cardio {

// The shipped biventricular model: a surface mesh and a volumetric mesh with
// 1:1 correspondence between surface vertices and volume boundary nodes.
struct TemplateModel {
  std::string id;
  SurfaceMesh surface;
  TetMesh volume;
  std::vector<int> surface_to_volume;       // surface vertex -> volume node
  std::map<int, int> rv_epi_source;         // RV_EPI vertex -> RV endo vertex
};

namespace template_detail {

// Consistent tetrahedralization of a convex cell without extra nodes: every
// quad face is split by the diagonal through its smallest global vertex id
// (shared faces therefore agree across cells), and the cell is fanned from
// its smallest global vertex over the triangles of the far faces. Degenerate
// (collapsed) tets are dropped.
inline void add_cell(const std::vector<Vec3>& nodes, const std::vector<int>& corners,
                     const std::vector<std::vector<int>>& faces, ElemRegion region,
                     std::vector<std::array<int, 4>>& tets, std::vector<ElemRegion>& regions) {
  int apex = corners[0];
  for (int c : corners) apex = std::min(apex, c);
  for (const auto& face : faces) {
    std::vector<int> f;
    for (int local : face) f.push_back(corners[local]);
    bool contains_apex = false;
    for (int v : f)
      if (v == apex) contains_apex = true;
    if (contains_apex) continue;
    std::vector<std::array<int, 3>> tris;
    if (f.size() == 3) {
      tris.push_back({f[0], f[1], f[2]});
    } else {
      // Rotate so the smallest id is first, then split along that diagonal.
      int mi = 0;
      for (int s = 1; s < 4; ++s)
        if (f[s] < f[mi]) mi = s;
      std::array<int, 4> r = {f[mi], f[(mi + 1) % 4], f[(mi + 2) % 4], f[(mi + 3) % 4]};
      tris.push_back({r[0], r[1], r[2]});
      tris.push_back({r[0], r[2], r[3]});
    }
    for (auto t : tris) {
      if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
      double vol = tet_signed_volume(nodes[apex], nodes[t[0]], nodes[t[1]], nodes[t[2]]);
      if (std::abs(vol) < 1e-9) continue;
      std::array<int, 4> tet = {apex, t[0], t[1], t[2]};
      if (vol < 0) std::swap(tet[2], tet[3]);
      tets.push_back(tet);
      regions.push_back(region);
    }
  }
}

inline const std::vector<std::vector<int>>& hex_faces() {
  // Corners: 0..3 bottom (CCW), 4..7 top.
  static const std::vector<std::vector<int>> f = {
      {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
  return f;
}

inline const std::vector<std::vector<int>>& wedge_faces() {
  // Corners: 0..2 bottom triangle, 3..5 top triangle.
  static const std::vector<std::vector<int>> f = {
      {0, 2, 1}, {3, 4, 5}, {0, 1, 4, 3}, {1, 2, 5, 4}, {2, 0, 3, 5}};
  return f;
}

struct BuildParams {
  // Matches the default phantom scene.
  double endo_a = 25.0, endo_b = 25.0, endo_c = 45.0;
  double wall = 8.0;
  Vec3 rv_center{30.0, 0.0, -8.0};
  Vec3 rv_semi{28.0, 30.0, 40.0};
  double rv_wall = 3.0;
  int n_theta = 48;       // multiple of 8 so the LAX azimuths hit grid lines
  int n_mu = 14;          // apex-to-base rows
  int n_w = 2;            // LV transmural layers
  int sector_half = 6;    // RV septal sector: theta index in [-sector_half, sector_half]
  int rv_j0 = 5;          // first apicobasal row of the RV patch
};

// Far intersection parameter t > 0 of the ray t*p with an ellipsoid.
inline double ray_ellipsoid_far(const Vec3& p, const Vec3& center, const Vec3& semi) {
  double a = 0, b = 0, c = -1;
  for (int d = 0; d < 3; ++d) {
    double s2 = semi[d] * semi[d];
    a += p[d] * p[d] / s2;
    b += -2.0 * p[d] * center[d] / s2;
    c += center[d] * center[d] / s2;
  }
  double disc = b * b - 4 * a * c;
  if (disc <= 0) return -1.0;
  return (-b + std::sqrt(disc)) / (2 * a);
}

}  // namespace template_detail

// Build the shipped template programmatically. Deterministic; the checked-in
// data file is the serialized output of this builder.
inline TemplateModel build_template(const template_detail::BuildParams& bp = {}) {
  using namespace template_detail;
  TemplateModel model;
  model.id = "biv-template-v1";

  const int nt = bp.n_theta, nm = bp.n_mu, nw = bp.n_w;
  std::vector<Vec3>& nodes = model.volume.nodes;
  auto add_node = [&](const Vec3& p) {
    nodes.push_back(p);
    return static_cast<int>(nodes.size()) - 1;
  };

  // --- LV wall nodes: pole column + (theta, mu, w) grid. ---
  auto endo_pt = [&](double theta, double psi) {
    return Vec3(bp.endo_a * std::sin(psi) * std::cos(theta),
                bp.endo_b * std::sin(psi) * std::sin(theta), -bp.endo_c * std::cos(psi));
  };
  auto epi_pt = [&](double theta, double psi) {
    return Vec3((bp.endo_a + bp.wall) * std::sin(psi) * std::cos(theta),
                (bp.endo_b + bp.wall) * std::sin(psi) * std::sin(theta),
                -(bp.endo_c + bp.wall) * std::cos(psi));
  };

  std::vector<int> pole(nw + 1);
  for (int w = 0; w <= nw; ++w) {
    double f = static_cast<double>(w) / nw;
    pole[w] = add_node((1 - f) * Vec3(0, 0, -bp.endo_c) + f * Vec3(0, 0, -(bp.endo_c + bp.wall)));
  }
  // lv(i, j, w): j = 1..nm rows (j = nm is the base plane z = 0).
  std::vector<int> lv(static_cast<size_t>(nt) * nm * (nw + 1));
  auto lv_id = [&](int i, int j, int w) -> int& {
    return lv[(static_cast<size_t>(j - 1) * nt + (i % nt + nt) % nt) * (nw + 1) + w];
  };
  for (int j = 1; j <= nm; ++j) {
    double psi = (kPi / 2) * j / nm;
    for (int i = 0; i < nt; ++i) {
      double theta = 2 * kPi * i / nt;
      for (int w = 0; w <= nw; ++w) {
        double f = static_cast<double>(w) / nw;
        lv_id(i, j, w) = add_node((1 - f) * endo_pt(theta, psi) + f * epi_pt(theta, psi));
      }
    }
  }

  // --- RV free-wall patch glued to the LV epicardium over the septal sector. ---
  const int sh = bp.sector_half, j0 = bp.rv_j0;
  auto theta_of = [&](int i) { return 2 * kPi * i / nt; };
  auto in_sector = [&](int i) {
    int ii = ((i % nt) + nt) % nt;
    return ii <= sh || ii >= nt - sh;
  };
  auto patch_interior = [&](int i, int j) {
    int ii = ((i % nt) + nt) % nt;
    int si = ii <= sh ? ii : ii - nt;  // signed sector index
    return si > -sh && si < sh && j > j0 && j <= nm;
  };
  // Blend: 0 on the glued rim (sector edges, bottom row), 1 well inside.
  auto blend = [&](int si, int j) {
    double u = (si + sh) / (2.0 * sh);
    double v = static_cast<double>(j - j0) / (nm - j0);
    return std::sin(kPi * u) * std::sin(kPi * v / 2.0);
  };

  const int nwr = 1;  // RV wall layers
  std::map<std::array<int, 3>, int> rv_node;  // (signed sector idx, j, k) -> node
  auto rv_id = [&](int si, int j, int k) -> int {
    int i = (si % nt + nt) % nt;
    double bl = patch_interior(i, j) ? blend(si, j) : 0.0;
    if (bl <= 0.0) return lv_id(i, j, nw);  // rim: shared with the LV epicardium
    auto key = std::array<int, 3>{si, j, k};
    auto it = rv_node.find(key);
    if (it != rv_node.end()) return it->second;
    Vec3 e = nodes[lv_id(i, j, nw)];
    double tfar = ray_ellipsoid_far(e, bp.rv_center, bp.rv_semi);
    double reach = tfar > 1.0 ? (tfar - 1.0) : 0.0;
    Vec3 endo = e * (1.0 + reach * bl);
    Vec3 dir = e.normalized();
    double thick = bp.rv_wall * bl;
    double f = static_cast<double>(k) / nwr;
    int id = add_node(endo + f * thick * dir);
    rv_node[key] = id;
    return id;
  };

  // --- Cells. ---
  auto& tets = model.volume.tets;
  auto& regions = model.volume.region;

  // LV valve plugs on the basal element row, by azimuth sector.
  auto lv_region = [&](int i, int j) {
    if (j != nm - 1) return ElemRegion::LV_MYO;
    double deg = theta_of(i) * 180.0 / kPi;
    if (deg >= 30.0 && deg < 75.0) return ElemRegion::AORTIC_VALVE;
    if (deg >= 100.0 && deg < 260.0) return ElemRegion::MITRAL_VALVE;
    return ElemRegion::LV_MYO;
  };

  for (int i = 0; i < nt; ++i)
    for (int w = 0; w < nw; ++w) {
      // Apex wedges between the pole column and the first ring.
      std::vector<int> c = {pole[w],     lv_id(i, 1, w),     lv_id(i + 1, 1, w),
                            pole[w + 1], lv_id(i, 1, w + 1), lv_id(i + 1, 1, w + 1)};
      add_cell(nodes, c, wedge_faces(), ElemRegion::LV_MYO, tets, regions);
    }
  for (int j = 1; j < nm; ++j)
    for (int i = 0; i < nt; ++i)
      for (int w = 0; w < nw; ++w) {
        std::vector<int> c = {lv_id(i, j, w),         lv_id(i + 1, j, w),
                              lv_id(i + 1, j + 1, w), lv_id(i, j + 1, w),
                              lv_id(i, j, w + 1),     lv_id(i + 1, j, w + 1),
                              lv_id(i + 1, j + 1, w + 1), lv_id(i, j + 1, w + 1)};
        add_cell(nodes, c, hex_faces(), lv_region(i, j), tets, regions);
      }

  auto rv_region = [&](int si, int j) {
    if (j != nm - 1) return ElemRegion::RV_MYO;
    double u = (si + sh) / (2.0 * sh);
    if (u < 0.35) return ElemRegion::TRICUSPID_VALVE;
    if (u > 0.65) return ElemRegion::PULMONARY_VALVE;
    return ElemRegion::RV_MYO;
  };
  for (int si = -sh; si < sh; ++si)
    for (int j = j0; j < nm; ++j)
      for (int k = 0; k < nwr; ++k) {
        std::vector<int> c = {rv_id(si, j, k),         rv_id(si + 1, j, k),
                              rv_id(si + 1, j + 1, k), rv_id(si, j + 1, k),
                              rv_id(si, j, k + 1),     rv_id(si + 1, j, k + 1),
                              rv_id(si + 1, j + 1, k + 1), rv_id(si, j + 1, k + 1)};
        add_cell(nodes, c, hex_faces(), rv_region(si, j), tets, regions);
      }

  // --- Volume surface tag sets. ---
  auto& tags = model.volume.surface_tags;
  std::set<int> set_lv_endo, set_rv_endo, set_epi, set_base, set_mv, set_tv, set_av, set_pv;
  set_lv_endo.insert(pole[0]);
  for (int j = 1; j <= nm; ++j)
    for (int i = 0; i < nt; ++i) {
      set_lv_endo.insert(lv_id(i, j, 0));
      if (patch_interior(i, j))
        set_rv_endo.insert(lv_id(i, j, nw));
      else
        set_epi.insert(lv_id(i, j, nw));
    }
  set_epi.insert(pole[nw]);
  for (const auto& [key, id] : rv_node) {
    if (key[2] == 0)
      set_rv_endo.insert(id);
    else
      set_epi.insert(id);
  }
  for (int i = 0; i < nt; ++i)
    for (int w = 0; w <= nw; ++w) {
      set_base.insert(lv_id(i, nm, w));
      double deg = theta_of(i) * 180.0 / kPi;
      bool av = deg >= 30.0 && deg < 75.0;
      (av ? set_av : set_mv).insert(lv_id(i, nm, w));
    }
  for (const auto& [key, id] : rv_node)
    if (key[1] == nm) {
      set_base.insert(id);
      double u = (key[0] + sh) / (2.0 * sh);
      (u < 0.5 ? set_tv : set_pv).insert(id);
    }
  auto to_vec = [](const std::set<int>& s) { return std::vector<int>(s.begin(), s.end()); };
  tags[surf::LV_ENDO] = to_vec(set_lv_endo);
  tags[surf::RV_ENDO] = to_vec(set_rv_endo);
  tags[surf::EPI] = to_vec(set_epi);
  tags[surf::BASE] = to_vec(set_base);
  tags[surf::APEX_NODE] = {pole[nw]};
  tags[surf::MV_RING] = to_vec(set_mv);
  tags[surf::TV_RING] = to_vec(set_tv);
  tags[surf::AV_RING] = to_vec(set_av);
  tags[surf::PV_RING] = to_vec(set_pv);

  // --- Extract the boundary surface with 1:1 node correspondence. ---
  std::map<std::array<int, 3>, std::pair<std::array<int, 3>, int>> face_count;
  for (size_t e = 0; e < tets.size(); ++e) {
    const auto& t = tets[e];
    const int local[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> tri = {t[local[f][0]], t[local[f][1]], t[local[f][2]]};
      std::array<int, 3> key = tri;
      std::sort(key.begin(), key.end());
      auto it = face_count.find(key);
      if (it == face_count.end())
        face_count[key] = {tri, 1};
      else
        it->second.second++;
    }
  }
  std::vector<int> vol_to_surf(nodes.size(), -1);
  SurfaceMesh& surf_mesh = model.surface;
  surf_mesh.template_id = model.id;
  for (const auto& [key, entry] : face_count) {
    if (entry.second != 1) continue;
    std::array<int, 3> tri_s;
    for (int c = 0; c < 3; ++c) {
      int vn = entry.first[c];
      if (vol_to_surf[vn] < 0) {
        vol_to_surf[vn] = surf_mesh.num_vertices();
        surf_mesh.vertices.push_back(nodes[vn]);
        model.surface_to_volume.push_back(vn);
      }
      tri_s[c] = vol_to_surf[vn];
    }
    surf_mesh.triangles.push_back(tri_s);
  }

  // --- Surface vertex regions. ---
  surf_mesh.vertex_region.assign(surf_mesh.vertices.size(), SurfRegion::LV_EPI);
  auto set_region = [&](int vol_node, SurfRegion r) {
    int sv = vol_to_surf[vol_node];
    if (sv >= 0) surf_mesh.vertex_region[sv] = r;
  };
  for (int n : set_lv_endo) set_region(n, SurfRegion::LV_ENDO);
  for (int n : set_epi) set_region(n, SurfRegion::LV_EPI);
  for (const auto& [key, id] : rv_node)
    set_region(id, key[2] == 0 ? SurfRegion::RV_ENDO_FREEWALL : SurfRegion::RV_EPI);
  for (int j = 1; j <= nm; ++j)
    for (int i = 0; i < nt; ++i)
      if (patch_interior(i, j)) set_region(lv_id(i, j, nw), SurfRegion::RV_ENDO_SEPTAL);
  for (int n : set_mv) set_region(n, SurfRegion::MV_RING);
  for (int n : set_av) set_region(n, SurfRegion::AV_RING);
  for (int n : set_tv) set_region(n, SurfRegion::TV_RING);
  for (int n : set_pv) set_region(n, SurfRegion::PV_RING);

  // --- RV epicardium pairing (for the extrusion op). ---
  for (const auto& [key, id] : rv_node) {
    if (key[2] != nwr) continue;
    int endo = rv_node.at({key[0], key[1], 0});
    if (vol_to_surf[id] >= 0 && vol_to_surf[endo] >= 0)
      model.rv_epi_source[vol_to_surf[id]] = vol_to_surf[endo];
  }

  // --- Named landmarks (lexicographically smaller point of each pair = A). ---
  auto anchor = [&](int vol_node) {
    return LandmarkAnchor{nodes[vol_node], vol_to_surf[vol_node]};
  };
  auto& lmk = surf_mesh.landmarks;
  lmk["MV_2CH_A"] = anchor(lv_id(3 * nt / 4, nm, 0));  // theta 270
  lmk["MV_2CH_B"] = anchor(lv_id(nt / 4, nm, 0));      // theta 90
  lmk["MV_3CH_A"] = anchor(lv_id(5 * nt / 8, nm, 0));  // theta 225
  lmk["MV_3CH_B"] = anchor(lv_id(nt / 8, nm, 0));      // theta 45
  lmk["MV_4CH_A"] = anchor(lv_id(nt / 2, nm, 0));      // theta 180
  lmk["MV_4CH_B"] = anchor(lv_id(0, nm, 0));           // theta 0
  lmk["TV_4CH_A"] = anchor(lv_id(0, nm, nw));
  lmk["TV_4CH_B"] = anchor(rv_id(0, nm, 0));
  lmk["APEX_2CH"] = anchor(pole[nw]);
  // Aorta-LV points: analytic positions on the basal plane, no vertex.
  double ca = std::cos(kPi / 4), sa = std::sin(kPi / 4);
  lmk["AO_LV_A"] = LandmarkAnchor{Vec3(8 * ca, 8 * sa, 0), -1};
  lmk["AO_LV_B"] = LandmarkAnchor{Vec3(20 * ca, 20 * sa, 0), -1};

  return model;
}

// --- JSON (de)serialization of the shipped template. ---

inline nlohmann::json template_to_json(const TemplateModel& m) {
  nlohmann::json j;
  j["id"] = m.id;
  auto pts = nlohmann::json::array();
  for (const auto& v : m.surface.vertices) pts.push_back({v.x(), v.y(), v.z()});
  j["surface"]["vertices"] = std::move(pts);
  auto tris = nlohmann::json::array();
  for (const auto& t : m.surface.triangles) tris.push_back({t[0], t[1], t[2]});
  j["surface"]["triangles"] = std::move(tris);
  auto regs = nlohmann::json::array();
  for (auto r : m.surface.vertex_region) regs.push_back(static_cast<int>(r));
  j["surface"]["vertex_region"] = std::move(regs);
  for (const auto& [name, a] : m.surface.landmarks)
    j["surface"]["landmarks"][name] = {{"position", {a.position.x(), a.position.y(), a.position.z()}},
                                       {"vertex", a.vertex}};
  auto vnodes = nlohmann::json::array();
  for (const auto& v : m.volume.nodes) vnodes.push_back({v.x(), v.y(), v.z()});
  j["volume"]["nodes"] = std::move(vnodes);
  auto vtets = nlohmann::json::array();
  for (const auto& t : m.volume.tets) vtets.push_back({t[0], t[1], t[2], t[3]});
  j["volume"]["tets"] = std::move(vtets);
  auto vreg = nlohmann::json::array();
  for (auto r : m.volume.region) vreg.push_back(static_cast<int>(r));
  j["volume"]["region"] = std::move(vreg);
  for (const auto& [name, set] : m.volume.surface_tags) j["volume"]["surface_tags"][name] = set;
  j["surface_to_volume"] = m.surface_to_volume;
  auto pairs = nlohmann::json::array();
  for (const auto& [epi, endo] : m.rv_epi_source) pairs.push_back({epi, endo});
  j["rv_epi_source"] = std::move(pairs);
  return j;
}

inline TemplateModel template_from_json(const nlohmann::json& j) {
  TemplateModel m;
  m.id = j.at("id").get<std::string>();
  m.surface.template_id = m.id;
  for (const auto& p : j.at("surface").at("vertices"))
    m.surface.vertices.push_back(Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()));
  for (const auto& t : j.at("surface").at("triangles"))
    m.surface.triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  for (const auto& r : j.at("surface").at("vertex_region"))
    m.surface.vertex_region.push_back(static_cast<SurfRegion>(r.get<int>()));
  const auto& jl = j.at("surface").at("landmarks");
  for (auto it = jl.begin(); it != jl.end(); ++it) {
    const auto& p = it.value().at("position");
    m.surface.landmarks[it.key()] =
        LandmarkAnchor{Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()),
                       it.value().at("vertex").get<int>()};
  }
  for (const auto& p : j.at("volume").at("nodes"))
    m.volume.nodes.push_back(Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()));
  for (const auto& t : j.at("volume").at("tets"))
    m.volume.tets.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>(), t[3].get<int>()});
  for (const auto& r : j.at("volume").at("region"))
    m.volume.region.push_back(static_cast<ElemRegion>(r.get<int>()));
  const auto& jt = j.at("volume").at("surface_tags");
  for (auto it = jt.begin(); it != jt.end(); ++it)
    m.volume.surface_tags[it.key()] = it.value().get<std::vector<int>>();
  m.surface_to_volume = j.at("surface_to_volume").get<std::vector<int>>();
  for (const auto& p : j.at("rv_epi_source")) m.rv_epi_source[p[0].get<int>()] = p[1].get<int>();
  return m;
}

inline void save_template(const TemplateModel& m, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_template: cannot open " + path);
  out << template_to_json(m).dump();
  require(out.good(), "save_template: write failure");
}

inline TemplateModel load_template(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_template: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return template_from_json(j);
}

}  // namespace cardio
