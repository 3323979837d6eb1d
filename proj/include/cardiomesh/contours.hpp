#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cardiomesh/labelgrid.hpp"

#include <nlohmann/json.hpp>

namespace cardio {

enum class ContourKind { LV_ENDO, LV_EPI, RV_SEPTUM, RV_FREEWALL };

inline std::string to_string(ContourKind k) {
  switch (k) {
    case ContourKind::LV_ENDO: return "LV_ENDO";
    case ContourKind::LV_EPI: return "LV_EPI";
    case ContourKind::RV_SEPTUM: return "RV_SEPTUM";
    case ContourKind::RV_FREEWALL: return "RV_FREEWALL";
  }
  return "?";
}

inline ContourKind contour_kind_from_string(const std::string& s) {
  if (s == "LV_ENDO") return ContourKind::LV_ENDO;
  if (s == "LV_EPI") return ContourKind::LV_EPI;
  if (s == "RV_SEPTUM") return ContourKind::RV_SEPTUM;
  if (s == "RV_FREEWALL") return ContourKind::RV_FREEWALL;
  throw Error("unknown contour kind: " + s);
}

struct Contour {
  ContourKind kind;
  View view;
  std::vector<Vec3> points;  // patient mm
};

struct ContourSet {
  View view;
  int frame = 0;
  std::vector<Contour> contours;
  std::map<std::string, Vec3> landmarks;
};

namespace contour_detail {

// 2D binary mask of one slice.
struct Mask {
  int nx = 0, ny = 0;
  std::vector<uint8_t> v;
  uint8_t at(int i, int j) const {
    if (i < 0 || i >= nx || j < 0 || j >= ny) return 0;
    return v[static_cast<size_t>(j) * nx + i];
  }
  void set(int i, int j, uint8_t x) { v[static_cast<size_t>(j) * nx + i] = x; }
};

inline Mask slice_mask(const LabelVolume& vol, int frame, int slice, int code) {
  Mask m;
  m.nx = vol.nx();
  m.ny = vol.ny();
  m.v.assign(static_cast<size_t>(m.nx) * m.ny, 0);
  for (int j = 0; j < m.ny; ++j)
    for (int i = 0; i < m.nx; ++i)
      if (vol.at(i, j, slice, frame) == code) m.set(i, j, 1);
  return m;
}

inline long mask_count(const Mask& m) {
  long n = 0;
  for (uint8_t x : m.v) n += x;
  return n;
}

// Keep only the largest 8-connected component.
inline Mask largest_component(const Mask& m) {
  Mask out;
  out.nx = m.nx;
  out.ny = m.ny;
  out.v.assign(m.v.size(), 0);
  std::vector<int> comp(m.v.size(), -1);
  int best = -1;
  long best_size = 0;
  int ncomp = 0;
  for (int j = 0; j < m.ny; ++j)
    for (int i = 0; i < m.nx; ++i) {
      size_t id = static_cast<size_t>(j) * m.nx + i;
      if (!m.v[id] || comp[id] >= 0) continue;
      long size = 0;
      std::deque<std::pair<int, int>> q{{i, j}};
      comp[id] = ncomp;
      while (!q.empty()) {
        auto [ci, cj] = q.front();
        q.pop_front();
        ++size;
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            int ni = ci + di, nj = cj + dj;
            if (ni < 0 || ni >= m.nx || nj < 0 || nj >= m.ny) continue;
            size_t nid = static_cast<size_t>(nj) * m.nx + ni;
            if (m.v[nid] && comp[nid] < 0) {
              comp[nid] = ncomp;
              q.push_back({ni, nj});
            }
          }
      }
      if (size > best_size) {
        best_size = size;
        best = ncomp;
      }
      ++ncomp;
    }
  for (size_t id = 0; id < m.v.size(); ++id)
    if (m.v[id] && comp[id] == best) out.v[id] = 1;
  return out;
}

inline Mask dilate8(const Mask& m) {
  Mask out;
  out.nx = m.nx;
  out.ny = m.ny;
  out.v.assign(m.v.size(), 0);
  for (int j = 0; j < m.ny; ++j)
    for (int i = 0; i < m.nx; ++i) {
      uint8_t x = 0;
      for (int dj = -1; dj <= 1 && !x; ++dj)
        for (int di = -1; di <= 1 && !x; ++di)
          if (m.at(i + di, j + dj)) x = 1;
      out.set(i, j, x);
    }
  return out;
}

inline Mask mask_or(const Mask& a, const Mask& b) {
  Mask out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] | b.v[i];
  return out;
}

using Pt2 = std::pair<double, double>;

// Marching squares at the 0.5 iso-level of a binary mask. Pixel (i,j) is a
// sample at integer position (i,j); contour vertices land on pixel-edge
// midpoints. Returns closed loops in continuous (i,j) coordinates.
inline std::vector<std::vector<Pt2>> marching_squares(const Mask& m) {
  // Segments per cell, keyed by edge midpoints; then chained into loops.
  std::map<std::pair<long, long>, std::vector<std::pair<long, long>>> adj;
  auto key = [](double x, double y) {
    return std::pair<long, long>(std::lround(x * 4), std::lround(y * 4));
  };
  auto add_seg = [&](Pt2 a, Pt2 b) {
    auto ka = key(a.first, a.second), kb = key(b.first, b.second);
    adj[ka].push_back(kb);
    adj[kb].push_back(ka);
  };
  for (int j = -1; j < m.ny; ++j)
    for (int i = -1; i < m.nx; ++i) {
      int c = (m.at(i, j) ? 1 : 0) | (m.at(i + 1, j) ? 2 : 0) | (m.at(i + 1, j + 1) ? 4 : 0) |
              (m.at(i, j + 1) ? 8 : 0);
      if (c == 0 || c == 15) continue;
      Pt2 left{i, j + 0.5}, right{i + 1, j + 0.5}, top{i + 0.5, j}, bottom{i + 0.5, j + 1};
      switch (c) {
        case 1: add_seg(left, top); break;
        case 2: add_seg(top, right); break;
        case 3: add_seg(left, right); break;
        case 4: add_seg(right, bottom); break;
        case 5: add_seg(left, bottom); add_seg(top, right); break;  // saddle
        case 6: add_seg(top, bottom); break;
        case 7: add_seg(left, bottom); break;
        case 8: add_seg(bottom, left); break;
        case 9: add_seg(top, bottom); break;
        case 10: add_seg(left, top); add_seg(right, bottom); break;  // saddle
        case 11: add_seg(right, bottom); break;
        case 12: add_seg(right, left); break;
        case 13: add_seg(top, right); break;
        case 14: add_seg(left, top); break;
      }
    }
  // Every vertex has degree 2 on binary data; walk each loop once.
  std::vector<std::vector<Pt2>> loops;
  std::map<std::pair<long, long>, bool> used;
  for (auto& [k, _] : adj) used[k] = false;
  for (auto& [start, nbrs] : adj) {
    if (used[start]) continue;
    require(nbrs.size() == 2, "marching_squares: non-manifold contour vertex");
    std::vector<std::pair<long, long>> loop;
    auto prev = start;
    auto cur = start;
    do {
      used[cur] = true;
      loop.push_back(cur);
      const auto& nb = adj[cur];
      auto nxt = (nb[0] == prev && cur != prev) ? nb[1] : nb[0];
      if (cur == prev) nxt = nb[0];  // first step
      prev = cur;
      cur = nxt;
    } while (cur != start);
    std::vector<Pt2> pts;
    pts.reserve(loop.size());
    for (auto& k : loop) pts.push_back({k.first / 4.0, k.second / 4.0});
    loops.push_back(std::move(pts));
  }
  return loops;
}

inline Vec3 ij_to_patient(const LabelVolume& vol, double i, double j, int k) {
  Eigen::Vector4d h(i, j, static_cast<double>(k), 1.0);
  return (vol.affine() * h).head<3>();
}

// 2D point-in-polygon (even-odd rule), used by tests and septum checks.
inline bool point_in_polygon(const std::vector<Pt2>& poly, double x, double y) {
  bool inside = false;
  size_t n = poly.size();
  for (size_t a = 0, b = n - 1; a < n; b = a++) {
    if ((poly[a].second > y) != (poly[b].second > y)) {
      double xi = poly[b].first + (y - poly[b].second) / (poly[a].second - poly[b].second) *
                                      (poly[a].first - poly[b].first);
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

}  // namespace contour_detail

// Extract per-view contours for one frame: LV endo, LV epi and, where the RV
// is segmented, the RV boundary split into septal and free-wall parts by
// 8-connected adjacency to the (1-pixel dilated) LV myocardium.
inline ContourSet extract_view_contours(const LabelVolume& vol, int frame) {
  using namespace contour_detail;
  require(frame >= 0 && frame < vol.nt(), "extract_view_contours: frame out of range");
  auto lv_code = vol.label_code(label::LV_CAVITY);
  auto myo_code = vol.label_code(label::LV_MYO);
  require(lv_code && myo_code, "extract_view_contours: view lacks LV cavity / myocardium labels");
  auto rv_code = vol.label_code(label::RV_CAVITY);

  ContourSet out;
  out.view = vol.view();
  out.frame = frame;

  for (int k = 0; k < vol.nz(); ++k) {
    Mask cav = slice_mask(vol, frame, k, *lv_code);
    if (mask_count(cav) < 8) continue;  // apical/basal partial slice
    Mask cav_main = largest_component(cav);
    auto cav_loops = marching_squares(cav_main);
    if (cav_loops.size() != 1)
      throw Error("extract_view_contours: LV cavity not simply connected (slice " +
                  std::to_string(k) + ")");
    Mask myo = largest_component(slice_mask(vol, frame, k, *myo_code));
    auto epi_loops = marching_squares(largest_component(mask_or(cav_main, myo)));

    auto emit = [&](ContourKind kind, const std::vector<Pt2>& loop) {
      if (loop.size() < 8) return;
      Contour c{kind, vol.view(), {}};
      c.points.reserve(loop.size());
      for (const auto& p : loop) c.points.push_back(ij_to_patient(vol, p.first, p.second, k));
      out.contours.push_back(std::move(c));
    };
    // The endo contour is the cavity/myocardium interface and the epi contour
    // the outer myocardium boundary, so both are trimmed to the myocardium-
    // adjacent portion: on LAX views the raw loops also cross the valve mouth
    // (cavity against atrium or background), which belongs to neither.
    auto near_myo_raw = [&](const Pt2& p) {
      int i0 = static_cast<int>(std::floor(p.first));
      int j0 = static_cast<int>(std::floor(p.second));
      for (int dj = 0; dj <= 1; ++dj)
        for (int di = 0; di <= 1; ++di)
          if (myo.at(i0 + di, j0 + dj)) return true;
      return false;
    };
    auto emit_myo_adjacent = [&](ContourKind kind, const std::vector<Pt2>& loop) {
      size_t n = loop.size();
      if (n < 8) return;
      std::vector<bool> keep(n);
      bool all = true;
      for (size_t a = 0; a < n; ++a) {
        keep[a] = near_myo_raw(loop[a]);
        all = all && keep[a];
      }
      if (all) {
        emit(kind, loop);
        return;
      }
      size_t start = 0;
      for (size_t a = 0; a < n; ++a)
        if (keep[a] && !keep[(a + n - 1) % n]) { start = a; break; }
      std::vector<Pt2> run;
      for (size_t a = 0; a < n; ++a) {
        size_t ii = (start + a) % n;
        if (keep[ii]) {
          run.push_back(loop[ii]);
        } else {
          emit(kind, run);
          run.clear();
        }
      }
      emit(kind, run);
    };
    emit_myo_adjacent(ContourKind::LV_ENDO, cav_loops[0]);
    for (const auto& loop : epi_loops) emit_myo_adjacent(ContourKind::LV_EPI, loop);

    if (rv_code) {
      Mask rv = slice_mask(vol, frame, k, *rv_code);
      if (mask_count(rv) >= 8) {
        Mask rv_main = largest_component(rv);
        Mask myo_dil = dilate8(myo);
        auto near_myo = [&](const Pt2& p) {
          // A contour vertex sits on a pixel edge; check the flanking pixels.
          int i0 = static_cast<int>(std::floor(p.first));
          int j0 = static_cast<int>(std::floor(p.second));
          for (int dj = 0; dj <= 1; ++dj)
            for (int di = 0; di <= 1; ++di)
              if (myo_dil.at(i0 + di, j0 + dj)) return true;
          return false;
        };
        for (const auto& loop : marching_squares(rv_main)) {
          size_t n = loop.size();
          if (n < 8) continue;
          std::vector<bool> septal(n);
          for (size_t a = 0; a < n; ++a) septal[a] = near_myo(loop[a]);
          // Rotate to a class transition so runs are contiguous.
          size_t start = 0;
          for (size_t a = 0; a < n; ++a)
            if (septal[a] != septal[(a + n - 1) % n]) { start = a; break; }
          std::vector<Pt2> run;
          bool run_class = septal[start];
          auto flush = [&]() {
            if (run.size() >= 8)
              emit(run_class ? ContourKind::RV_SEPTUM : ContourKind::RV_FREEWALL, run);
            run.clear();
          };
          for (size_t a = 0; a < n; ++a) {
            size_t ii = (start + a) % n;
            if (septal[ii] != run_class) {
              flush();
              run_class = septal[ii];
            }
            run.push_back(loop[ii]);
          }
          flush();
        }
      }
    }
  }
  require(!out.contours.empty(), "extract_view_contours: no contours found");
  return out;
}

namespace contour_detail {

// Midpoints of shared 4-adjacent pixel edges between two labels, one slice.
inline std::vector<Vec3> shared_boundary_points(const LabelVolume& vol, int frame, int slice,
                                                int code_a, int code_b) {
  std::vector<Vec3> pts;
  auto lbl = [&](int i, int j) -> int {
    if (i < 0 || i >= vol.nx() || j < 0 || j >= vol.ny()) return 0;
    return vol.at(i, j, slice, frame);
  };
  for (int j = 0; j < vol.ny(); ++j)
    for (int i = 0; i < vol.nx(); ++i) {
      if (lbl(i, j) != code_a) continue;
      if (lbl(i + 1, j) == code_b) pts.push_back(ij_to_patient(vol, i + 0.5, j, slice));
      if (lbl(i - 1, j) == code_b) pts.push_back(ij_to_patient(vol, i - 0.5, j, slice));
      if (lbl(i, j + 1) == code_b) pts.push_back(ij_to_patient(vol, i, j + 0.5, slice));
      if (lbl(i, j - 1) == code_b) pts.push_back(ij_to_patient(vol, i, j - 0.5, slice));
    }
  return pts;
}

// The two extremal points (maximum pairwise distance) of a point set,
// ordered lexicographically for determinism.
inline std::pair<Vec3, Vec3> extremal_pair(const std::vector<Vec3>& pts) {
  double best = -1;
  Vec3 a = pts[0], b = pts[0];
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) {
      double d = (pts[i] - pts[j]).squaredNorm();
      if (d > best) {
        best = d;
        a = pts[i];
        b = pts[j];
      }
    }
  auto less = [](const Vec3& u, const Vec3& v) {
    if (u.x() != v.x()) return u.x() < v.x();
    if (u.y() != v.y()) return u.y() < v.y();
    return u.z() < v.z();
  };
  if (less(b, a)) std::swap(a, b);
  return {a, b};
}

}  // namespace contour_detail

// Add named valve landmarks and (2CH) the epicardial apex to a ContourSet.
// Valve points are the extremal points of the shared boundary between the two
// cavities the valve separates.
inline void extract_landmarks(const LabelVolume& vol, ContourSet& cs, int frame) {
  using namespace contour_detail;
  require(vol.view() != View::SAX, "extract_landmarks: SAX has no landmark taxonomy");
  require(cs.view == vol.view() && cs.frame == frame, "extract_landmarks: contour set mismatch");

  auto valve = [&](const std::string& name_a, const std::string& name_b,
                   const std::string& la, const std::string& lb) {
    auto ca = vol.label_code(la), cb = vol.label_code(lb);
    if (!ca || !cb) return false;
    auto pts = shared_boundary_points(vol, frame, 0, *ca, *cb);
    if (pts.size() < 3)
      throw Error("extract_landmarks: shared boundary " + la + "/" + lb +
                  " too short to resolve valve (" + std::to_string(pts.size()) + " points)");
    auto [a, b] = extremal_pair(pts);
    cs.landmarks[name_a] = a;
    cs.landmarks[name_b] = b;
    return true;
  };

  switch (vol.view()) {
    case View::LAX2CH: {
      valve("MV_2CH_A", "MV_2CH_B", label::LV_CAVITY, label::LA_CAVITY);
      Vec3 mid = (cs.landmarks.at("MV_2CH_A") + cs.landmarks.at("MV_2CH_B")) / 2.0;
      const Contour* epi = nullptr;
      double best_len = -1;
      for (const auto& c : cs.contours)
        if (c.kind == ContourKind::LV_EPI && static_cast<double>(c.points.size()) > best_len) {
          best_len = static_cast<double>(c.points.size());
          epi = &c;
        }
      require(epi, "extract_landmarks: 2CH epicardial contour missing");
      double best = -1;
      Vec3 apex = epi->points[0];
      for (const Vec3& p : epi->points) {
        double d = (p - mid).squaredNorm();
        if (d > best) {
          best = d;
          apex = p;
        }
      }
      cs.landmarks["APEX_2CH"] = apex;
      break;
    }
    case View::LAX3CH:
      valve("MV_3CH_A", "MV_3CH_B", label::LV_CAVITY, label::LA_CAVITY);
      valve("AO_LV_A", "AO_LV_B", label::LV_CAVITY, label::AORTA);
      break;
    case View::LAX4CH:
      valve("MV_4CH_A", "MV_4CH_B", label::LV_CAVITY, label::LA_CAVITY);
      valve("TV_4CH_A", "TV_4CH_B", label::RV_CAVITY, label::RA_CAVITY);
      break;
    case View::SAX:
      break;
  }
}

inline nlohmann::json to_json(const ContourSet& cs) {
  nlohmann::json j;
  j["view"] = to_string(cs.view);
  j["frame"] = cs.frame;
  j["contours"] = nlohmann::json::array();
  for (const auto& c : cs.contours) {
    nlohmann::json jc;
    jc["kind"] = to_string(c.kind);
    jc["points"] = nlohmann::json::array();
    for (const auto& p : c.points) jc["points"].push_back({p.x(), p.y(), p.z()});
    j["contours"].push_back(std::move(jc));
  }
  j["landmarks"] = nlohmann::json::object();
  for (const auto& [name, p] : cs.landmarks) j["landmarks"][name] = {p.x(), p.y(), p.z()};
  return j;
}

inline ContourSet contourset_from_json(const nlohmann::json& j) {
  ContourSet cs;
  cs.view = view_from_string(j.at("view").get<std::string>());
  cs.frame = j.at("frame").get<int>();
  for (const auto& jc : j.at("contours")) {
    Contour c;
    c.kind = contour_kind_from_string(jc.at("kind").get<std::string>());
    c.view = cs.view;
    for (const auto& jp : jc.at("points"))
      c.points.push_back(Vec3(jp[0].get<double>(), jp[1].get<double>(), jp[2].get<double>()));
    cs.contours.push_back(std::move(c));
  }
  for (auto it = j.at("landmarks").begin(); it != j.at("landmarks").end(); ++it) {
    const auto& jp = it.value();
    cs.landmarks[it.key()] = Vec3(jp[0].get<double>(), jp[1].get<double>(), jp[2].get<double>());
  }
  return cs;
}

}  // namespace cardio
