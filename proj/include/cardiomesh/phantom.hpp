#pragma once

#include <cmath>
#include <vector>

#include "cardiomesh/labelgrid.hpp"

namespace cardio {

// Analytic biventricular scene in a canonical frame: long axis = z, valve
// plane at z = 0, ventricles below. The LV cavity is a truncated ellipsoid
// centered at the origin, the LV wall a concentric shell, the RV cavity a
// crescent (RV ellipsoid minus the LV epicardial ellipsoid). Atria and aorta
// sit above the valve plane and abut the cavities so that valve landmarks are
// recoverable from the masks.
struct PhantomSpec {
  // LV cavity semi-axes at ED (mm) and wall thickness.
  double lv_a = 25.0, lv_b = 25.0, lv_c = 45.0;
  double wall_mm = 8.0;
  // Truncation plane: cavity and wall exist for z <= z_top.
  double z_top = 0.0;
  // RV ellipsoid (center, semi-axes).
  Vec3 rv_center{30.0, 0.0, -8.0};
  Vec3 rv_semi{28.0, 30.0, 40.0};
  bool rv_present = true;
  // Atria scale: 1 = nominal, 0 = absent.
  double atria_scale = 1.0;
  bool aorta_present = true;
  // Per-frame LV cavity scale factors s(t); cavity semi-axes are s(t) times
  // the ED values, so cavity volume is s^3 times the ED volume. Empty = single
  // frame at scale 1.
  std::vector<double> frame_scale;
  // Grids.
  double sax_spacing_xy = 1.0, sax_spacing_z = 1.0;
  double lax_spacing = 1.0;
  double xy_extent = 70.0;   // SAX in-plane half extent
  double sax_z_min = -70.0, sax_z_max = 10.0;
  double lax_u_extent = 70.0;  // LAX in-plane half extent along the azimuth direction
  double lax_z_min = -70.0, lax_z_max = 30.0;
};

struct PhantomMeta {
  std::vector<double> lv_cavity_volume_mm3;  // per frame, analytic
  std::vector<double> lv_myo_volume_mm3;     // per frame, analytic
  double rv_cavity_volume_mm3 = 0.0;         // at ED, fine-quadrature reference
};

struct PhantomResult {
  ViewSet views;
  PhantomMeta meta;
};

namespace phantom_detail {

inline bool in_ellipsoid(const Vec3& p, const Vec3& center, const Vec3& semi) {
  Vec3 d = p - center;
  double q = d.x() * d.x() / (semi.x() * semi.x()) + d.y() * d.y() / (semi.y() * semi.y()) +
             d.z() * d.z() / (semi.z() * semi.z());
  return q <= 1.0;
}

// Volume of the ellipsoid with semi-axes (a,b,c), centered at 0, below z = zt.
inline double truncated_ellipsoid_volume(double a, double b, double c, double zt) {
  double z = std::min(zt, c);
  if (z <= -c) return 0.0;
  return kPi * a * b * (z - z * z * z / (3.0 * c * c) + 2.0 * c / 3.0);
}

struct Scene {
  const PhantomSpec& spec;
  double s;  // LV cavity scale for this frame

  bool lv_cavity(const Vec3& p) const {
    if (p.z() > spec.z_top) return false;
    return in_ellipsoid(p, Vec3::Zero(), Vec3(spec.lv_a * s, spec.lv_b * s, spec.lv_c * s));
  }
  bool lv_epi(const Vec3& p) const {
    if (p.z() > spec.z_top) return false;
    return in_ellipsoid(p, Vec3::Zero(),
                        Vec3(spec.lv_a + spec.wall_mm, spec.lv_b + spec.wall_mm,
                             spec.lv_c + spec.wall_mm));
  }
  bool rv_cavity(const Vec3& p) const {
    if (!spec.rv_present || p.z() > spec.z_top) return false;
    return in_ellipsoid(p, spec.rv_center, spec.rv_semi) && !lv_epi(p);
  }
  bool la(const Vec3& p) const {
    if (spec.atria_scale <= 0.0 || p.z() < 0.0) return false;
    double k = spec.atria_scale;
    // Wide enough that the LV/LA interface spans the whole cavity mouth, so
    // the extremal mitral landmarks sit at the cavity rim.
    return in_ellipsoid(p, Vec3(0, 0, 4), Vec3(32 * k, 32 * k, 12 * k));
  }
  bool ra(const Vec3& p) const {
    if (spec.atria_scale <= 0.0 || p.z() < 0.0) return false;
    double k = spec.atria_scale;
    return in_ellipsoid(p, Vec3(30, 6, 8), Vec3(40 * k, 15 * k, 14 * k));
  }
  bool aorta(const Vec3& p) const {
    if (!spec.aorta_present) return false;
    if (p.z() < 0.0 || p.z() > 24.0) return false;
    double dx = p.x() - 9.9, dy = p.y() - 9.9;
    return dx * dx + dy * dy <= 36.0;
  }

  // Precedence: ventricles first, then great vessels, then atria.
  std::string structure(const Vec3& p) const {
    if (lv_cavity(p)) return label::LV_CAVITY;
    if (lv_epi(p)) return label::LV_MYO;
    if (rv_cavity(p)) return label::RV_CAVITY;
    if (aorta(p)) return label::AORTA;
    if (la(p)) return label::LA_CAVITY;
    if (ra(p)) return label::RA_CAVITY;
    return "";
  }
};

inline LabelMap view_label_map(View v) {
  switch (v) {
    case View::LAX2CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::LA_CAVITY, 4}};
    case View::LAX3CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3},
              {label::LA_CAVITY, 4}, {label::RA_CAVITY, 5}, {label::AORTA, 6}};
    case View::LAX4CH:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3},
              {label::LA_CAVITY, 4}, {label::RA_CAVITY, 5}};
    case View::SAX:
      return {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3}};
  }
  return {};
}

}  // namespace phantom_detail

// Rasterize consistent SAX + three LAX label volumes of the analytic scene.
// The LAX azimuths are 4CH = 0 deg (x-z plane), 3CH = 45 deg, 2CH = 90 deg.
inline PhantomResult synth_phantom(const PhantomSpec& spec, const std::string& subject_id = "phantom") {
  using namespace phantom_detail;
  require(spec.wall_mm > 0, "synth_phantom: non-positive wall thickness");
  require(spec.lv_a > 0 && spec.lv_b > 0 && spec.lv_c > 0, "synth_phantom: non-positive cavity axis");
  require(spec.lv_a + spec.wall_mm < spec.xy_extent && spec.lv_b + spec.wall_mm < spec.xy_extent &&
              -(spec.lv_c + spec.wall_mm) > spec.sax_z_min,
          "synth_phantom: cavity larger than bounding grid");

  std::vector<double> scales = spec.frame_scale.empty() ? std::vector<double>{1.0} : spec.frame_scale;
  int nt = static_cast<int>(scales.size());

  PhantomResult out;
  out.views.subject_id = subject_id;

  // SAX: axis-aligned grid.
  {
    int nx = static_cast<int>(std::floor(2 * spec.xy_extent / spec.sax_spacing_xy)) + 1;
    int ny = nx;
    int nz = static_cast<int>(std::floor((spec.sax_z_max - spec.sax_z_min) / spec.sax_spacing_z)) + 1;
    Mat4 affine = Mat4::Identity();
    affine(0, 0) = spec.sax_spacing_xy;
    affine(1, 1) = spec.sax_spacing_xy;
    affine(2, 2) = spec.sax_spacing_z;
    affine(0, 3) = -spec.xy_extent;
    affine(1, 3) = -spec.xy_extent;
    affine(2, 3) = spec.sax_z_min;
    LabelMap lm = view_label_map(View::SAX);
    std::vector<int32_t> data(static_cast<size_t>(nx) * ny * nz * nt, 0);
    size_t idx = 0;
    for (int t = 0; t < nt; ++t) {
      Scene scene{spec, scales[t]};
      for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
          for (int i = 0; i < nx; ++i, ++idx) {
            Vec3 p(-spec.xy_extent + i * spec.sax_spacing_xy,
                   -spec.xy_extent + j * spec.sax_spacing_xy,
                   spec.sax_z_min + k * spec.sax_spacing_z);
            std::string s = scene.structure(p);
            if (s.empty()) continue;
            auto it = lm.find(s);
            if (it != lm.end()) data[idx] = it->second;
          }
    }
    out.views.add(LabelVolume({nx, ny, nz, nt},
                              {spec.sax_spacing_xy, spec.sax_spacing_xy, spec.sax_spacing_z},
                              affine, std::move(data), View::SAX, lm));
  }

  // LAX planes through the long axis at fixed azimuths.
  struct LaxDef { View view; double azimuth_deg; };
  for (LaxDef def : {LaxDef{View::LAX4CH, 0.0}, LaxDef{View::LAX3CH, 45.0}, LaxDef{View::LAX2CH, 90.0}}) {
    double phi = deg2rad(def.azimuth_deg);
    Vec3 u_dir(std::cos(phi), std::sin(phi), 0.0);
    Vec3 v_dir(0.0, 0.0, 1.0);
    Vec3 n_dir = u_dir.cross(v_dir);
    int nu = static_cast<int>(std::floor(2 * spec.lax_u_extent / spec.lax_spacing)) + 1;
    int nv = static_cast<int>(std::floor((spec.lax_z_max - spec.lax_z_min) / spec.lax_spacing)) + 1;
    Vec3 origin = -spec.lax_u_extent * u_dir + spec.lax_z_min * v_dir;
    Mat4 affine = Mat4::Identity();
    affine.block<3, 1>(0, 0) = u_dir * spec.lax_spacing;
    affine.block<3, 1>(0, 1) = v_dir * spec.lax_spacing;
    affine.block<3, 1>(0, 2) = n_dir;  // unit normal as the degenerate third axis
    affine.block<3, 1>(0, 3) = origin;
    LabelMap lm = view_label_map(def.view);
    std::vector<int32_t> data(static_cast<size_t>(nu) * nv * nt, 0);
    size_t idx = 0;
    for (int t = 0; t < nt; ++t) {
      Scene scene{spec, scales[t]};
      for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nu; ++i, ++idx) {
          Vec3 p = origin + i * spec.lax_spacing * u_dir + j * spec.lax_spacing * v_dir;
          std::string s = scene.structure(p);
          if (s.empty()) continue;
          auto it = lm.find(s);
          if (it != lm.end()) data[idx] = it->second;
        }
    }
    out.views.add(LabelVolume({nu, nv, 1, nt}, {spec.lax_spacing, spec.lax_spacing, 1.0}, affine,
                              std::move(data), def.view, lm));
  }

  // Analytic reference volumes.
  using phantom_detail::truncated_ellipsoid_volume;
  double epi_vol = truncated_ellipsoid_volume(spec.lv_a + spec.wall_mm, spec.lv_b + spec.wall_mm,
                                              spec.lv_c + spec.wall_mm, spec.z_top);
  for (double s : scales) {
    // Truncation plane fixed at z_top while the cavity scales.
    double cav = truncated_ellipsoid_volume(spec.lv_a * s, spec.lv_b * s, spec.lv_c * s, spec.z_top);
    out.meta.lv_cavity_volume_mm3.push_back(cav);
    out.meta.lv_myo_volume_mm3.push_back(epi_vol - cav);
  }
  if (spec.rv_present) {
    // Midpoint quadrature at 0.5 mm, independent of the rasterized grids.
    Scene scene{spec, scales[0]};
    double h = 0.5, vol = 0.0;
    for (double z = spec.sax_z_min; z < spec.z_top; z += h)
      for (double y = -spec.xy_extent; y < spec.xy_extent; y += h)
        for (double x = -spec.xy_extent; x < spec.xy_extent; x += h)
          if (scene.rv_cavity(Vec3(x + h / 2, y + h / 2, z + h / 2))) vol += h * h * h;
    out.meta.rv_cavity_volume_mm3 = vol;
  }
  return out;
}

}  // namespace cardio
