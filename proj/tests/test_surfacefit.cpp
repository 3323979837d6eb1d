#include "doctest.h"

#include <cmath>
#include <map>

#include "cardiomesh/heart_template.hpp"
#include "cardiomesh/phantom.hpp"
#include "cardiomesh/phenotypes.hpp"
#include "cardiomesh/surfacefit.hpp"

using namespace cardio;

namespace {

const TemplateModel& tmpl() {
  static TemplateModel m = build_template();
  return m;
}

// Octahedron subdivided and projected to a sphere of radius r.
SurfaceMesh octasphere(double r, int subdiv) {
  std::vector<Vec3> verts = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                             {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<std::array<int, 3>> tris = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                                          {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto k = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = mid.find(k);
      if (it != mid.end()) return it->second;
      int id = static_cast<int>(verts.size());
      verts.push_back((verts[a] + verts[b]).normalized());
      mid[k] = id;
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& t : tris) {
      int ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris = std::move(next);
  }
  SurfaceMesh m;
  for (const auto& v : verts) m.vertices.push_back(r * v.normalized());
  m.triangles = tris;
  m.vertex_region.assign(m.vertices.size(), SurfRegion::RV_ENDO_FREEWALL);
  return m;
}

// Two concentric sphere sheets: endo vertices [0, n), epi copies [n, 2n).
struct ShellFixture {
  SurfaceMesh mesh;
  std::map<int, int> rv_epi_source;
  int n = 0;
};

ShellFixture shell(double r, int subdiv) {
  ShellFixture f;
  f.mesh = octasphere(r, subdiv);
  f.n = f.mesh.num_vertices();
  for (int i = 0; i < f.n; ++i) {
    f.mesh.vertices.push_back(f.mesh.vertices[i]);
    f.mesh.vertex_region.push_back(SurfRegion::RV_EPI);
    f.rv_epi_source[f.n + i] = i;
  }
  for (int t = 0, nt = f.mesh.num_triangles(); t < nt; ++t) {
    auto tr = f.mesh.triangles[t];
    f.mesh.triangles.push_back({tr[0] + f.n, tr[1] + f.n, tr[2] + f.n});
  }
  return f;
}

std::vector<ContourSet> phantom_contours(const PhantomResult& res) {
  std::vector<ContourSet> sets;
  for (View v : {View::LAX2CH, View::LAX3CH, View::LAX4CH, View::SAX}) {
    const auto& vol = *res.views.get(v);
    auto cs = extract_view_contours(vol, 0);
    if (v != View::SAX) extract_landmarks(vol, cs, 0);
    sets.push_back(std::move(cs));
  }
  return sets;
}

}  // namespace

TEST_CASE("rigid_init recovers a known similarity transform") {
  SimilarityTransform truth;
  truth.scale = 1.17;
  truth.rotation = Eigen::AngleAxisd(0.4, Vec3(1, -2, 0.5).normalized()).toRotationMatrix();
  truth.translation = Vec3(12.0, -7.5, 30.0);

  ContourSet cs;
  cs.view = View::LAX2CH;
  for (const auto& [name, a] : tmpl().surface.landmarks)
    cs.landmarks[name] = truth.apply(a.position);

  auto t = rigid_init(tmpl().surface, {cs});
  CHECK(t.scale == doctest::Approx(truth.scale).epsilon(1e-10));
  CHECK((t.rotation - truth.rotation).norm() < 1e-10);
  CHECK((t.translation - truth.translation).norm() < 1e-8);
}

TEST_CASE("rigid_init rejects degenerate landmark sets") {
  ContourSet few;
  few.landmarks["MV_2CH_A"] = Vec3(0, -25, 0);
  few.landmarks["MV_2CH_B"] = Vec3(0, 25, 0);
  few.landmarks["MV_4CH_A"] = Vec3(-25, 0, 0);
  CHECK_THROWS_WITH_AS(rigid_init(tmpl().surface, {few}), doctest::Contains("fewer than 4"),
                       Error);
  ContourSet coplanar = few;
  coplanar.landmarks["MV_4CH_B"] = Vec3(25, 0, 0);
  coplanar.landmarks["TV_4CH_A"] = Vec3(33, 0, 0);
  CHECK_THROWS_WITH_AS(rigid_init(tmpl().surface, {coplanar}), doctest::Contains("coplanar"),
                       Error);
}

TEST_CASE("fit to phantom contours keeps the template in place") {
  PhantomSpec spec;
  spec.sax_spacing_xy = 2.0;
  spec.sax_spacing_z = 8.0;
  spec.lax_spacing = 2.0;
  auto res = synth_phantom(spec, "p");
  auto sets = phantom_contours(res);

  // The phantom is the template's own geometry, so the rigid stage should be
  // close to the identity (landmark quantization is ~1 voxel).
  auto t = rigid_init(tmpl().surface, sets);
  CHECK(std::abs(t.scale - 1.0) < 0.05);
  CHECK((t.rotation - Mat3::Identity()).norm() < 0.15);
  CHECK(t.translation.norm() < 4.0);

  auto placed = apply_transform(tmpl().surface, t);
  FitConfig cfg;
  cfg.max_iters = 8;
  auto fit = fit_surface(placed, sets, cfg);

  REQUIRE(fit.iterations >= 1);
  REQUIRE(static_cast<size_t>(fit.iterations) == fit.objective_history.size());
  for (size_t i = 1; i < fit.objective_history.size(); ++i)
    CHECK(fit.objective_history[i] <= fit.objective_history[i - 1] * (1.0 + 1e-12));

  // Shape sanity: connectivity untouched, vertices near their start, and the
  // LV cavity volume stays close to the analytic phantom cavity.
  CHECK(fit.mesh.triangles == tmpl().surface.triangles);
  // LV endocardial vertices should barely move; RV free-wall vertices can
  // travel far because the phantom RV sweeps a wider azimuth than the
  // template's free-wall patch.
  // Typical LV endo displacement stays small; a few basal vertices get pulled
  // toward the valve-plane segment of the endo loops, which is allowed by the
  // nearest-vertex matching rule and does not disturb the cavity volume.
  std::vector<double> moves;
  for (int i : fit.mesh.region_vertices(SurfRegion::LV_ENDO))
    moves.push_back((fit.mesh.vertices[i] - placed.vertices[i]).norm());
  std::sort(moves.begin(), moves.end());
  CHECK(moves[moves.size() / 2] < 3.0);
  CHECK(moves[moves.size() * 9 / 10] < 8.0);
  double analytic_ml = 2.0 / 3.0 * kPi * 25 * 25 * 45 / 1000.0;
  double lv = lv_cavity_volume_ml(fit.mesh);
  MESSAGE("fitted LV cavity: " << lv << " mL (analytic " << analytic_ml << ")");
  CHECK(std::abs(lv - analytic_ml) / analytic_ml < 0.10);
}

TEST_CASE("fit with no matching contour vertices is rejected") {
  ContourSet cs;
  cs.view = View::SAX;
  Contour c{ContourKind::LV_ENDO, View::SAX, {Vec3(0, 0, 0), Vec3(1, 0, 0)}};
  cs.contours.push_back(c);
  auto sphere = octasphere(10, 1);  // all RV free wall, no LV_ENDO vertices
  CHECK_THROWS_AS(fit_surface(sphere, {cs}), Error);
}

TEST_CASE("RV extrusion pushes the epicardial sheet out by the wall thickness") {
  auto f = shell(20.0, 3);
  auto out = extrude_rv_epicardium(f.mesh, f.rv_epi_source, 3.0);
  for (int i = 0; i < f.n; ++i) {
    CHECK((out.vertices[i] - f.mesh.vertices[i]).norm() == 0.0);  // endo untouched
    CHECK(out.vertices[f.n + i].norm() == doctest::Approx(23.0).epsilon(0.01));
  }
}

TEST_CASE("zero thickness extrusion is the identity") {
  auto f = shell(20.0, 2);
  auto out = extrude_rv_epicardium(f.mesh, f.rv_epi_source, 0.0);
  for (int i = 0; i < out.num_vertices(); ++i)
    CHECK((out.vertices[i] - f.mesh.vertices[i]).norm() == 0.0);
}

TEST_CASE("negative thickness is rejected") {
  auto f = shell(10.0, 1);
  CHECK_THROWS_AS(extrude_rv_epicardium(f.mesh, f.rv_epi_source, -1.0), Error);
}

TEST_CASE("scrambled endo pairing triggers the inverted-triangle guard") {
  auto f = shell(10.0, 2);
  auto tr = f.mesh.triangles[0];
  std::swap(f.rv_epi_source[f.n + tr[0]], f.rv_epi_source[f.n + tr[1]]);
  CHECK_THROWS_WITH_AS(extrude_rv_epicardium(f.mesh, f.rv_epi_source, 3.0),
                       doctest::Contains("inverted"), Error);
}
