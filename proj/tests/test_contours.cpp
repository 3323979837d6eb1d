#include "doctest.h"

#include <cmath>

#include "cardiomesh/contours.hpp"
#include "cardiomesh/phantom.hpp"

using namespace cardio;
using namespace cardio::contour_detail;

namespace {

LabelVolume sax_slice(int nx, int ny, const std::vector<int32_t>& labels) {
  return LabelVolume({nx, ny, 1, 1}, {1, 1, 1}, Mat4::Identity(), labels, View::SAX,
                     {{label::LV_CAVITY, 1}, {label::LV_MYO, 2}, {label::RV_CAVITY, 3}});
}

}  // namespace

TEST_CASE("marching squares on a disc yields one loop on edge midpoints") {
  Mask m;
  m.nx = 21;
  m.ny = 21;
  m.v.assign(21 * 21, 0);
  double r = 6.3;
  for (int j = 0; j < 21; ++j)
    for (int i = 0; i < 21; ++i)
      if ((i - 10.0) * (i - 10.0) + (j - 10.0) * (j - 10.0) <= r * r) m.v[j * 21 + i] = 1;
  auto loops = marching_squares(m);
  REQUIRE(loops.size() == 1);
  CHECK(loops[0].size() > 20);
  for (const auto& p : loops[0]) {
    // Every vertex is a pixel-edge midpoint: one coordinate integral, the
    // other half-integral.
    double fi = p.first - std::floor(p.first), fj = p.second - std::floor(p.second);
    bool half_i = std::abs(fi - 0.5) < 1e-12, half_j = std::abs(fj - 0.5) < 1e-12;
    CHECK(half_i != half_j);
    double d = std::hypot(p.first - 10.0, p.second - 10.0);
    CHECK(d > r - 1.0);
    CHECK(d < r + 1.0);
  }
  // The loop is closed and simple: adjacent points at most one pixel apart.
  for (size_t a = 0; a < loops[0].size(); ++a) {
    auto& u = loops[0][a];
    auto& v = loops[0][(a + 1) % loops[0].size()];
    CHECK(std::hypot(u.first - v.first, u.second - v.second) <= 1.0 + 1e-12);
  }
}

TEST_CASE("marching squares separates an annulus into two loops") {
  Mask m;
  m.nx = 31;
  m.ny = 31;
  m.v.assign(31 * 31, 0);
  for (int j = 0; j < 31; ++j)
    for (int i = 0; i < 31; ++i) {
      double d = std::hypot(i - 15.0, j - 15.0);
      if (d >= 5.0 && d <= 10.0) m.v[j * 31 + i] = 1;
    }
  CHECK(marching_squares(m).size() == 2);
}

TEST_CASE("largest 8-connected component wins") {
  Mask m;
  m.nx = 10;
  m.ny = 10;
  m.v.assign(100, 0);
  for (int i = 0; i < 4; ++i) m.v[i] = 1;          // 4-px strip
  m.v[5 * 10 + 5] = 1;                             // lone pixel
  m.v[6 * 10 + 6] = 1;                             // diagonal neighbor (8-connected)
  auto c = largest_component(m);
  CHECK(mask_count(c) == 4);
}

TEST_CASE("extract_view_contours on a disc-annulus-crescent slice") {
  int n = 61;
  std::vector<int32_t> labels(n * n, 0);
  double cx = 25, cy = 30;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double d = std::hypot(i - cx, j - cy);
      if (d <= 10)
        labels[j * n + i] = 1;
      else if (d <= 15)
        labels[j * n + i] = 2;
      else if (d <= 22 && i > cx)
        labels[j * n + i] = 3;  // RV crescent hugging the myocardium on one side
    }
  auto vol = sax_slice(n, n, labels);
  auto cs = extract_view_contours(vol, 0);
  int n_endo = 0, n_epi = 0, n_sep = 0, n_free = 0;
  for (const auto& c : cs.contours) {
    switch (c.kind) {
      case ContourKind::LV_ENDO: ++n_endo; break;
      case ContourKind::LV_EPI: ++n_epi; break;
      case ContourKind::RV_SEPTUM: ++n_sep; break;
      case ContourKind::RV_FREEWALL: ++n_free; break;
    }
  }
  CHECK(n_endo == 1);
  CHECK(n_epi >= 1);
  CHECK(n_sep == 1);
  CHECK(n_free == 1);
  for (const auto& c : cs.contours) {
    if (c.kind == ContourKind::LV_ENDO)
      for (const auto& p : c.points)
        CHECK(std::hypot(p.x() - cx, p.y() - cy) == doctest::Approx(10.0).epsilon(0.1));
    if (c.kind == ContourKind::RV_SEPTUM)
      for (const auto& p : c.points) {
        // Mostly on the inner arc (r=15); the run may pick up a couple of
        // vertices on the straight crescent edge, still short of the outer arc.
        double d = std::hypot(p.x() - cx, p.y() - cy);
        CHECK(d > 13.5);
        CHECK(d < 18.0);
      }
  }
}

TEST_CASE("LV cavity with a hole is rejected") {
  int n = 41;
  std::vector<int32_t> labels(n * n, 0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double d = std::hypot(i - 20.0, j - 20.0);
      if (d >= 4 && d <= 10) labels[j * n + i] = 1;
    }
  CHECK_THROWS_WITH_AS(extract_view_contours(sax_slice(n, n, labels), 0),
                       doctest::Contains("simply connected"), Error);
}

TEST_CASE("phantom landmarks land at the analytic valve corners") {
  PhantomSpec spec;
  auto res = synth_phantom(spec, "p");
  const double tol = 1.6;  // one diagonal voxel

  {
    const auto& v = *res.views.get(View::LAX2CH);
    auto cs = extract_view_contours(v, 0);
    extract_landmarks(v, cs, 0);
    CHECK((cs.landmarks.at("MV_2CH_A") - Vec3(0, -25, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("MV_2CH_B") - Vec3(0, 25, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("APEX_2CH") - Vec3(0, 0, -53)).norm() < tol);
  }
  {
    const auto& v = *res.views.get(View::LAX4CH);
    auto cs = extract_view_contours(v, 0);
    extract_landmarks(v, cs, 0);
    CHECK((cs.landmarks.at("MV_4CH_A") - Vec3(-25, 0, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("MV_4CH_B") - Vec3(25, 0, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("TV_4CH_A") - Vec3(33, 0, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("TV_4CH_B") - Vec3(57.4, 0, 0.5)).norm() < 2.5);
  }
  {
    const auto& v = *res.views.get(View::LAX3CH);
    auto cs = extract_view_contours(v, 0);
    extract_landmarks(v, cs, 0);
    double ca = std::cos(kPi / 4);
    CHECK((cs.landmarks.at("MV_3CH_A") - Vec3(-25 * ca, -25 * ca, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("MV_3CH_B") - Vec3(25 * ca, 25 * ca, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("AO_LV_A") - Vec3(8 * ca, 8 * ca, 0.5)).norm() < tol);
    CHECK((cs.landmarks.at("AO_LV_B") - Vec3(20 * ca, 20 * ca, 0.5)).norm() < tol);
  }
}

TEST_CASE("contour set JSON round trip") {
  PhantomSpec spec;
  spec.sax_spacing_xy = 2.0;
  spec.sax_spacing_z = 8.0;
  auto res = synth_phantom(spec, "p");
  const auto& v = *res.views.get(View::LAX4CH);
  auto cs = extract_view_contours(v, 0);
  extract_landmarks(v, cs, 0);
  auto rt = contourset_from_json(nlohmann::json::parse(to_json(cs).dump()));
  REQUIRE(rt.contours.size() == cs.contours.size());
  for (size_t i = 0; i < cs.contours.size(); ++i) {
    CHECK(rt.contours[i].kind == cs.contours[i].kind);
    REQUIRE(rt.contours[i].points.size() == cs.contours[i].points.size());
    for (size_t p = 0; p < cs.contours[i].points.size(); ++p)
      CHECK((rt.contours[i].points[p] - cs.contours[i].points[p]).norm() == 0.0);
  }
  CHECK(rt.landmarks.size() == cs.landmarks.size());
}

TEST_CASE("SAX landmark extraction is rejected") {
  PhantomSpec spec;
  spec.sax_spacing_xy = 2.0;
  spec.sax_spacing_z = 8.0;
  auto res = synth_phantom(spec, "p");
  const auto& v = *res.views.get(View::SAX);
  auto cs = extract_view_contours(v, 0);
  CHECK_THROWS_AS(extract_landmarks(v, cs, 0), Error);
}
