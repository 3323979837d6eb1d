#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cardiomesh/fields.hpp"
#include "cardiomesh/heart_template.hpp"
#include "mesh_fixtures.hpp"

using namespace cardio;

namespace {

const TemplateModel& tmpl() {
  static TemplateModel m = build_template();
  return m;
}

const TetMesh& tube() {
  static TetMesh m = fixtures::tube_mesh(20.0, 30.0, 0.0, 40.0, 24, 3, 5);
  return m;
}

// Slab oracle: unit cube with analytic apicobasal (y) and transmural (x)
// fields; grad z = e_y, grad rho = e_x, circumferential = -e_z.
struct Slab {
  TetMesh mesh;
  UVCField uvc;
};

Slab slab(int n) {
  Slab s;
  s.mesh = fixtures::unit_cube_mesh(n);
  for (const auto& p : s.mesh.nodes) {
    s.uvc.z.push_back(p.y());
    s.uvc.rho.push_back(p.x());
  }
  s.uvc.phi.assign(s.mesh.num_nodes(), 0.0);
  s.uvc.chamber.assign(s.mesh.num_nodes(), 0);
  return s;
}

double helix_deg(const Vec3& f) {
  // Angle of the fiber in the (circumferential, longitudinal) = (-e_z, e_y)
  // plane of the slab.
  return rad2deg(std::atan2(f.y(), -f.z()));
}

TetMesh single_tet() {
  TetMesh m;
  m.nodes = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.tets = {{0, 1, 2, 3}};
  m.region = {ElemRegion::LV_MYO};
  return m;
}

}  // namespace

TEST_CASE("UVC on the tube: bounds, boundary values, mid-wall rho") {
  auto f = compute_uvc(tube());
  const auto& m = tube();
  for (double v : f.z) {
    CHECK(v >= -1e-9);
    CHECK(v <= 1.0 + 1e-9);
  }
  for (int n : m.tagged(surf::APEX_NODE)) CHECK(f.z[n] == 0.0);
  for (int n : m.tagged(surf::BASE)) CHECK(f.z[n] == 1.0);
  for (int n : m.tagged(surf::LV_ENDO)) CHECK(f.rho[n] == 0.0);
  for (int n : m.tagged(surf::EPI)) CHECK(f.rho[n] == 1.0);
  for (double v : f.rho) {
    CHECK(v >= -1e-9);
    CHECK(v <= 1.0 + 1e-9);
  }
  // Mid-wall nodes (r = 25 of [20, 30]): harmonic radial profile, close to
  // the linear midpoint.
  for (int n = 0; n < m.num_nodes(); ++n) {
    double r = std::hypot(m.nodes[n].x(), m.nodes[n].y());
    if (std::abs(r - 25.0) < 1e-9) {
      CHECK(f.rho[n] > 0.4);
      CHECK(f.rho[n] < 0.6);
    }
  }
}

TEST_CASE("phi is antisymmetric across the anterior plane on a symmetric mesh") {
  // Tube with an extra on-axis apex node so that the long axis is exactly the
  // z axis. Then septum_dir = +x, anterior = +y and the anterior plane is
  // x = 0; mirrored node pairs are (x, y, z) / (-x, y, z).
  TetMesh m = tube();
  int apex = m.num_nodes();
  m.nodes.push_back(Vec3(0, 0, -5));
  int n_theta = 24;
  for (int it = 0; it < n_theta; ++it) {
    std::array<int, 4> tet = {apex, it, (it + 1) % n_theta, n_theta + it};  // up one r-layer
    if (tet_signed_volume(m.nodes[tet[0]], m.nodes[tet[1]], m.nodes[tet[2]],
                          m.nodes[tet[3]]) < 0)
      std::swap(tet[2], tet[3]);
    m.tets.push_back(tet);
    m.region.push_back(ElemRegion::LV_MYO);
  }
  m.surface_tags[surf::APEX_NODE] = {apex};

  auto f = compute_uvc(m);
  std::map<std::pair<long, long>, std::map<long, int>> lookup;  // (y,z) -> x -> node
  auto q = [](double v) { return std::lround(v * 1e6); };
  for (int n = 0; n < m.num_nodes(); ++n)
    lookup[{q(m.nodes[n].y()), q(m.nodes[n].z())}][q(m.nodes[n].x())] = n;
  int pairs = 0;
  for (int n = 0; n < m.num_nodes(); ++n) {
    double x = m.nodes[n].x();
    if (x < 1e-6) continue;  // one side only; skip the branch-cut meridian
    auto& column = lookup.at({q(m.nodes[n].y()), q(m.nodes[n].z())});
    auto it = column.find(q(-x));
    REQUIRE(it != column.end());
    CHECK(std::abs(f.phi[n] + f.phi[it->second]) < 1e-6);
    ++pairs;
  }
  CHECK(pairs > 100);
  for (double p : f.phi) {
    CHECK(p > -kPi);
    CHECK(p <= kPi + 1e-12);
  }
}

TEST_CASE("UVC on the template: ranges, chambers, mid-wall") {
  const auto& m = tmpl().volume;
  auto f = compute_uvc(m);
  int quadrants[4] = {0, 0, 0, 0};
  for (int n = 0; n < m.num_nodes(); ++n) {
    CHECK(f.z[n] >= -1e-9);
    CHECK(f.z[n] <= 1.0 + 1e-9);
    CHECK(f.rho[n] >= -1e-9);
    CHECK(f.rho[n] <= 1.0 + 1e-9);
    CHECK(f.phi[n] > -kPi);
    CHECK(f.phi[n] <= kPi + 1e-12);
    quadrants[(f.phi[n] >= 0 ? 1 : 0) + (std::abs(f.phi[n]) > kPi / 2 ? 2 : 0)]++;
    CHECK((f.chamber[n] == 0 || f.chamber[n] == 1));
  }
  for (int qd = 0; qd < 4; ++qd) CHECK(quadrants[qd] > 0);
  long n_lv = 0, n_rv = 0;
  for (int c : f.chamber) (c == 0 ? n_lv : n_rv)++;
  CHECK(n_lv > 0);
  CHECK(n_rv > 0);
  // Septal nodes (shared by LV and RV elements) are labeled LV.
  std::vector<char> touches_lv(m.num_nodes(), 0), touches_rv(m.num_nodes(), 0);
  for (int e = 0; e < m.num_elems(); ++e)
    for (int a = 0; a < 4; ++a) {
      if (m.region[e] == ElemRegion::LV_MYO) touches_lv[m.tets[e][a]] = 1;
      if (m.region[e] == ElemRegion::RV_MYO) touches_rv[m.tets[e][a]] = 1;
    }
  for (int n = 0; n < m.num_nodes(); ++n)
    if (touches_lv[n] && touches_rv[n]) CHECK(f.chamber[n] == 0);

  // Mid LV free wall: between endo (22.4) and epi (30.5) radius at z = -20.
  Vec3 probe(-26.5, 0, -20);
  int best = 0;
  for (int n = 1; n < m.num_nodes(); ++n)
    if ((m.nodes[n] - probe).norm() < (m.nodes[best] - probe).norm()) best = n;
  CHECK(f.rho[best] > 0.4);
  CHECK(f.rho[best] < 0.6);
}

TEST_CASE("UVC error handling") {
  TetMesh m = tube();
  m.surface_tags.erase(surf::BASE);
  CHECK_THROWS_AS(compute_uvc(m), Error);

  // Two disjoint tets: disconnected myocardium.
  TetMesh d;
  d.nodes = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1),
             Vec3(9, 9, 9), Vec3(10, 9, 9), Vec3(9, 10, 9), Vec3(9, 9, 10)};
  d.tets = {{0, 1, 2, 3}, {4, 5, 6, 7}};
  d.region = {ElemRegion::LV_MYO, ElemRegion::LV_MYO};
  d.surface_tags[surf::APEX_NODE] = {0};
  d.surface_tags[surf::BASE] = {3};
  d.surface_tags[surf::LV_ENDO] = {1};
  d.surface_tags[surf::EPI] = {2};
  CHECK_THROWS_WITH_AS(compute_uvc(d), doctest::Contains("disconnected"), Error);
}

TEST_CASE("slab helix angle follows the linear alpha law within 2 degrees") {
  auto s = slab(4);
  auto fib = compute_fibers(s.mesh, s.uvc);
  CHECK(fib.fallback_elements.empty());
  for (int e = 0; e < s.mesh.num_elems(); ++e) {
    const auto& t = s.mesh.tets[e];
    double rho = (s.uvc.rho[t[0]] + s.uvc.rho[t[1]] + s.uvc.rho[t[2]] + s.uvc.rho[t[3]]) / 4.0;
    double expect = 60.0 * (1.0 - rho) - 60.0 * rho;
    CHECK(std::abs(helix_deg(fib.f[e]) - expect) < 2.0);
    CHECK(std::abs(helix_deg(fib.f[e]) - expect) < 1e-9);  // analytic fields: exact
    // Helix construction: fiber orthogonal to grad rho (= e_x).
    CHECK(std::abs(fib.f[e].x()) < 1e-6);
  }
}

TEST_CASE("alpha endpoints and midpoint on single elements") {
  // Node rho values are shifted so the element mean hits 0, 1/2 and 1 exactly
  // while keeping grad rho = e_x.
  for (auto [mean, expect] : std::vector<std::pair<double, double>>{
           {0.0, 60.0}, {0.5, 0.0}, {1.0, -60.0}}) {
    TetMesh m = single_tet();
    UVCField uvc;
    double shift = mean - 0.25;  // mean of x over the tet's nodes is 1/4
    for (const auto& p : m.nodes) {
      uvc.z.push_back(p.y());
      uvc.rho.push_back(p.x() + shift);
    }
    uvc.phi.assign(4, 0.0);
    uvc.chamber.assign(4, 0);
    auto fib = compute_fibers(m, uvc);
    CHECK(helix_deg(fib.f[0]) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("fiber frames are orthonormal and right-handed on the template") {
  auto uvc = compute_uvc(tmpl().volume);
  auto fib = compute_fibers(tmpl().volume, uvc);
  for (int e = 0; e < tmpl().volume.num_elems(); ++e) {
    CHECK(std::abs(fib.f[e].norm() - 1.0) < 1e-6);
    CHECK(std::abs(fib.s[e].norm() - 1.0) < 1e-6);
    CHECK(std::abs(fib.n[e].norm() - 1.0) < 1e-6);
    CHECK(std::abs(fib.f[e].dot(fib.s[e])) < 1e-6);
    CHECK(std::abs(fib.f[e].dot(fib.n[e])) < 1e-6);
    CHECK(std::abs(fib.s[e].dot(fib.n[e])) < 1e-6);
    Mat3 frame;
    frame.col(0) = fib.f[e];
    frame.col(1) = fib.s[e];
    frame.col(2) = fib.n[e];
    CHECK(frame.determinant() == doctest::Approx(1.0).epsilon(1e-6));
  }
  MESSAGE("fallback elements: " << fib.fallback_elements.size());
  CHECK(fib.fallback_elements.size() < static_cast<size_t>(tmpl().volume.num_elems() / 20));
}

TEST_CASE("fibers are equivariant under rigid rotation") {
  auto s = slab(3);
  auto fib0 = compute_fibers(s.mesh, s.uvc);
  Mat3 r = Eigen::AngleAxisd(1.1, Vec3(2, -1, 1).normalized()).toRotationMatrix();
  Slab moved = s;
  for (auto& p : moved.mesh.nodes) p = r * p + Vec3(3, 4, -5);
  auto fib1 = compute_fibers(moved.mesh, moved.uvc);
  for (int e = 0; e < s.mesh.num_elems(); ++e) {
    CHECK((fib1.f[e] - r * fib0.f[e]).norm() < 1e-6);
    CHECK((fib1.s[e] - r * fib0.s[e]).norm() < 1e-6);
    CHECK((fib1.n[e] - r * fib0.n[e]).norm() < 1e-6);
  }
}

TEST_CASE("swapping the alpha endpoints negates the helix angle") {
  auto s = slab(3);
  auto a = compute_fibers(s.mesh, s.uvc);
  FiberAngles rev;
  rev.alpha_endo_deg = -60.0;
  rev.alpha_epi_deg = 60.0;
  auto b = compute_fibers(s.mesh, s.uvc, rev);
  for (int e = 0; e < s.mesh.num_elems(); ++e)
    CHECK(helix_deg(b.f[e]) == doctest::Approx(-helix_deg(a.f[e])).epsilon(1e-9));
}

TEST_CASE("fibers file format") {
  FiberFrame fib;
  fib.f = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  fib.s = {Vec3(0, 1, 0), Vec3(0, 0, 1)};
  fib.n = {Vec3(0, 0, 1), Vec3(1, 0, 0)};
  auto path = (std::filesystem::temp_directory_path() / "cardio_fibers_test.txt").string();
  write_fibers(fib, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() ==
        "2\n1.000000 0.000000 0.000000 0.000000 1.000000 0.000000\n"
        "0.000000 1.000000 0.000000 0.000000 0.000000 1.000000\n");
  std::filesystem::remove(path);
}
