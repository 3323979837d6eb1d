#include "doctest.h"

#include <random>

#include "cardiomesh/femcore.hpp"
#include "mesh_fixtures.hpp"

using namespace cardio;

TEST_CASE("CsrMatrix merges duplicate triplets and multiplies correctly") {
  std::vector<std::array<int, 2>> idx = {{0, 0}, {0, 1}, {0, 0}, {1, 1}, {1, 0}};
  std::vector<double> val = {1.0, 2.0, 3.0, 5.0, -1.0};
  auto m = CsrMatrix::from_triplets(2, idx, val);
  CHECK(m.diagonal(0) == doctest::Approx(4.0));
  CHECK(m.diagonal(1) == doctest::Approx(5.0));
  std::vector<double> x = {2.0, 1.0}, y(2);
  m.multiply(x, y);
  CHECK(y[0] == doctest::Approx(4 * 2 + 2 * 1));
  CHECK(y[1] == doctest::Approx(-1 * 2 + 5 * 1));
}

TEST_CASE("Dirichlet solve reproduces a linear field to 1e-8 on the unit cube") {
  auto mesh = fixtures::unit_cube_mesh(5);
  auto k = assemble_stiffness(mesh);
  Vec3 a(1.3, -0.7, 2.1);
  double b = 0.25;
  std::map<int, double> bc;
  for (int n : fixtures::cube_boundary_nodes(mesh)) bc[n] = a.dot(mesh.nodes[n]) + b;
  auto u = solve_dirichlet(k, bc, 1e-12);
  double max_err = 0;
  for (int n = 0; n < mesh.num_nodes(); ++n)
    max_err = std::max(max_err, std::abs(u.values[n] - (a.dot(mesh.nodes[n]) + b)));
  CHECK(max_err < 1e-8);
}

TEST_CASE("discrete maximum principle") {
  auto mesh = fixtures::unit_cube_mesh(4);
  auto k = assemble_stiffness(mesh);
  std::map<int, double> bc;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> d(-2.0, 3.0);
  for (int n : fixtures::cube_boundary_nodes(mesh)) bc[n] = d(rng);
  double lo = 1e300, hi = -1e300;
  for (auto& [n, v] : bc) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto u = solve_dirichlet(k, bc, 1e-12);
  for (double v : u.values) {
    CHECK(v >= lo - 1e-9);
    CHECK(v <= hi + 1e-9);
  }
}

TEST_CASE("element gradients") {
  auto mesh = fixtures::unit_cube_mesh(3);
  SUBCASE("constant field has zero gradient") {
    NodalField f{"c", std::vector<double>(mesh.num_nodes(), 7.0)};
    for (const auto& g : element_gradient(mesh, f)) CHECK(g.norm() < 1e-12);
  }
  SUBCASE("linear field recovers its gradient to 1e-12") {
    Vec3 a(0.5, -2.0, 1.5);
    NodalField f{"l", {}};
    for (const auto& p : mesh.nodes) f.values.push_back(a.dot(p) + 3.0);
    for (const auto& g : element_gradient(mesh, f)) CHECK((g - a).norm() < 1e-12);
  }
}

TEST_CASE("stiffness matrix is rigid-invariant within 1e-9") {
  auto mesh = fixtures::unit_cube_mesh(3);
  auto k0 = assemble_stiffness(mesh);
  Mat3 r = Eigen::AngleAxisd(0.83, Vec3(1, 2, -1).normalized()).toRotationMatrix();
  TetMesh moved = mesh;
  for (auto& p : moved.nodes) p = r * p + Vec3(4, -1, 2);
  auto k1 = assemble_stiffness(moved);
  REQUIRE(k0.val.size() == k1.val.size());
  for (size_t i = 0; i < k0.val.size(); ++i)
    CHECK(k1.val[i] == doctest::Approx(k0.val[i]).epsilon(1e-9));
}

TEST_CASE("PCG residual norm is non-increasing") {
  auto mesh = fixtures::unit_cube_mesh(4);
  auto k = assemble_stiffness(mesh);
  std::map<int, double> bc;
  for (int n : fixtures::cube_boundary_nodes(mesh)) bc[n] = mesh.nodes[n].x();
  // Reduce manually to reuse pcg_solve with history.
  std::vector<int> red(mesh.num_nodes(), -1);
  std::vector<int> free_nodes;
  for (int i = 0; i < mesh.num_nodes(); ++i)
    if (!bc.count(i)) {
      red[i] = static_cast<int>(free_nodes.size());
      free_nodes.push_back(i);
    }
  int nf = static_cast<int>(free_nodes.size());
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val, rhs(nf, 0.0);
  for (int fi = 0; fi < nf; ++fi) {
    int i = free_nodes[fi];
    for (int p = k.row_ptr[i]; p < k.row_ptr[i + 1]; ++p) {
      int j = k.col[p];
      if (red[j] >= 0) {
        idx.push_back({fi, red[j]});
        val.push_back(k.val[p]);
      } else {
        rhs[fi] -= k.val[p] * bc.at(j);
      }
    }
  }
  auto kr = CsrMatrix::from_triplets(nf, idx, val);
  std::vector<double> x(nf, 0.0), hist;
  pcg_solve(kr, rhs, x, 1e-12, 10000, &hist);
  REQUIRE(hist.size() >= 2);
  for (size_t i = 1; i < hist.size(); ++i) CHECK(hist[i] <= hist[i - 1] * (1.0 + 1e-9));
}

TEST_CASE("solver error handling") {
  auto mesh = fixtures::unit_cube_mesh(2);
  auto k = assemble_stiffness(mesh);
  CHECK_THROWS_AS(solve_dirichlet(k, {}), Error);
  CHECK_THROWS_AS(solve_dirichlet(k, {{mesh.num_nodes() + 5, 1.0}}), Error);
  TetMesh degen = mesh;
  degen.nodes[degen.tets[0][1]] = degen.nodes[degen.tets[0][0]];
  CHECK_THROWS_AS(assemble_stiffness(degen), Error);
}

TEST_CASE("tet volume sign flips with node order") {
  Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0), d(0, 0, 1);
  CHECK(tet_signed_volume(a, b, c, d) == doctest::Approx(1.0 / 6.0));
  CHECK(tet_signed_volume(a, c, b, d) == doctest::Approx(-1.0 / 6.0));
}
