#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/LU>

#include "qflow/error.hpp"
#include "qflow/phantom.hpp"

using namespace qflow;

TEST_CASE("five-shell scheme layout") {
  const auto s = phantom::hydi_scheme();
  CHECK(s.size() == 132);
  CHECK(s.shells.size() == 6);
  CHECK(s.weighted_shells().size() == 5);
  const int counts[] = {7, 6, 21, 24, 24, 50};
  const double bs[] = {0, 300, 1200, 2700, 4800, 7500};
  for (size_t k = 0; k < 6; ++k) {
    CHECK(s.shells[k].directions.size() == static_cast<size_t>(counts[k]));
    CHECK(s.shells[k].b == bs[k]);
  }
  CHECK(s.shells.back().q == doctest::Approx(78.95));
  double dq = 0.0;
  for (size_t k = 1; k < 6; ++k) dq += s.shells[k].q - s.shells[k - 1].q;
  CHECK(dq / 5 == doctest::Approx(15.79));
  for (const auto& sh : s.shells)
    for (const Vec3& u : sh.directions) CHECK(u.norm() == doctest::Approx(1.0).epsilon(1e-14));
  const auto q = s.qvectors();
  CHECK(q.size() == 132);
  CHECK(q[0].norm() == 0.0);
  CHECK(s.bvalues()[131] == 7500.0);
}

TEST_CASE("electrostatic directions are spread out") {
  const auto d = phantom::electrostatic_directions(30, 3);
  double closest = 1.0;
  for (size_t i = 0; i < d.size(); ++i)
    for (size_t j = i + 1; j < d.size(); ++j) closest = std::min(closest, 1.0 - std::abs(d[i].dot(d[j])));
  CHECK(closest > 0.02);
  CHECK(phantom::electrostatic_directions(30, 3) == d);
}

TEST_CASE("scheme from rows groups shells") {
  const std::vector<Vec3> q = {Vec3::Zero(), Vec3(10, 0, 0), Vec3(0, 10, 0), Vec3(0, 0, 20)};
  const std::vector<double> b = {0, 100, 100, 400};
  const auto s = phantom::scheme_from_rows(q, b);
  CHECK(s.size() == 4);
  CHECK(s.weighted_shells().size() == 2);
  CHECK_THROWS_AS(phantom::scheme_from_rows(q, std::vector<double>{0, 1}), Error);
}

TEST_CASE("tensor signals") {
  const auto s = phantom::hydi_scheme();
  const phantom::Tensor iso{1e-3 * Mat3::Identity(), 1.0};
  const auto e = phantom::tensor_mixture_signal(s, std::span(&iso, 1));
  const auto bv = s.bvalues();
  for (size_t i = 0; i < e.size(); ++i) CHECK(e[i] == doctest::Approx(std::exp(-bv[i] * 1e-3)).epsilon(1e-14));
  const Mat3 D = phantom::fiber_tensor(Vec3(1, 1, 0).normalized());
  CHECK((D * Vec3(1, 1, 0).normalized()).norm() == doctest::Approx(1.7e-3));
  CHECK(D.trace() == doctest::Approx(2.3e-3));
}

TEST_CASE("templates") {
  const bfor::BasisSpec spec(4, 6, 98.6875);
  const auto scheme = phantom::hydi_scheme();
  phantom::TemplateOptions opt;
  opt.size = 10;
  opt.ball_radius = 8.0;
  opt.tube_radius = 3.0;
  opt.edge_width = 0.0;
  const auto t = phantom::make_template(opt, spec, scheme);
  CHECK(t.field.grid().count() == 1000);
  double in = 0.0;
  for (double v : t.fiber_mask.values) in += v;
  CHECK(in > 10.0);
  CHECK(in < 500.0);
  // Corner voxels are free water, which is the boundary vector.
  const auto corner = t.field.voxel(0);
  for (size_t k = 0; k < 90; ++k) CHECK(std::abs(corner[k] - t.field.boundary()[k]) < 1e-3 * (1 + std::abs(corner[k])));
  const auto again = phantom::make_template(opt, spec, scheme);
  CHECK(again.field.data() == t.field.data());
}

TEST_CASE("warps") {
  const field::Grid g({12, 12, 12}, Vec3::Constant(2.0));
  const auto zero = phantom::random_warp(g, 0.0, 8.0, 1);
  for (size_t v = 0; v < g.count(); ++v) CHECK(zero.displacement(v).norm() == 0.0);

  const auto w = phantom::random_warp(g, 4.0, 8.0, 2);
  double maxd = 0.0;
  for (size_t v = 0; v < g.count(); ++v) maxd = std::max(maxd, w.displacement(v).norm());
  CHECK(maxd == doctest::Approx(4.0).epsilon(0.05));
  for (double d : field::jacobian_determinant(w).values) CHECK(d > 0.0);
  CHECK(phantom::random_warp(g, 4.0, 8.0, 2).map() == w.map());

  const auto s = phantom::swirl(g, 0.5, 8.0);
  const size_t c = g.index(6, 6, 6);
  CHECK(s.displacement(c).norm() < 2.0);
  for (double d : field::jacobian_determinant(s).values) CHECK(d > 0.0);
}

TEST_CASE("ensembles are deterministic") {
  const bfor::BasisSpec spec(2, 2, 60.0);
  const field::Grid g({8, 8, 8}, Vec3::Constant(2.0));
  field::CoefficientField f(g, spec);
  for (size_t v = 0; v < g.count(); ++v) f.voxel(v)[0] = std::sin(0.3 * static_cast<double>(v));
  phantom::EnsembleOptions opt;
  opt.noise_sd = 0.01;
  const auto a = phantom::synthetic_ensemble(f, 3, opt, 5);
  const auto b = phantom::synthetic_ensemble(f, 3, opt, 5);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(a[i].field.data() == b[i].field.data());
  CHECK(a[0].field.data() != a[1].field.data());
  CHECK_THROWS_AS(phantom::synthetic_ensemble(f, 0, opt, 5), Error);
}
