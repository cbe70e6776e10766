#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/LU>

#include "qflow/error.hpp"
#include "qflow/field.hpp"
#include "qflow/lddmm.hpp"
#include "qflow/wigner.hpp"
#include "test_support.hpp"

using namespace qflow;
using field::CoefficientField;
using field::DeformationField;
using field::Grid;

namespace {

const bfor::BasisSpec kSpec(4, 2, 50.0);

DeformationField mapped(const Grid& g, const auto& f) {
  DeformationField phi(g);
  for (size_t i = 0; i < g.count(); ++i) phi.map()[i] = f(g.point(i));
  return phi;
}

}  // namespace

TEST_CASE("grid indexing") {
  const Grid g({4, 5, 6}, Vec3(1.0, 2.0, 3.0), Vec3(-1, 0, 1));
  CHECK(g.count() == 120);
  for (size_t i : {size_t{0}, size_t{7}, size_t{119}}) {
    const auto c = g.ijk(i);
    CHECK(g.index(c[0], c[1], c[2]) == i);
  }
  CHECK((g.point(1, 1, 1) - Vec3(0, 2, 4)).norm() == 0.0);
  CHECK(g.voxel_volume() == 6.0);
}

TEST_CASE("interpolation reproduces voxel values and is trilinear in between") {
  const Grid g({5, 5, 5}, Vec3::Constant(2.0));
  const CoefficientField f = testing::smooth_field(g, kSpec, 1);
  for (size_t v = 0; v < g.count(); v += 7) {
    const auto got = field::interpolate(f, g.point(v));
    CHECK(testing::max_abs_diff(got, {f.voxel(v).begin(), f.voxel(v).end()}) == 0.0);
  }
  const auto mid = field::interpolate(f, 0.5 * (g.point(1, 2, 3) + g.point(2, 2, 3)));
  for (size_t k = 0; k < 30; ++k) {
    CHECK(mid[k] == doctest::Approx(0.5 * (f.voxel(g.index(1, 2, 3))[k] + f.voxel(g.index(2, 2, 3))[k])).epsilon(1e-14));
  }

  CoefficientField constant(g, kSpec);
  for (size_t v = 0; v < g.count(); ++v)
    for (size_t k = 0; k < 30; ++k) constant.voxel(v)[k] = static_cast<double>(k);
  constant.set_boundary(std::vector<double>(constant.voxel(0).begin(), constant.voxel(0).end()));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-3.0, 12.0);
  for (int t = 0; t < 20; ++t) {
    const auto v = field::interpolate(constant, Vec3(U(rng), U(rng), U(rng)));
    for (size_t k = 0; k < 30; ++k) CHECK(std::abs(v[k] - static_cast<double>(k)) < 1e-12);
  }
}

TEST_CASE("points outside the grid blend into the boundary vector") {
  const Grid g({3, 3, 3}, Vec3::Ones());
  CoefficientField f(g, kSpec);
  std::vector<double> b(30, 0.0);
  b[0] = 5.0;
  f.set_boundary(b);
  CHECK(field::interpolate(f, Vec3(-1.0, 1.0, 1.0))[0] == doctest::Approx(5.0));
  CHECK(field::interpolate(f, Vec3(-0.5, 1.0, 1.0))[0] == doctest::Approx(2.5));
  CHECK(field::interpolate(f, Vec3(40.0, 1.0, 1.0))[0] == doctest::Approx(5.0));
  CHECK_THROWS_AS(f.set_boundary(std::vector<double>(3, 0.0)), Error);
}

TEST_CASE("interpolation gradient against finite differences") {
  const Grid g({5, 5, 5}, Vec3(1.0, 1.5, 2.0));
  const CoefficientField f = testing::smooth_field(g, kSpec, 3);
  const Vec3 x(1.3, 2.2, 3.7);
  std::vector<double> v(30);
  Eigen::Matrix<double, Eigen::Dynamic, 3> G(30, 3);
  field::interpolate_with_gradient(f, x, v, G);
  for (int a = 0; a < 3; ++a) {
    const double h = 1e-6;
    const auto p = field::interpolate(f, x + h * Vec3::Unit(a));
    const auto m = field::interpolate(f, x - h * Vec3::Unit(a));
    for (int k = 0; k < 30; ++k) CHECK(std::abs(G(k, a) - (p[static_cast<size_t>(k)] - m[static_cast<size_t>(k)]) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("Jacobian of affine and smooth maps") {
  const Grid g({8, 8, 8}, Vec3::Constant(1.5));
  Mat3 A;
  A << 1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.2;
  const Vec3 b(0.3, -0.4, 1.0);
  const auto affine = mapped(g, [&](const Vec3& x) { return Vec3(A * x + b); });
  for (size_t v = 0; v < g.count(); ++v) {
    const auto c = g.ijk(v);
    CHECK((field::jacobian(affine, c[0], c[1], c[2]) - A).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK((field::jacobian(DeformationField(g), 0, 0, 0) - Mat3::Identity()).norm() == 0.0);
  const auto det = field::jacobian_determinant(affine);
  CHECK(det.values[100] == doctest::Approx(A.determinant()).epsilon(1e-10));

  // Error of the central difference falls as h^2.
  auto sinus_err = [](double h) {
    const int n = static_cast<int>(std::lround(6.0 / h)) + 1;
    const Grid gg({n, n, n}, Vec3::Constant(h));
    const double a = 0.1, w = 0.5;
    const auto phi = mapped(gg, [&](const Vec3& x) { return Vec3(x.x() + a * std::sin(w * x.y()), x.y(), x.z()); });
    const int i = n / 2;
    const Vec3 x = gg.point(i, i, i);
    return std::abs(field::jacobian(phi, i, i, i)(0, 1) - a * w * std::cos(w * x.y()));
  };
  const double e1 = sinus_err(0.5), e2 = sinus_err(0.25);
  CHECK(e2 < e1 / 3.5);
}

TEST_CASE("deformation inversion") {
  const Grid g({10, 10, 10}, Vec3::Constant(2.0));
  SUBCASE("identity") {
    field::InversionReport rep;
    const auto inv = field::invert_deformation(DeformationField(g), &rep);
    for (size_t v = 0; v < g.count(); ++v) CHECK((inv.map()[v] - g.point(v)).norm() < 1e-12);
    CHECK(rep.failures == 0);
  }
  SUBCASE("translation") {
    const Vec3 t(0.7, -0.3, 0.2);
    const auto inv = field::invert_deformation(mapped(g, [&](const Vec3& x) { return Vec3(x + t); }));
    const Vec3 c = g.center();
    for (size_t v = 0; v < g.count(); ++v) {
      if ((g.point(v) - c).norm() < 6.0) CHECK((inv.map()[v] - (g.point(v) - t)).norm() < 1e-6);
    }
  }
  SUBCASE("flow-generated map") {
    auto m = lddmm::MomentumTrajectory::zeros(g, 10, 6.0, 2);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> N(0.0, 0.3);
    for (auto& a : m.alpha)
      for (auto& v : a) v = Vec3(N(rng), N(rng), N(rng));
    const auto phi = lddmm::flow_forward(m, g).phi1();
    field::InversionReport rep;
    const auto inv = field::invert_deformation(phi, &rep);
    const auto round = field::compose(phi, inv);
    double worst = 0.0;
    const Vec3 c = g.center();
    for (size_t v = 0; v < g.count(); ++v) {
      if ((g.point(v) - c).norm() < 6.0) worst = std::max(worst, (round.map()[v] - g.point(v)).norm());
    }
    CHECK(worst < 0.05 * 2.0);
    CHECK(rep.failures == 0);
  }
}

TEST_CASE("composition") {
  const Grid g({6, 6, 6}, Vec3::Ones());
  const Vec3 t1(0.5, 0, 0), t2(0, 0.25, 0);
  const auto a = mapped(g, [&](const Vec3& x) { return Vec3(x + t1); });
  const auto b = mapped(g, [&](const Vec3& x) { return Vec3(x + t2); });
  const auto ab = field::compose(a, b);
  CHECK((ab.map()[g.index(2, 2, 2)] - (g.point(2, 2, 2) + t1 + t2)).norm() < 1e-12);
  CHECK((field::deformation_at(a, Vec3(2.5, 2.5, 2.5)) - Vec3(3.0, 2.5, 2.5)).norm() < 1e-12);
}

TEST_CASE("group action") {
  const Grid g({7, 7, 7}, Vec3::Constant(2.0));
  const CoefficientField f = testing::smooth_field(g, kSpec, 5);

  const auto same = field::group_action(f, DeformationField(g));
  CHECK(testing::max_abs_diff(same.data(), f.data()) < 1e-12);

  // A rigid rotation about the grid centre moves a voxel-centred sample to its
  // image and reorients it by the same rotation.
  const Vec3 c = g.center();
  const Mat3 R = wigner::exp_so3(Vec3(0, 0, std::acos(-1.0) / 2));
  const auto rot = mapped(g, [&](const Vec3& x) { return Vec3(c + R * (x - c)); });
  const auto out = field::group_action(f, rot);
  const auto w = wigner::wigner_from_rotation(R, 4);
  const size_t src = g.index(2, 3, 3);
  const size_t dst = g.index(3, 2, 3);
  CHECK((g.point(dst) - (c + R * (g.point(src) - c))).norm() < 1e-12);
  const auto expect = wigner::reorient(f.voxel(src), w);
  CHECK(testing::max_abs_diff({out.voxel(dst).begin(), out.voxel(dst).end()}, expect) < 1e-8);

  CHECK(field::l2_norm(f) > 0.0);
  CHECK_THROWS_AS(field::group_action(f, DeformationField(Grid({3, 3, 3}, Vec3::Ones()))), Error);
}
