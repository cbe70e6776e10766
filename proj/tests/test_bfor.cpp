#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "qflow/bfor.hpp"
#include "qflow/error.hpp"
#include "qflow/phantom.hpp"
#include "qflow/quadrature.hpp"
#include "qflow/sphharm.hpp"
#include "test_support.hpp"

using namespace qflow;

namespace {

const bfor::BasisSpec kSpec(4, 6, 98.6875);

Eigen::MatrixXd gram(const bfor::BasisSpec& spec) {
  const auto sph = quad::sphere_product_rule(2 * spec.order() + 2);
  const auto rad = quad::gauss_legendre(60, 0.0, spec.tau());
  const int P = spec.size();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
  std::vector<double> row(static_cast<size_t>(P));
  for (size_t a = 0; a < rad.nodes.size(); ++a) {
    for (size_t s = 0; s < sph.points.size(); ++s) {
      const double r = rad.nodes[a];
      bfor::basis_row(spec, r * sph.points[s], row);
      Eigen::Map<Eigen::VectorXd> v(row.data(), P);
      G += rad.weights[a] * r * r * sph.weights[s] * v * v.transpose();
    }
  }
  return G;
}

// Bisection for the n-th root of j_l, independent of the library's scan.
double bisect_root(int n, int l) {
  int found = 0;
  for (double a = 0.1;; a += 0.01) {
    const double fa = std::sph_bessel(static_cast<unsigned>(l), a);
    const double fb = std::sph_bessel(static_cast<unsigned>(l), a + 0.01);
    if ((fa < 0) != (fb < 0) && ++found == n) {
      double lo = a, hi = a + 0.01;
      for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        if ((std::sph_bessel(static_cast<unsigned>(l), mid) < 0) == (fa < 0)) lo = mid; else hi = mid;
      }
      return 0.5 * (lo + hi);
    }
  }
}

}  // namespace

TEST_CASE("Bessel roots") {
  CHECK(bfor::bessel_root(1, 0) == doctest::Approx(std::numbers::pi).epsilon(1e-14));
  CHECK(bfor::bessel_root(2, 0) == doctest::Approx(2 * std::numbers::pi).epsilon(1e-14));
  CHECK(bfor::bessel_root(1, 2) == doctest::Approx(bisect_root(1, 2)).epsilon(1e-12));
  for (int l = 0; l <= 4; l += 2) {
    for (int n = 1; n <= 6; ++n) {
      CHECK(std::abs(bfor::sph_bessel(l, kSpec.root(n, l))) < 1e-12);
      if (n > 1) CHECK(kSpec.root(n, l) > kSpec.root(n - 1, l));
    }
  }
}

TEST_CASE("layout and support") {
  CHECK(kSpec.size() == 90);
  CHECK(kSpec.channel(2, 3) == 18);
  CHECK(bfor::basis_eval(kSpec, 3, {2, 1}, Vec3::Zero()) == 0.0);
  CHECK(bfor::basis_eval(kSpec, 3, {0, 0}, Vec3::Zero()) != 0.0);
  CHECK_THROWS_AS(bfor::basis_eval(kSpec, 1, {0, 0}, Vec3(0, 0, 99.0)), Error);
  CHECK(std::abs(bfor::basis_eval(kSpec, 2, {0, 0}, Vec3(0, 0, kSpec.tau() * (1 - 1e-12)))) < 1e-8);
  CHECK_THROWS_AS(bfor::BasisSpec(3, 6, 90.0), Error);
  CHECK_THROWS_AS(bfor::BasisSpec(4, 0, 90.0), Error);
}

TEST_CASE("Gram matrix over the q-ball is the identity") {
  const Eigen::MatrixXd G = gram(kSpec);
  CHECK((G - Eigen::MatrixXd::Identity(90, 90)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reconstruct is linear in the coefficients") {
  std::mt19937_64 rng(21);
  const auto c = testing::random_vector(rng, 90);
  std::vector<double> row(90);
  for (int t = 0; t < 10; ++t) {
    const Vec3 q = 60.0 * testing::random_unit(rng);
    bfor::basis_row(kSpec, q, row);
    double s = 0.0;
    for (size_t k = 0; k < 90; ++k) s += c[k] * row[k];
    CHECK(bfor::reconstruct(c, kSpec, q) == doctest::Approx(s).epsilon(1e-12));
  }
  std::vector<double> e(90, 0.0);
  e[17] = 1.0;
  const Vec3 q(10, -20, 30);
  const sh::ShIndex j = sh::index_of(17 % 15);
  CHECK(bfor::reconstruct(e, kSpec, q) == doctest::Approx(bfor::basis_eval(kSpec, 2, j, q)).epsilon(1e-14));
}

TEST_CASE("fit roundtrip on a full-rank scheme") {
  std::mt19937_64 rng(22);
  const auto scheme = phantom::dense_scheme(12, 40, 95.0);
  const auto qs = scheme.qvectors();
  const auto cstar = testing::random_vector(rng, 90);
  std::vector<double> vals;
  for (const Vec3& q : qs) vals.push_back(bfor::reconstruct(cstar, kSpec, q));
  const bfor::Fitter fit(kSpec, qs, 1e-12);
  const auto r = fit.fit(vals);
  double err = 0.0, nrm = 0.0;
  for (int k = 0; k < 90; ++k) {
    err += std::pow(r.coefficients[k] - cstar[static_cast<size_t>(k)], 2);
    nrm += cstar[static_cast<size_t>(k)] * cstar[static_cast<size_t>(k)];
  }
  CHECK(std::sqrt(err / nrm) < 1e-6);
  CHECK(r.rms_residual < 1e-8);

  const auto zero = fit.fit(std::vector<double>(qs.size(), 0.0));
  CHECK(zero.coefficients.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the five-shell scheme needs the ridge for the full basis") {
  const auto qs = phantom::hydi_scheme().qvectors();
  CHECK_THROWS_AS(bfor::Fitter(kSpec, qs, 0.0), Error);
  CHECK_NOTHROW(bfor::Fitter(kSpec, qs, 1e-6));
}

TEST_CASE("isotropic signals have no angular content") {
  const auto scheme = phantom::hydi_scheme();
  const phantom::Tensor iso{1e-3 * Mat3::Identity(), 1.0};
  const auto sig = phantom::tensor_mixture_signal(scheme, std::span(&iso, 1));
  const auto r = bfor::Fitter(kSpec, scheme.qvectors(), 1e-6).fit(sig);
  double l0 = 0.0, lpos = 0.0;
  for (int n = 1; n <= 6; ++n) {
    for (int j = 0; j < 15; ++j) {
      const double v = std::abs(r.coefficients[kSpec.channel(n, j)]);
      (j == 0 ? l0 : lpos) = std::max(j == 0 ? l0 : lpos, v);
    }
  }
  CHECK(lpos < 1e-8 * l0);
}

TEST_CASE("crossing phantom held-out reconstruction error below 5%") {
  const auto train = phantom::hydi_scheme(2011);
  const auto test = phantom::hydi_scheme(99);
  const phantom::Tensor t[2] = {{phantom::fiber_tensor(Vec3::UnitX()), 0.5},
                                {phantom::fiber_tensor(Vec3::UnitY()), 0.5}};
  const auto r = bfor::Fitter(kSpec, train.qvectors(), 1e-6).fit(phantom::tensor_mixture_signal(train, t));
  const auto truth = phantom::tensor_mixture_signal(test, t);
  const auto qs = test.qvectors();
  const std::vector<double> c(r.coefficients.data(), r.coefficients.data() + 90);
  double err = 0.0, nrm = 0.0;
  for (size_t i = 0; i < qs.size(); ++i) {
    err += std::pow(bfor::reconstruct(c, kSpec, qs[i]) - truth[i], 2);
    nrm += truth[i] * truth[i];
  }
  CHECK(std::sqrt(err / nrm) < 0.05);
}

TEST_CASE("l2 norm agrees with the q-space integral of the squared signal") {
  std::mt19937_64 rng(23);
  const auto c = testing::random_vector(rng, 90);
  const auto sph = quad::sphere_product_rule(10);
  const auto rad = quad::gauss_legendre(60, 0.0, kSpec.tau());
  double integral = 0.0;
  for (size_t a = 0; a < rad.nodes.size(); ++a) {
    for (size_t s = 0; s < sph.points.size(); ++s) {
      const double r = rad.nodes[a];
      const double v = bfor::reconstruct(c, kSpec, r * sph.points[s]);
      integral += rad.weights[a] * r * r * sph.weights[s] * v * v;
    }
  }
  const double vv = 8.0;
  CHECK(bfor::l2_norm(c, vv) * bfor::l2_norm(c, vv) == doctest::Approx(integral * vv).epsilon(1e-3));
  std::vector<double> e(90, 0.0);
  e[0] = 1.0;
  CHECK(bfor::l2_norm(e, 1.0) == 1.0);
}

TEST_CASE("EAP of isotropic and anisotropic signals") {
  const auto scheme = phantom::dense_scheme(12, 40, 95.0);
  const bfor::Fitter fit(kSpec, scheme.qvectors(), 1e-6);
  const phantom::Tensor iso{1e-3 * Mat3::Identity(), 1.0};
  const phantom::Tensor aniso{phantom::fiber_tensor(Vec3::UnitZ(), 2e-3, 0.2e-3), 1.0};
  auto coef = [&](const phantom::Tensor& t) {
    const auto r = fit.fit(phantom::tensor_mixture_signal(scheme, std::span(&t, 1)));
    return std::vector<double>(r.coefficients.data(), r.coefficients.data() + 90);
  };
  const auto ci = coef(iso), ca = coef(aniso);

  const int g = 17;
  const auto p = bfor::eap_grid(ci, kSpec, g, kSpec.tau());
  double total = 0.0;
  for (double v : p) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // Axis permutations map the grid onto itself.
  const int h = 8;
  auto at = [&](int i, int j, int k) { return p[static_cast<size_t>((i + h) + g * ((j + h) + g * (k + h)))]; };
  CHECK(std::abs(at(3, 0, 0) - at(-3, 0, 0)) < 1e-10);
  CHECK(std::abs(at(2, 1, 0) - at(1, 2, 0)) < 1e-3 * at(2, 1, 0));

  const double radii[] = {10.0};
  const auto fi = bfor::scalar_features(ci, kSpec, radii, 17);
  const auto fa = bfor::scalar_features(ca, kSpec, radii, 17);
  CHECK(fi.gfa[0] < 0.05);
  CHECK(fa.gfa[0] > fi.gfa[0]);
  CHECK(fi.po > 0.0);
  CHECK(fi.msd > 0.0);

  CHECK_THROWS_AS(bfor::eap_grid(std::vector<double>(90, 0.0), kSpec, g, kSpec.tau()), Error);
  const double flat[] = {1.0, 1.0, 1.0};
  const double w[] = {1.0, 2.0, 3.0};
  CHECK(bfor::gfa(flat, w) == 0.0);
}

TEST_CASE("EAP peaks along the fibre, signal is lowest there") {
  const auto scheme = phantom::dense_scheme(12, 40, 95.0);
  const phantom::Tensor t{phantom::fiber_tensor(Vec3::UnitX()), 1.0};
  const auto r = bfor::Fitter(kSpec, scheme.qvectors(), 1e-6).fit(phantom::tensor_mixture_signal(scheme, std::span(&t, 1)));
  const std::vector<double> c(r.coefficients.data(), r.coefficients.data() + 90);
  CHECK(bfor::reconstruct(c, kSpec, Vec3(47.37, 0, 0)) < bfor::reconstruct(c, kSpec, Vec3(0, 47.37, 0)));
  const int g = 17, h = 8;
  const auto p = bfor::eap_grid(c, kSpec, g, kSpec.tau());
  auto at = [&](int i, int j, int k) { return p[static_cast<size_t>((i + h) + g * ((j + h) + g * (k + h)))]; };
  CHECK(at(2, 0, 0) > at(0, 2, 0));
}

TEST_CASE("basis evaluation counter") {
  bfor::reset_basis_eval_count();
  std::vector<double> row(90);
  bfor::basis_row(kSpec, Vec3(1, 2, 3), row);
  CHECK(bfor::basis_eval_count() == 90);
  bfor::reset_basis_eval_count();
  CHECK(bfor::basis_eval_count() == 0);
}
