#include <doctest.h>

#include <cmath>
#include <vector>

#include "qflow/error.hpp"
#include "qflow/evalx.hpp"
#include "qflow/phantom.hpp"

using namespace qflow;

namespace {

struct Pair {
  field::CoefficientField a, b;
};

Pair tensor_pair() {
  const bfor::BasisSpec spec(4, 6, 98.6875);
  const auto scheme = phantom::hydi_scheme();
  const bfor::Fitter fit(spec, scheme.qvectors(), 1e-6);
  const field::Grid g({2, 2, 1}, Vec3::Constant(2.0));
  Pair p{field::CoefficientField(g, spec), field::CoefficientField(g, spec)};
  for (size_t v = 0; v < g.count(); ++v) {
    const double t = 0.4 * static_cast<double>(v);
    const phantom::Tensor ta{phantom::fiber_tensor(Vec3(std::cos(t), std::sin(t), 0)), 1.0};
    const phantom::Tensor tb{phantom::fiber_tensor(Vec3(std::cos(t + 0.6), std::sin(t + 0.6), 0)), 1.0};
    const auto ca = fit.fit(phantom::tensor_mixture_signal(scheme, std::span(&ta, 1))).coefficients;
    const auto cb = fit.fit(phantom::tensor_mixture_signal(scheme, std::span(&tb, 1))).coefficients;
    std::copy(ca.begin(), ca.end(), p.a.voxel(v).begin());
    std::copy(cb.begin(), cb.end(), p.b.voxel(v).begin());
  }
  return p;
}

}  // namespace

TEST_CASE("symmetric KL") {
  const std::vector<double> p = {0.2, 0.3, 0.5}, q = {0.3, 0.3, 0.4};
  double expect = 0.0;
  for (size_t i = 0; i < 3; ++i) expect += (p[i] - q[i]) * std::log(p[i] / q[i]);
  CHECK(evalx::symmetric_kl(p, q) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(evalx::symmetric_kl(p, p) == 0.0);
  CHECK(evalx::symmetric_kl(p, q) == evalx::symmetric_kl(q, p));
  // Unnormalized inputs are renormalized.
  const std::vector<double> p2 = {2.0, 3.0, 5.0};
  CHECK(evalx::symmetric_kl(p2, q) == doctest::Approx(expect).epsilon(1e-12));
  const std::vector<double> z = {0.0, 1.0, 0.0};
  CHECK(std::isfinite(evalx::symmetric_kl(z, q)));
  CHECK_THROWS_AS(evalx::symmetric_kl(p, std::vector<double>{1.0}), Error);
}

TEST_CASE("shell differences and sKL on fibre pairs") {
  const auto pair = tensor_pair();
  const auto scheme = phantom::hydi_scheme();
  const auto zero = evalx::shell_sq_diff(pair.a, pair.a, scheme);
  REQUIRE(zero.size() == 5);
  for (double v : zero) CHECK(v == 0.0);
  const auto d = evalx::shell_sq_diff(pair.a, pair.b, scheme);
  const auto d2 = evalx::shell_sq_diff(pair.b, pair.a, scheme);
  for (size_t k = 0; k < 5; ++k) {
    CHECK(d[k] > 0.0);
    CHECK(d[k] == doctest::Approx(d2[k]).epsilon(1e-12));
  }

  CHECK(evalx::skl_divergence(pair.a, pair.a) == 0.0);
  const double s = evalx::skl_divergence(pair.a, pair.b);
  CHECK(s > 0.0);
  CHECK(s == doctest::Approx(evalx::skl_divergence(pair.b, pair.a)).epsilon(1e-12));

  field::ScalarField mask(pair.a.grid(), 0.0);
  mask.values[1] = 1.0;
  const auto dm = evalx::shell_sq_diff(pair.a, pair.b, scheme, &mask);
  for (size_t k = 0; k < 5; ++k) CHECK(dm[k] < d[k]);
  field::ScalarField empty(pair.a.grid(), 0.0);
  CHECK_THROWS_AS(evalx::skl_divergence(pair.a, pair.b, &empty), Error);
  CHECK_THROWS_AS(evalx::shell_sq_diff(pair.a, pair.b, scheme, &empty), Error);
}
