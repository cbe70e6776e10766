#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "qflow/simd/kernels.hpp"

using namespace qflow;
using simd::Soa3;

namespace {

Soa3 random_soa(std::mt19937_64& rng, size_t n, double sd) {
  std::normal_distribution<double> N(0.0, sd);
  Soa3 s(n);
  for (size_t i = 0; i < n; ++i) s.set(i, Vec3(N(rng), N(rng), N(rng)));
  return s;
}

double max_rel(const Soa3& a, const Soa3& b) {
  double m = 0.0, scale = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, (a[i] - b[i]).norm());
    scale = std::max(scale, b[i].norm());
  }
  return m / scale;
}

}  // namespace

TEST_CASE("scalar kernels against a direct sum") {
  std::mt19937_64 rng(51);
  const Soa3 a = random_soa(rng, 17, 3.0), b = random_soa(rng, 11, 3.0), v = random_soa(rng, 11, 1.0),
             u = random_soa(rng, 17, 1.0);
  const double is2 = 1.0 / 16.0;
  Soa3 out, dout;
  simd::scalar::gaussian_apply(a, b, v, is2, out);
  simd::scalar::weighted_displacement(a, b, u, v, is2, dout);
  for (size_t i = 0; i < a.size(); ++i) {
    Vec3 s = Vec3::Zero(), d = Vec3::Zero();
    for (size_t j = 0; j < b.size(); ++j) {
      const double k = std::exp(-(a[i] - b[j]).squaredNorm() * is2);
      s += k * v[j];
      d += -2.0 * is2 * k * u[i].dot(v[j]) * (a[i] - b[j]);
    }
    CHECK((out[i] - s).norm() < 1e-13);
    CHECK((dout[i] - d).norm() < 1e-13);
  }
}

#ifdef QFLOW_HAVE_AVX2
TEST_CASE("AVX2 kernels agree with the scalar reference") {
  if (!simd::avx2_available()) {
    MESSAGE("AVX2 not available; skipped");
    return;
  }
  std::mt19937_64 rng(52);
  for (size_t n : {size_t{1}, size_t{3}, size_t{4}, size_t{7}, size_t{64}, size_t{301}}) {
    const Soa3 a = random_soa(rng, n + 2, 4.0), b = random_soa(rng, n, 4.0), v = random_soa(rng, n, 1.0),
               u = random_soa(rng, n + 2, 1.0);
    for (double is2 : {1.0 / 36.0, 1.0 / 144.0, 2.0}) {
      Soa3 s1, s2, d1, d2;
      simd::scalar::gaussian_apply(a, b, v, is2, s1);
      simd::avx2::gaussian_apply(a, b, v, is2, s2);
      simd::scalar::weighted_displacement(a, b, u, v, is2, d1);
      simd::avx2::weighted_displacement(a, b, u, v, is2, d2);
      CHECK(max_rel(s2, s1) < 1e-12);
      CHECK(max_rel(d2, d1) < 1e-12);
    }
  }
}

TEST_CASE("vector exp") {
  if (!simd::avx2_available()) return;
  double in[4], out[4];
  for (double x = -700.0; x <= 0.0; x += 0.37) {
    for (int k = 0; k < 4; ++k) in[k] = x * (1.0 - 0.1 * k);
    simd::avx2::exp4(in, out);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(out[k] - std::exp(in[k])) <= 1e-15 * std::exp(in[k]));
  }
  in[0] = -1e4;
  in[1] = 0.0;
  in[2] = 1.0;
  in[3] = -0.5;
  simd::avx2::exp4(in, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 1.0);
  CHECK(out[2] == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
}
#endif

TEST_CASE("dispatch") {
  const auto before = simd::active_isa();
  simd::set_isa(simd::Isa::Scalar);
  CHECK(simd::active_isa() == simd::Isa::Scalar);
  CHECK(std::string(simd::isa_name(simd::Isa::Avx2)) == "avx2");
  simd::set_isa(before);
  std::vector<Vec3> pts = {Vec3(1, 2, 3), Vec3(-1, 0, 4)};
  const Soa3 s(pts);
  CHECK((s.to_vec3()[1] - pts[1]).norm() == 0.0);
}
