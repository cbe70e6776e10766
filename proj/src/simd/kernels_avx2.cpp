// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <cmath>

#include "qflow/simd/kernels.hpp"

namespace qflow::simd::avx2 {

namespace {

// Cephes exp: range reduction by ln 2, then a (3,4) Pade form on [-ln2/2, ln2/2].
inline __m256d exp_pd(__m256d x) {
  const __m256d lo = _mm256_set1_pd(-708.39641853226408);
  const __m256d hi = _mm256_set1_pd(709.78271289338397);
  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

  __m256d fx = _mm256_fmadd_pd(x, _mm256_set1_pd(1.4426950408889634073599), _mm256_set1_pd(0.5));
  fx = _mm256_floor_pd(fx);
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(1.42860682030941723212E-6), x);

  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, x);
  __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.00000000000000000009E0));
  x = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  x = _mm256_fmadd_pd(x, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

  __m256i n = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(fx));
  n = _mm256_slli_epi64(_mm256_add_epi64(n, _mm256_set1_epi64x(1023)), 52);
  return _mm256_andnot_pd(underflow, _mm256_mul_pd(x, _mm256_castsi256_pd(n)));
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void exp4(const double* in, double* out) { _mm256_storeu_pd(out, exp_pd(_mm256_loadu_pd(in))); }

void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out) {
  const auto na = static_cast<long long>(a.size());
  const size_t nb = b.size();
  const size_t nb4 = nb & ~size_t{3};
  out.resize(a.size());
  const __m256d neg_inv = _mm256_set1_pd(-inv_sigma2);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < na; ++ii) {
    const auto i = static_cast<size_t>(ii);
    const __m256d ax = _mm256_set1_pd(a.x[i]), ay = _mm256_set1_pd(a.y[i]), az = _mm256_set1_pd(a.z[i]);
    __m256d sx = _mm256_setzero_pd(), sy = _mm256_setzero_pd(), sz = _mm256_setzero_pd();
    for (size_t j = 0; j < nb4; j += 4) {
      const __m256d dx = _mm256_sub_pd(ax, _mm256_loadu_pd(&b.x[j]));
      const __m256d dy = _mm256_sub_pd(ay, _mm256_loadu_pd(&b.y[j]));
      const __m256d dz = _mm256_sub_pd(az, _mm256_loadu_pd(&b.z[j]));
      __m256d d2 = _mm256_mul_pd(dx, dx);
      d2 = _mm256_fmadd_pd(dy, dy, d2);
      d2 = _mm256_fmadd_pd(dz, dz, d2);
      const __m256d k = exp_pd(_mm256_mul_pd(d2, neg_inv));
      sx = _mm256_fmadd_pd(k, _mm256_loadu_pd(&v.x[j]), sx);
      sy = _mm256_fmadd_pd(k, _mm256_loadu_pd(&v.y[j]), sy);
      sz = _mm256_fmadd_pd(k, _mm256_loadu_pd(&v.z[j]), sz);
    }
    double rx = hsum(sx), ry = hsum(sy), rz = hsum(sz);
    for (size_t j = nb4; j < nb; ++j) {
      const double dx = a.x[i] - b.x[j], dy = a.y[i] - b.y[j], dz = a.z[i] - b.z[j];
      const double k = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_sigma2);
      rx += k * v.x[j];
      ry += k * v.y[j];
      rz += k * v.z[j];
    }
    out.x[i] = rx;
    out.y[i] = ry;
    out.z[i] = rz;
  }
}

void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out) {
  const auto na = static_cast<long long>(a.size());
  const size_t nb = b.size();
  const size_t nb4 = nb & ~size_t{3};
  out.resize(a.size());
  const double scale = -2.0 * inv_sigma2;
  const __m256d neg_inv = _mm256_set1_pd(-inv_sigma2);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < na; ++ii) {
    const auto i = static_cast<size_t>(ii);
    const __m256d ax = _mm256_set1_pd(a.x[i]), ay = _mm256_set1_pd(a.y[i]), az = _mm256_set1_pd(a.z[i]);
    const __m256d ux = _mm256_set1_pd(u.x[i]), uy = _mm256_set1_pd(u.y[i]), uz = _mm256_set1_pd(u.z[i]);
    __m256d sx = _mm256_setzero_pd(), sy = _mm256_setzero_pd(), sz = _mm256_setzero_pd();
    for (size_t j = 0; j < nb4; j += 4) {
      const __m256d dx = _mm256_sub_pd(ax, _mm256_loadu_pd(&b.x[j]));
      const __m256d dy = _mm256_sub_pd(ay, _mm256_loadu_pd(&b.y[j]));
      const __m256d dz = _mm256_sub_pd(az, _mm256_loadu_pd(&b.z[j]));
      __m256d d2 = _mm256_mul_pd(dx, dx);
      d2 = _mm256_fmadd_pd(dy, dy, d2);
      d2 = _mm256_fmadd_pd(dz, dz, d2);
      __m256d dot = _mm256_mul_pd(ux, _mm256_loadu_pd(&v.x[j]));
      dot = _mm256_fmadd_pd(uy, _mm256_loadu_pd(&v.y[j]), dot);
      dot = _mm256_fmadd_pd(uz, _mm256_loadu_pd(&v.z[j]), dot);
      const __m256d k = _mm256_mul_pd(exp_pd(_mm256_mul_pd(d2, neg_inv)), dot);
      sx = _mm256_fmadd_pd(k, dx, sx);
      sy = _mm256_fmadd_pd(k, dy, sy);
      sz = _mm256_fmadd_pd(k, dz, sz);
    }
    double rx = hsum(sx), ry = hsum(sy), rz = hsum(sz);
    for (size_t j = nb4; j < nb; ++j) {
      const double dx = a.x[i] - b.x[j], dy = a.y[i] - b.y[j], dz = a.z[i] - b.z[j];
      const double k = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_sigma2) *
                       (u.x[i] * v.x[j] + u.y[i] * v.y[j] + u.z[i] * v.z[j]);
      rx += k * dx;
      ry += k * dy;
      rz += k * dz;
    }
    out.x[i] = scale * rx;
    out.y[i] = scale * ry;
    out.z[i] = scale * rz;
  }
}

}  // namespace qflow::simd::avx2
