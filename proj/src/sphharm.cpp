#include "qflow/sphharm.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "qflow/error.hpp"

namespace qflow::sh {

namespace {

constexpr int kTableSize = kMaxOrder + 1;

// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!), with the sqrt(2) of the real basis folded in for m > 0.
struct NormTable {
  std::array<std::array<double, kTableSize>, kTableSize> value{};
  NormTable() {
    for (int l = 0; l <= kMaxOrder; ++l) {
      for (int m = 0; m <= l; ++m) {
        double ratio = 1.0;
        for (int k = l - m + 1; k <= l + m; ++k) ratio /= static_cast<double>(k);
        double n = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * ratio);
        value[l][m] = (m == 0) ? n : std::numbers::sqrt2 * n;
      }
    }
  }
};

const NormTable& norms() {
  static const NormTable table;
  return table;
}

}  // namespace

int sh_count(int L) {
  if (L < 0 || L % 2 != 0 || L > kMaxOrder) {
    throw Error(ErrorKind::InvalidOrder,
                "SH truncation order must be even and in [0, " + std::to_string(kMaxOrder) +
                    "], got " + std::to_string(L));
  }
  return (L + 1) * (L + 2) / 2;
}

ShIndex index_of(int j) {
  if (j < 0) throw Error(ErrorKind::Domain, "negative SH index");
  int l = 0;
  while (degree_offset(l + 2) <= j) l += 2;
  return {l, j - linear_index(l, 0)};
}

void sh_eval_all(int L, const Vec3& u, std::span<double> out) {
  const auto& nt = norms().value;
  const double x = u.x(), y = u.y(), z = u.z();

  // (x + iy)^m carries the sin^m(theta) factor, so the reduced Legendre
  // functions below are plain polynomials in z.
  std::array<double, kTableSize> cm{}, sm{};
  cm[0] = 1.0;
  sm[0] = 0.0;
  for (int m = 1; m <= L; ++m) {
    cm[m] = cm[m - 1] * x - sm[m - 1] * y;
    sm[m] = cm[m - 1] * y + sm[m - 1] * x;
  }

  std::array<double, kTableSize> p{};  // reduced P_l^m(z) for the current m, indexed by l
  double pmm = 1.0;                     // (2m-1)!!
  for (int m = 0; m <= L; ++m) {
    if (m > 0) pmm *= static_cast<double>(2 * m - 1);
    p[m] = pmm;
    if (m + 1 <= L) p[m + 1] = z * static_cast<double>(2 * m + 1) * pmm;
    for (int l = m + 2; l <= L; ++l) {
      p[l] = (static_cast<double>(2 * l - 1) * z * p[l - 1] -
              static_cast<double>(l + m - 1) * p[l - 2]) /
             static_cast<double>(l - m);
    }
    for (int l = (m % 2 == 0 ? m : m + 1); l <= L; l += 2) {
      const double base = nt[l][m] * p[l];
      if (m == 0) {
        out[linear_index(l, 0)] = base;
      } else {
        out[linear_index(l, m)] = base * cm[m];
        out[linear_index(l, -m)] = base * sm[m];
      }
    }
  }
}

double sh_eval(ShIndex j, const Vec3& u) {
  if (j.l < 0 || j.l % 2 != 0 || j.l > kMaxOrder || j.m < -j.l || j.m > j.l) {
    throw Error(ErrorKind::InvalidOrder, "invalid SH index (l=" + std::to_string(j.l) +
                                             ", m=" + std::to_string(j.m) + ")");
  }
  if (std::abs(u.norm() - 1.0) > 1e-10) {
    throw Error(ErrorKind::Domain, "SH argument must be a unit vector");
  }
  std::array<double, (kMaxOrder + 1) * (kMaxOrder + 2) / 2> buf{};
  sh_eval_all(j.l, u, buf);
  return buf[linear_index(j.l, j.m)];
}

}  // namespace qflow::sh
