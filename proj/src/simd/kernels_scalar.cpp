#include <cmath>

#include "qflow/simd/kernels.hpp"

namespace qflow::simd::scalar {

void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out) {
  const auto na = static_cast<long long>(a.size());
  const size_t nb = b.size();
  out.resize(a.size());
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < na; ++ii) {
    const auto i = static_cast<size_t>(ii);
    double sx = 0.0, sy = 0.0, sz = 0.0;
    for (size_t j = 0; j < nb; ++j) {
      const double dx = a.x[i] - b.x[j], dy = a.y[i] - b.y[j], dz = a.z[i] - b.z[j];
      const double k = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_sigma2);
      sx += k * v.x[j];
      sy += k * v.y[j];
      sz += k * v.z[j];
    }
    out.x[i] = sx;
    out.y[i] = sy;
    out.z[i] = sz;
  }
}

void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out) {
  const auto na = static_cast<long long>(a.size());
  const size_t nb = b.size();
  out.resize(a.size());
  const double scale = -2.0 * inv_sigma2;
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < na; ++ii) {
    const auto i = static_cast<size_t>(ii);
    double sx = 0.0, sy = 0.0, sz = 0.0;
    for (size_t j = 0; j < nb; ++j) {
      const double dx = a.x[i] - b.x[j], dy = a.y[i] - b.y[j], dz = a.z[i] - b.z[j];
      const double k = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_sigma2) *
                       (u.x[i] * v.x[j] + u.y[i] * v.y[j] + u.z[i] * v.z[j]);
      sx += k * dx;
      sy += k * dy;
      sz += k * dz;
    }
    out.x[i] = scale * sx;
    out.y[i] = scale * sy;
    out.z[i] = scale * sz;
  }
}

}  // namespace qflow::simd::scalar
