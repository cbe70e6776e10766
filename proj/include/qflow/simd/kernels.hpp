#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qflow/types.hpp"

namespace qflow::simd {

/// Structure-of-arrays 3-vectors, the layout every kernel sum consumes.
struct Soa3 {
  std::vector<double> x, y, z;

  Soa3() = default;
  explicit Soa3(size_t n) : x(n, 0.0), y(n, 0.0), z(n, 0.0) {}
  explicit Soa3(std::span<const Vec3> v);

  size_t size() const noexcept { return x.size(); }
  Vec3 operator[](size_t i) const { return {x[i], y[i], z[i]}; }
  void set(size_t i, const Vec3& v) {
    x[i] = v.x();
    y[i] = v.y();
    z[i] = v.z();
  }
  void resize(size_t n) {
    x.assign(n, 0.0);
    y.assign(n, 0.0);
    z.assign(n, 0.0);
  }
  std::vector<Vec3> to_vec3() const;
};

enum class Isa { Scalar, Avx2 };

/// True when the CPU and the build both provide the AVX2+FMA variant.
bool avx2_available();
/// Variant used by the dispatching entry points. Defaults to the best
/// available; QFLOW_SIMD=scalar in the environment forces the reference path.
Isa active_isa();
void set_isa(Isa isa);
const char* isa_name(Isa isa);

/// out_i = sum_j exp(-|a_i - b_j|^2 * inv_sigma2) v_j
void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out);

/// out_i = -2 inv_sigma2 sum_j exp(-|a_i - b_j|^2 * inv_sigma2) (u_i . v_j) (a_i - b_j)
/// The transpose of the point-position derivative of a Gaussian kernel sum.
void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out);

namespace scalar {
void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out);
void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out);
}  // namespace scalar

namespace avx2 {
void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out);
void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out);
/// Vectorized exp used by the kernels, exposed for testing (4 lanes).
void exp4(const double* in, double* out);
}  // namespace avx2

}  // namespace qflow::simd
