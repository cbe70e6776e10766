#include <atomic>
#include <cstdlib>
#include <cstring>

#include "qflow/simd/kernels.hpp"

namespace qflow::simd {

Soa3::Soa3(std::span<const Vec3> v) : x(v.size()), y(v.size()), z(v.size()) {
  for (size_t i = 0; i < v.size(); ++i) set(i, v[i]);
}

std::vector<Vec3> Soa3::to_vec3() const {
  std::vector<Vec3> out(size());
  for (size_t i = 0; i < size(); ++i) out[i] = (*this)[i];
  return out;
}

bool avx2_available() {
#if defined(QFLOW_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

namespace {

Isa initial_isa() {
  const char* env = std::getenv("QFLOW_SIMD");
  if (env && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
  return avx2_available() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::Avx2 && !avx2_available()) isa = Isa::Scalar;
  current().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

void gaussian_apply(const Soa3& a, const Soa3& b, const Soa3& v, double inv_sigma2, Soa3& out) {
#ifdef QFLOW_HAVE_AVX2
  if (active_isa() == Isa::Avx2) return avx2::gaussian_apply(a, b, v, inv_sigma2, out);
#endif
  scalar::gaussian_apply(a, b, v, inv_sigma2, out);
}

void weighted_displacement(const Soa3& a, const Soa3& b, const Soa3& u, const Soa3& v, double inv_sigma2,
                           Soa3& out) {
#ifdef QFLOW_HAVE_AVX2
  if (active_isa() == Isa::Avx2) return avx2::weighted_displacement(a, b, u, v, inv_sigma2, out);
#endif
  scalar::weighted_displacement(a, b, u, v, inv_sigma2, out);
}

}  // namespace qflow::simd
