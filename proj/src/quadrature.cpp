#include "qflow/quadrature.hpp"

#include <cmath>
#include <numbers>

#include "qflow/error.hpp"

namespace qflow::quad {

Rule1D gauss_legendre(int n, double a, double b) {
  if (n < 1) throw Error(ErrorKind::Domain, "Gauss-Legendre rule needs n >= 1");
  Rule1D rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double half = 0.5 * (b - a), mid = 0.5 * (b + a);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Tricomi initial guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      // recompute derivative at the converged node
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = mid - half * x;
    rule.nodes[n - 1 - i] = mid + half * x;
    rule.weights[i] = rule.weights[n - 1 - i] = w * half;
  }
  return rule;
}

SphereRule sphere_product_rule(int degree) {
  if (degree < 0) throw Error(ErrorKind::Domain, "quadrature degree must be >= 0");
  const int nz = degree / 2 + 1;
  const int nphi = degree + 1;
  const Rule1D gl = gauss_legendre(nz);
  SphereRule rule;
  rule.points.reserve(static_cast<size_t>(nz) * nphi);
  rule.weights.reserve(static_cast<size_t>(nz) * nphi);
  const double dphi = 2.0 * std::numbers::pi / nphi;
  for (int i = 0; i < nz; ++i) {
    const double z = gl.nodes[i];
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    for (int k = 0; k < nphi; ++k) {
      // half-step offset keeps the grid off the x-z plane
      const double phi = (k + 0.5) * dphi;
      rule.points.emplace_back(s * std::cos(phi), s * std::sin(phi), z);
      rule.weights.push_back(gl.weights[i] * dphi);
    }
  }
  return rule;
}

}  // namespace qflow::quad
