#pragma once

#include <vector>

#include "qflow/types.hpp"

namespace qflow::quad {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [a, b]; exact for polynomials of degree 2n-1.
Rule1D gauss_legendre(int n, double a = -1.0, double b = 1.0);

struct SphereRule {
  std::vector<Vec3> points;
  std::vector<double> weights;  // sum to 4 pi
};

/// Gauss-Legendre in cos(theta) times the uniform rule in phi. Integrates every
/// spherical polynomial of total degree <= degree exactly.
SphereRule sphere_product_rule(int degree);

}  // namespace qflow::quad
