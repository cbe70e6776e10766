#pragma once

#include <vector>

#include "qflow/field.hpp"
#include "qflow/phantom.hpp"

namespace qflow::evalx {

/// Per weighted shell of the scheme: sum over masked voxels and shell
/// directions of (S_a - S_b)^2, S reconstructed from the coefficients.
/// An empty mask pointer means every voxel.
std::vector<double> shell_sq_diff(const field::CoefficientField& a, const field::CoefficientField& b,
                                  const phantom::EncodingScheme& scheme, const field::ScalarField* mask = nullptr);

/// KL(p||q) + KL(q||p) after flooring both at `floor` and renormalizing.
double symmetric_kl(std::span<const double> p, std::span<const double> q, double floor = 1e-12);

/// Mean over masked voxels of the symmetrized KL divergence between EAPs.
double skl_divergence(const field::CoefficientField& a, const field::CoefficientField& b,
                      const field::ScalarField* mask = nullptr, int grid_size = 17);

}  // namespace qflow::evalx
