#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "qflow/types.hpp"

namespace qflow::wigner {

/// Block-diagonal rotation operator on real symmetric harmonic coefficients.
/// Blocks satisfy Y(R u) = M Y(u) per degree, so applying M to a coefficient
/// vector c yields the coefficients of u -> f(R^-1 u), and M(R1 R2) = M(R1) M(R2).
class WignerBlock {
 public:
  WignerBlock() = default;
  WignerBlock(const Mat3& rotation, int L, std::vector<Eigen::MatrixXd> blocks)
      : rotation_(rotation), L_(L), blocks_(std::move(blocks)) {}

  static WignerBlock identity(int L);

  const Mat3& rotation() const noexcept { return rotation_; }
  int order() const noexcept { return L_; }
  /// Dense (2l+1) x (2l+1) block of even degree l.
  const Eigen::MatrixXd& block(int l) const { return blocks_[static_cast<size_t>(l / 2)]; }
  /// The full N_Y x N_Y matrix (zero outside the diagonal blocks).
  Eigen::MatrixXd dense() const;

  /// out = M in for one N_Y-length run of coefficients.
  void apply(std::span<const double> in, std::span<double> out) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  int L_ = 0;
  std::vector<Eigen::MatrixXd> blocks_;
};

/// Build M(R); rejects R that is not a proper rotation within 1e-8.
WignerBlock wigner_from_rotation(const Mat3& R, int L);

/// Same construction without validation; R must already be a rotation.
WignerBlock wigner_from_rotation_unchecked(const Mat3& R, int L);

/// Apply M(R) to every radial block of a coefficient vector of length Nb * N_Y.
std::vector<double> reorient(std::span<const double> c, const WignerBlock& w);
void reorient(std::span<const double> c, const WignerBlock& w, std::span<double> out);

Mat3 skew(const Vec3& v);
/// Rodrigues exponential of skew(v).
Mat3 exp_so3(const Vec3& v);

/// Orthogonal polar factor (J J^T)^{-1/2} J. Throws Folding if det J <= 0.
Mat3 finite_strain_rotation(const Mat3& jac);

/// F = -R^T (tr(S) I - S)^{-1} R with S = (J J^T)^{1/2}.
/// Throws DegenerateJacobian when tr(S) I - S is singular.
Mat3 finite_strain_differential(const Mat3& jac, const Mat3& rotation);

/// Right tangent w of the rotation change under J -> J + eps H, i.e.
/// d/deps R(J + eps H) = R skew(w), where w = F sum_i r_i x h_i with r_i
/// and h_i the i-th rows of R and H.
Vec3 rotation_variation(const Mat3& F, const Mat3& rotation, const Mat3& H);

/// Forward-difference derivative of rotated coefficients with respect to a
/// small left rotation exp(skew(mu)) R. The three perturbation operators are
/// built once and shared by every voxel.
class RotationDerivative {
 public:
  RotationDerivative(int L, double delta = 1e-4);

  double delta() const noexcept { return delta_; }
  int order() const noexcept { return L_; }
  const WignerBlock& perturbation(int axis) const { return perturb_[static_cast<size_t>(axis)]; }

  /// Row i of out = (M(exp(delta U_i)) c_hat - c_hat) / delta.
  void apply(std::span<const double> c_hat, Eigen::Ref<Eigen::Matrix<double, 3, Eigen::Dynamic>> out) const;

 private:
  int L_;
  double delta_;
  std::vector<WignerBlock> perturb_;
};

/// One-shot form of RotationDerivative::apply.
Eigen::Matrix<double, 3, Eigen::Dynamic> rotated_coeff_gradient(std::span<const double> c_hat,
                                                                int L, double delta = 1e-4);

}  // namespace qflow::wigner
