#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qflow/sphharm.hpp"
#include "qflow/types.hpp"

namespace qflow::bfor {

/// Spherical Bessel function of the first kind, j_l(x).
double sph_bessel(int l, double x);

/// n-th positive root (n >= 1) of j_l.
double bessel_root(int n, int l);

/// Truncation orders and radial support of the Bessel-Fourier basis, plus the
/// root and normalization tables derived from them. Immutable once built.
class BasisSpec {
 public:
  BasisSpec() = default;
  BasisSpec(int L, int Nb, double tau);

  int order() const noexcept { return L_; }
  int radial_order() const noexcept { return Nb_; }
  double tau() const noexcept { return tau_; }
  int sh_terms() const noexcept { return n_sh_; }
  /// Coefficient count N_b * N_Y.
  int size() const noexcept { return Nb_ * n_sh_; }

  /// Root alpha_{n,l}; n is 1-based, l even.
  double root(int n, int l) const { return roots_[idx(n, l)]; }
  /// Prefactor 2 sqrt(alpha) / (sqrt(pi tau^3) J_{l+3/2}(alpha)).
  double norm(int n, int l) const { return norms_[idx(n, l)]; }

  /// Channel position of (n, j): n-major, N_Y contiguous entries per radial index.
  int channel(int n, int j) const noexcept { return (n - 1) * n_sh_ + j; }

  friend bool operator==(const BasisSpec& a, const BasisSpec& b) {
    return a.L_ == b.L_ && a.Nb_ == b.Nb_ && a.tau_ == b.tau_;
  }

 private:
  size_t idx(int n, int l) const { return static_cast<size_t>(n - 1) * (L_ / 2 + 1) + l / 2; }

  int L_ = 0;
  int Nb_ = 1;
  double tau_ = 1.0;
  int n_sh_ = 1;
  std::vector<double> roots_;
  std::vector<double> norms_;
};

/// Number of individual basis-function evaluations performed since the last
/// reset, across all threads. Registration code must leave this untouched.
std::uint64_t basis_eval_count() noexcept;
void reset_basis_eval_count() noexcept;

/// Psi_{nj}(q) for a single term (n is 1-based). Throws Domain if |q| >= tau.
double basis_eval(const BasisSpec& spec, int n, sh::ShIndex j, const Vec3& q);

/// All spec.size() basis values at q, in channel order.
void basis_row(const BasisSpec& spec, const Vec3& q, std::span<double> out);

/// Rows of basis_row for each q.
Eigen::MatrixXd design_matrix(const BasisSpec& spec, std::span<const Vec3> qs);

/// Sum_{nj} c_{nj} Psi_{nj}(q).
double reconstruct(std::span<const double> c, const BasisSpec& spec, const Vec3& q);

/// Regularization weights l^2 (l+1)^2 per channel.
Eigen::VectorXd laplace_beltrami_weights(const BasisSpec& spec);

struct Sample {
  Vec3 q;
  double value;
};

struct FitResult {
  Eigen::VectorXd coefficients;
  double rms_residual = 0.0;
};

/// Ridge-regularized least-squares fitter for one fixed set of q samples. The
/// solution operator is factored once; fit() is a single matrix-vector product.
class Fitter {
 public:
  Fitter(const BasisSpec& spec, std::span<const Vec3> qs, double ridge);

  FitResult fit(std::span<const double> values) const;
  int sample_count() const noexcept { return static_cast<int>(design_.rows()); }
  const BasisSpec& spec() const noexcept { return spec_; }
  const Eigen::MatrixXd& design() const noexcept { return design_; }

 private:
  BasisSpec spec_;
  Eigen::MatrixXd design_;
  Eigen::MatrixXd solve_;  // size() x samples
};

FitResult fit_coefficients(std::span<const Sample> samples, const BasisSpec& spec, double ridge);

/// sqrt(voxel_volume * sum c^2) over a flat coefficient array.
double l2_norm(std::span<const double> coefficients, double voxel_volume);

/// Centered odd-sized Cartesian q-grid sampled from the coefficients and
/// Fourier transformed to displacement space. Signal outside |q| < tau is zero.
class EapTransform {
 public:
  EapTransform(const BasisSpec& spec, int grid_size, double q_extent);

  int grid_size() const noexcept { return g_; }
  /// Displacement-grid spacing in mm.
  double displacement_spacing() const noexcept { return dr_; }
  const BasisSpec& spec() const noexcept { return spec_; }

  /// Probability mass per displacement cell, x-fastest, summing to 1.
  std::vector<double> pdf(std::span<const double> c) const;

 private:
  BasisSpec spec_;
  int g_;
  double dq_;
  double dr_;
  std::vector<int> inside_;  // flat grid indices with |q| < tau
  Eigen::MatrixXd samples_;  // inside_.size() x spec.size()
  Eigen::MatrixXcd dft_;     // g x g
};

/// One-shot form of EapTransform::pdf.
std::vector<double> eap_grid(std::span<const double> c, const BasisSpec& spec, int grid_size,
                             double q_extent);

struct ScalarFeatures {
  double po = 0.0;   // zero-displacement density, mm^-3
  double msd = 0.0;  // mean squared displacement, um^2
  std::vector<double> gfa;
};

/// Generalized fractional anisotropy (std / rms) of weighted samples.
double gfa(std::span<const double> values, std::span<const double> weights);

ScalarFeatures scalar_features(std::span<const double> c, const EapTransform& eap,
                               std::span<const double> radii_um);
ScalarFeatures scalar_features(std::span<const double> c, const BasisSpec& spec,
                               std::span<const double> radii_um, int grid_size = 35);

}  // namespace qflow::bfor
