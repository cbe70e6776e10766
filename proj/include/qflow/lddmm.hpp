#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qflow/field.hpp"
#include "qflow/simd/kernels.hpp"
#include "qflow/types.hpp"
#include "qflow/wigner.hpp"

namespace qflow::lddmm {

/// sum_j exp(-|a_i - b_j|^2 / sigma^2) v_j for every a_i.
std::vector<Vec3> kernel_apply(std::span<const Vec3> a, std::span<const Vec3> b, std::span<const Vec3> vb,
                               double sigma);

/// Grid voxels whose indices are multiples of stride on every axis.
std::vector<Vec3> control_points(const field::Grid& grid, int stride);

/// Dirac momenta alpha[t][i] at moving control points, one set per Euler step.
struct MomentumTrajectory {
  int steps = 10;
  double sigma = 6.0;
  int stride = 1;
  std::vector<Vec3> control;
  std::vector<std::vector<Vec3>> alpha;

  static MomentumTrajectory zeros(const field::Grid& grid, int steps, double sigma, int stride);
  size_t points() const noexcept { return control.size(); }
  double dt() const noexcept { return 1.0 / steps; }

  void axpy(double a, const MomentumTrajectory& x);
  double dot(const MomentumTrajectory& other) const;
  bool is_zero() const;
};

/// Control and grid-point trajectories; index t runs over 0..steps.
struct Flow {
  field::Grid grid;
  std::vector<simd::Soa3> q;  // control points
  std::vector<simd::Soa3> p;  // grid points carried passively

  field::DeformationField phi(int t) const;
  field::DeformationField phi1() const { return phi(static_cast<int>(p.size()) - 1); }
};

/// Forward Euler: q_{t+1} = q_t + dt K(q_t, q_t) alpha_t, grid points likewise.
/// Throws Divergence on a non-finite trajectory.
Flow flow_forward(const MomentumTrajectory& m, const field::Grid& grid);

/// <alpha_t, K(q_t, q_t) alpha_t> for each step.
std::vector<double> kinetic_per_step(const MomentumTrajectory& m, const Flow& flow);
/// Time integral of kinetic_per_step.
double kinetic_energy(const MomentumTrajectory& m, const Flow& flow);

/// Target-space matching energy: squared coefficient distance between the
/// group action of atlas by phi1 and the subject, times voxel volume.
double matching_energy(const field::CoefficientField& atlas, const field::CoefficientField& subject,
                       const field::DeformationField& phi1);

struct EnergyOptions {
  bool with_term_B = true;
  double delta = 1e-4;                      // rotation-derivative step
  const field::ScalarField* weight = nullptr;  // spatial weight evaluated at phi1(x)
  const std::vector<Mat3>* frozen_rotations = nullptr;  // per-voxel R_x instead of polar(D phi1)
};

/// Matching term written in atlas coordinates,
///   E = sum_x w(phi1(x)) |M(R_x) c_atlas(x) - c_subject(phi1(x))|^2 |D phi1(x)| dv,
/// with R_x the finite-strain rotation of D phi1 at x. Folded maps give +inf.
class MatchingTerm {
 public:
  MatchingTerm(const field::CoefficientField& atlas, const field::CoefficientField& subject,
               EnergyOptions opt = {});

  double energy(const field::DeformationField& phi1) const;
  /// Energy and its gradient with respect to every phi1(x). Without Term B
  /// the rotations are held fixed while differentiating.
  double energy_and_gradient(const field::DeformationField& phi1, std::vector<Vec3>& grad) const;

  const EnergyOptions& options() const noexcept { return opt_; }

 private:
  double evaluate(const field::DeformationField& phi1, std::vector<Vec3>* grad) const;

  const field::CoefficientField& atlas_;
  const field::CoefficientField& subject_;
  EnergyOptions opt_;
  wigner::RotationDerivative drot_;
};

/// Finite-strain rotation of D phi at every voxel.
std::vector<Mat3> finite_strain_rotations(const field::DeformationField& phi);

/// Gradient of the matching term with respect to phi1 on the grid.
std::vector<Vec3> gradient_E(const field::CoefficientField& atlas, const field::CoefficientField& subject,
                             const field::DeformationField& phi1, const EnergyOptions& opt = {});

/// Costates of the control and grid trajectories; index t runs over 0..steps.
struct Adjoint {
  std::vector<simd::Soa3> eta_q;
  std::vector<simd::Soa3> eta_p;
};

/// Backward recursion of the discrete adjoint. The terminal grid costate is
/// lambda * gradE; the kinetic term enters through alpha.
Adjoint adjoint_backward(const MomentumTrajectory& m, const Flow& flow, std::span<const Vec3> gradE,
                         double lambda);

/// Euclidean gradient of J with respect to alpha[t][i].
MomentumTrajectory objective_gradient(const MomentumTrajectory& m, const Flow& flow, const Adjoint& adj);

/// Descent direction in the kernel metric: 2 alpha + eta_q + (grid costate
/// gathered onto the control lattice).
MomentumTrajectory kernel_gradient(const MomentumTrajectory& m, const Flow& flow, const Adjoint& adj);

struct Objective {
  double J = 0.0;
  double kinetic = 0.0;
  double E = 0.0;
};

/// J = kinetic + lambda * E for a momentum trajectory.
Objective evaluate_objective(const MomentumTrajectory& m, const field::Grid& grid, const MatchingTerm& term,
                             double lambda);

struct RegisterParams {
  double sigma_v = 6.0;  // mm
  double lambda = 1e-3;
  int steps = 10;
  int max_iter = 100;
  double tol = 1e-4;
  int stride = 2;
  bool with_term_B = true;
  double delta = 1e-4;
  int max_line_evals = 20;
  double line_tol = 0.05;  // golden-section stop, relative to the bracket
  double initial_step_voxels = 2.0;
  const field::ScalarField* weight = nullptr;
};

struct IterationRecord {
  int iter = 0;
  double J = 0.0;
  double metric = 0.0;  // time-integrated <m, K m>
  double E = 0.0;
  double step = 0.0;
};

enum class Status { Converged, MaxIterations, LineSearchExhausted };
const char* to_string(Status s);

struct RegisterResult {
  MomentumTrajectory momentum;
  field::DeformationField phi1;
  std::vector<IterationRecord> report;
  Status status = Status::Converged;
};

/// Nonlinear conjugate gradient (Polak-Ribiere, restarts) with golden-section
/// line search on the momenta. Accepted iterates never increase J.
RegisterResult register_fields(const field::CoefficientField& atlas, const field::CoefficientField& subject,
                               const RegisterParams& params,
                               const std::function<void(const IterationRecord&)>& on_iter = {});

}  // namespace qflow::lddmm
