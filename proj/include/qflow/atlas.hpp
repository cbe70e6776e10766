#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qflow/field.hpp"
#include "qflow/lddmm.hpp"

namespace qflow::atlas {

/// Mean target-space matching energy of the atlas against each subject.
double update_sigma2(std::span<const field::CoefficientField> subjects, const field::CoefficientField& atlas,
                     std::span<const field::DeformationField> phis);

/// Subject pulled back into atlas coordinates: M(R_y)^T c(phi(y)), R_y the
/// finite-strain rotation of D phi(y).
field::CoefficientField pullback(const field::CoefficientField& subject, const field::DeformationField& phi);

struct WeightedMean {
  field::CoefficientField mean;
  field::ScalarField weights;  // sum_i |D phi_i|
};

/// Jacobian-weighted mean of the pulled-back subjects.
WeightedMean weighted_mean_field(std::span<const field::CoefficientField> subjects,
                                 std::span<const field::DeformationField> phis);

/// Registration of the hyperatlas to the weighted mean with matching weight
/// weights(y) / sigma2. params.lambda and params.weight are overridden.
lddmm::RegisterResult modified_register(const field::CoefficientField& hyperatlas,
                                        const field::CoefficientField& target_mean,
                                        const field::ScalarField& weights, double sigma2,
                                        lddmm::RegisterParams params);

struct AtlasParams {
  double sigma_v = 12.0;    // hyperatlas-to-atlas kernel, mm
  double sigma_vpi = 10.0;  // atlas-to-subject kernel, mm
  int iterations = 10;
  /// Subject registrations use registration.lambda; sigma_v and weight are
  /// set per stage. The hyperatlas registration weights the mean by
  /// alpha / sigma^2.
  lddmm::RegisterParams registration = [] {
    lddmm::RegisterParams p;
    p.lambda = 1e-5;
    return p;
  }();
};

struct SubjectState {
  lddmm::MomentumTrajectory momentum;
  field::DeformationField phi;
  double metric = 0.0;  // sqrt of the kinetic energy
};

struct IterationStats {
  int iteration = 0;
  double sigma2 = 0.0;
  double metric_mean = 0.0;
  double metric_std = 0.0;
};

struct AtlasState {
  field::CoefficientField hyperatlas;
  lddmm::MomentumTrajectory m0;
  field::CoefficientField atlas;
  double sigma2 = 0.0;
  int iteration = 0;
  std::vector<SubjectState> per_subject;
  std::vector<IterationStats> history;
  bool aborted = false;
  std::string abort_reason;
};

/// EM atlas estimation. Each iteration registers the current atlas to every
/// subject, forms the weighted mean, updates sigma^2 and re-registers the
/// hyperatlas to the mean. A failed subject registration stops the loop and
/// returns the partial state with `aborted` set.
AtlasState estimate_atlas(std::span<const field::CoefficientField> subjects,
                          const field::CoefficientField& hyperatlas, const AtlasParams& params,
                          const std::function<void(const AtlasState&)>& on_iteration = {});

}  // namespace qflow::atlas
