#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qflow/bfor.hpp"
#include "qflow/field.hpp"
#include "qflow/types.hpp"

namespace qflow::phantom {

struct Shell {
  double b = 0.0;  // s/mm^2
  double q = 0.0;  // mm^-1
  std::vector<Vec3> directions;
};

struct EncodingScheme {
  std::vector<Shell> shells;

  size_t size() const;
  /// Flattened q-vectors (q * u) in shell order; b = 0 samples map to 0.
  std::vector<Vec3> qvectors() const;
  std::vector<double> bvalues() const;
  /// Shells with b > 0.
  std::vector<int> weighted_shells() const;
};

/// n unit vectors spread over the sphere by antipodal electrostatic repulsion.
std::vector<Vec3> electrostatic_directions(int n, std::uint64_t seed);

/// Five-shell HYDI scheme: 7 b=0 samples and shells (6,300), (21,1200),
/// (24,2700), (24,4800), (50,7500), q = 15.79 k mm^-1.
EncodingScheme hydi_scheme(std::uint64_t seed = 2011);

/// Scheme with `shells` equally spaced q-shells up to q_max and `dirs`
/// directions each, plus one b = 0 sample. Well-posed for full-basis fits.
EncodingScheme dense_scheme(int shells, int dirs, double q_max = 78.95, std::uint64_t seed = 7);

/// Build a scheme from explicit (q-vector, b) rows, grouping equal b values.
EncodingScheme scheme_from_rows(std::span<const Vec3> q, std::span<const double> b);

struct Tensor {
  Mat3 D;  // mm^2/s
  double fraction = 1.0;
};

/// E = sum_k f_k exp(-b u^T D_k u) at each sample of the scheme.
std::vector<double> tensor_mixture_signal(const EncodingScheme& scheme, std::span<const Tensor> tensors);

/// Cylindrically symmetric tensor with principal axis `dir`.
Mat3 fiber_tensor(const Vec3& dir, double lambda_par = 1.7e-3, double lambda_perp = 0.3e-3);

enum class Kind { Single, Crossing };

struct TemplateOptions {
  Kind kind = Kind::Crossing;
  int size = 16;
  double spacing = 2.0;
  double ball_radius = 13.0;  // mm
  double tube_radius = 4.0;   // mm
  double edge_width = 1.0;    // mm, logistic partial-volume edge; 0 gives hard edges
  double ridge = 1e-6;
};

struct Template {
  field::CoefficientField field;
  field::ScalarField fiber_mask;  // 1 inside tracts
};

/// Ball of isotropic tissue in free water, with one curved tract (Single) or
/// two orthogonal straight tracts (Crossing). Compartment fractions fall off
/// with logistic edges. Signals are sampled on `scheme` and fitted voxelwise;
/// the boundary vector is the fit of free water.
Template make_template(const TemplateOptions& opt, const bfor::BasisSpec& spec, const EncodingScheme& scheme);

/// Swirl about the z axis through the grid center:
/// phi(x) = c + Rz(theta0 exp(-|x-c|^2 / s^2)) (x - c).
field::DeformationField swirl(const field::Grid& grid, double theta0, double s);

/// Smooth random diffeomorphism from Gaussian-smoothed random momenta flowed
/// by forward Euler; max displacement scaled to `amplitude` mm.
field::DeformationField random_warp(const field::Grid& grid, double amplitude, double sigma, std::uint64_t seed);

struct Subject {
  field::CoefficientField field;
  field::DeformationField phi;  // ground truth: field = phi . template (+ noise)
};

struct EnsembleOptions {
  double warp_amplitude = 4.0;  // mm
  double warp_sigma = 8.0;      // mm
  double noise_sd = 0.0;        // per coefficient
};

/// n subjects from one template; deterministic per seed. Folding warps are
/// regenerated with halved amplitude up to three times.
std::vector<Subject> synthetic_ensemble(const field::CoefficientField& tmpl, int n, const EnsembleOptions& opt,
                                        std::uint64_t seed);

}  // namespace qflow::phantom
