#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qflow/bfor.hpp"
#include "qflow/types.hpp"

namespace qflow::field {

/// Regular voxel grid. Voxel (i,j,k) sits at origin + (i,j,k) * spacing.
struct Grid {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();

  Grid() = default;
  Grid(std::array<int, 3> d, const Vec3& h, const Vec3& o = Vec3::Zero());

  size_t count() const noexcept {
    return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) * static_cast<size_t>(dims[2]);
  }
  size_t index(int i, int j, int k) const noexcept {
    return static_cast<size_t>(i) + static_cast<size_t>(dims[0]) * (static_cast<size_t>(j) + static_cast<size_t>(dims[1]) * static_cast<size_t>(k));
  }
  std::array<int, 3> ijk(size_t idx) const noexcept;
  Vec3 point(int i, int j, int k) const noexcept {
    return origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
  }
  Vec3 point(size_t idx) const noexcept {
    const auto c = ijk(idx);
    return point(c[0], c[1], c[2]);
  }
  /// Continuous voxel coordinates of a physical point; snapped to the nearest
  /// integer when within 1e-9 so voxel centers interpolate exactly.
  Vec3 to_voxel(const Vec3& x) const noexcept;
  Vec3 center() const noexcept;
  double voxel_volume() const noexcept { return spacing.prod(); }
  double min_spacing() const noexcept { return spacing.minCoeff(); }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
  }
};

/// Coefficients of an isotropic free-water signal exp(-b d) projected onto
/// the l = 0 basis functions. Used as the value outside every field.
std::vector<double> free_water_vector(const bfor::BasisSpec& spec, double diffusivity = 3e-3);

/// b-value (s/mm^2) per unit |q|^2 (mm^-2) for the HYDI diffusion time.
double b_per_q2();

class CoefficientField {
 public:
  CoefficientField() = default;
  /// Zero-filled field; the boundary vector defaults to free_water_vector.
  CoefficientField(const Grid& grid, const bfor::BasisSpec& spec);

  const Grid& grid() const noexcept { return grid_; }
  const bfor::BasisSpec& spec() const noexcept { return spec_; }
  int channels() const noexcept { return spec_.size(); }

  std::span<double> voxel(size_t idx) {
    return {data_.data() + idx * static_cast<size_t>(channels()), static_cast<size_t>(channels())};
  }
  std::span<const double> voxel(size_t idx) const {
    return {data_.data() + idx * static_cast<size_t>(channels()), static_cast<size_t>(channels())};
  }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  const std::vector<double>& boundary() const noexcept { return boundary_; }
  void set_boundary(std::vector<double> b);

 private:
  Grid grid_;
  bfor::BasisSpec spec_;
  std::vector<double> data_;
  std::vector<double> boundary_;
};

/// Scalar volume (weights, masks, feature maps).
struct ScalarField {
  Grid grid;
  std::vector<double> values;

  ScalarField() = default;
  ScalarField(const Grid& g, double fill = 0.0) : grid(g), values(g.count(), fill) {}
};

/// Positions phi(x) in mm for every voxel x of the reference grid.
class DeformationField {
 public:
  DeformationField() = default;
  explicit DeformationField(const Grid& grid);  // identity
  DeformationField(const Grid& grid, std::vector<Vec3> map);

  static DeformationField identity(const Grid& grid) { return DeformationField(grid); }

  const Grid& grid() const noexcept { return grid_; }
  std::vector<Vec3>& map() noexcept { return map_; }
  const std::vector<Vec3>& map() const noexcept { return map_; }
  Vec3 displacement(size_t idx) const { return map_[idx] - grid_.point(idx); }

 private:
  Grid grid_;
  std::vector<Vec3> map_;
};

/// Trilinear interpolation with a one-voxel pad of the boundary vector.
void interpolate(const CoefficientField& f, const Vec3& x, std::span<double> out);
std::vector<double> interpolate(const CoefficientField& f, const Vec3& x);

/// Value and spatial gradient (channels x 3, per mm) of the interpolant.
void interpolate_with_gradient(const CoefficientField& f, const Vec3& x, std::span<double> out,
                               Eigen::Ref<Eigen::Matrix<double, Eigen::Dynamic, 3>> grad);

/// Trilinear interpolation of a scalar volume, clamped to the edge.
double interpolate(const ScalarField& f, const Vec3& x, Vec3* grad = nullptr);

/// phi at an arbitrary point; the displacement is edge-clamped outside the grid.
Vec3 deformation_at(const DeformationField& phi, const Vec3& x);

/// Finite-difference Jacobian at a grid voxel, computed on the displacement
/// so the identity map yields exactly I. One-sided at the boundary.
Mat3 jacobian(const DeformationField& phi, int i, int j, int k);
std::vector<Mat3> jacobian_field(const DeformationField& phi);
/// Trilinear interpolation of a Jacobian field (edge-clamped).
Mat3 interpolate_jacobian(const Grid& g, std::span<const Mat3> jac, const Vec3& x);

ScalarField jacobian_determinant(const DeformationField& phi);

struct InversionReport {
  double max_residual = 0.0;  // mm
  size_t failures = 0;
};

/// phi^-1 sampled on the same grid. Throws InversionQuality when more than
/// 0.1% of voxels miss the 0.01 * min spacing tolerance.
DeformationField invert_deformation(const DeformationField& phi, InversionReport* report = nullptr);

/// (a o b)(x) = a(b(x)).
DeformationField compose(const DeformationField& a, const DeformationField& b);

/// Diffeomorphic action: out(x) = M(R_y) c(y) with y = phi^-1(x) and R_y the
/// finite-strain rotation of D phi at y.
CoefficientField group_action(const CoefficientField& f, const DeformationField& phi);
/// Same, with a precomputed inverse.
CoefficientField group_action(const CoefficientField& f, const DeformationField& phi,
                              const DeformationField& phi_inv);

double l2_norm(const CoefficientField& f);

}  // namespace qflow::field
