#include "qflow/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "qflow/error.hpp"
#include "qflow/parallel.hpp"
#include "qflow/quadrature.hpp"
#include "qflow/wigner.hpp"

namespace qflow::field {

Grid::Grid(std::array<int, 3> d, const Vec3& h, const Vec3& o) : dims(d), spacing(h), origin(o) {
  for (int a = 0; a < 3; ++a) {
    if (d[a] < 1) throw Error(ErrorKind::Dimension, "grid dimensions must be >= 1");
    if (!(h[a] > 0.0) || !std::isfinite(h[a])) throw Error(ErrorKind::Domain, "grid spacing must be positive");
  }
}

std::array<int, 3> Grid::ijk(size_t idx) const noexcept {
  const auto nx = static_cast<size_t>(dims[0]), ny = static_cast<size_t>(dims[1]);
  return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
}

Vec3 Grid::to_voxel(const Vec3& x) const noexcept {
  Vec3 t = (x - origin).cwiseQuotient(spacing);
  for (int a = 0; a < 3; ++a) {
    const double r = std::round(t[a]);
    if (std::abs(t[a] - r) < 1e-9) t[a] = r;
  }
  return t;
}

Vec3 Grid::center() const noexcept {
  return origin + 0.5 * Vec3((dims[0] - 1) * spacing.x(), (dims[1] - 1) * spacing.y(), (dims[2] - 1) * spacing.z());
}

double b_per_q2() { return 7500.0 / (78.95 * 78.95); }

std::vector<double> free_water_vector(const bfor::BasisSpec& spec, double diffusivity) {
  std::vector<double> c(static_cast<size_t>(spec.size()), 0.0);
  const quad::Rule1D rad = quad::gauss_legendre(200, 0.0, spec.tau());
  const double kappa = b_per_q2() * diffusivity;
  for (int n = 1; n <= spec.radial_order(); ++n) {
    const double a = spec.root(n, 0);
    double s = 0.0;
    for (size_t k = 0; k < rad.nodes.size(); ++k) {
      const double r = rad.nodes[k];
      s += rad.weights[k] * r * r * std::exp(-kappa * r * r) * bfor::sph_bessel(0, a * r / spec.tau());
    }
    // integral of Y_00 over the sphere is sqrt(4 pi)
    c[static_cast<size_t>(spec.channel(n, 0))] = std::sqrt(4.0 * std::numbers::pi) * spec.norm(n, 0) * s;
  }
  return c;
}

CoefficientField::CoefficientField(const Grid& grid, const bfor::BasisSpec& spec)
    : grid_(grid),
      spec_(spec),
      data_(grid.count() * static_cast<size_t>(spec.size()), 0.0),
      boundary_(free_water_vector(spec)) {}

void CoefficientField::set_boundary(std::vector<double> b) {
  if (b.size() != static_cast<size_t>(channels())) {
    throw Error(ErrorKind::Dimension, "boundary vector length mismatch");
  }
  boundary_ = std::move(b);
}

DeformationField::DeformationField(const Grid& grid) : grid_(grid), map_(grid.count()) {
  for (size_t i = 0; i < map_.size(); ++i) map_[i] = grid.point(i);
}

DeformationField::DeformationField(const Grid& grid, std::vector<Vec3> map) : grid_(grid), map_(std::move(map)) {
  if (map_.size() != grid.count()) throw Error(ErrorKind::Dimension, "deformation size mismatch");
}

namespace {

struct Cell {
  std::array<int, 3> i0;
  Vec3 f;  // fractional offsets in [0, 1)
};

Cell locate(const Grid& g, const Vec3& x) {
  const Vec3 t = g.to_voxel(x);
  Cell c;
  for (int a = 0; a < 3; ++a) {
    const double fl = std::floor(t[a]);
    c.i0[a] = static_cast<int>(std::clamp(fl, -4.0, static_cast<double>(g.dims[a]) + 4.0));
    c.f[a] = t[a] - fl;
    if (fl != c.i0[a]) c.f[a] = 0.0;  // far outside
  }
  return c;
}

// Edge-clamped cell: corner indices inside the grid, weights reflect clamping.
Cell locate_clamped(const Grid& g, const Vec3& x, std::array<bool, 3>* clamped = nullptr) {
  const Vec3 t = g.to_voxel(x);
  Cell c;
  for (int a = 0; a < 3; ++a) {
    const int n = g.dims[a];
    double ta = t[a];
    bool cl = false;
    if (ta <= 0.0) {
      cl = ta < 0.0;
      ta = 0.0;
    } else if (ta >= n - 1) {
      cl = ta > n - 1;
      ta = n - 1;
    }
    int i0 = static_cast<int>(std::floor(ta));
    if (i0 >= n - 1) i0 = std::max(0, n - 2);
    c.i0[a] = i0;
    c.f[a] = n == 1 ? 0.0 : ta - i0;
    if (clamped) (*clamped)[a] = cl || n == 1;
  }
  return c;
}

bool inside(const Grid& g, int i, int j, int k) {
  return i >= 0 && j >= 0 && k >= 0 && i < g.dims[0] && j < g.dims[1] && k < g.dims[2];
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

}  // namespace

void interpolate(const CoefficientField& f, const Vec3& x, std::span<double> out) {
  const Grid& g = f.grid();
  const Cell c = locate(g, x);
  const size_t nc = static_cast<size_t>(f.channels());
  std::fill(out.begin(), out.end(), 0.0);
  for (int corner = 0; corner < 8; ++corner) {
    const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
    const double w = (di ? c.f[0] : 1.0 - c.f[0]) * (dj ? c.f[1] : 1.0 - c.f[1]) * (dk ? c.f[2] : 1.0 - c.f[2]);
    if (w == 0.0) continue;
    const int i = c.i0[0] + di, j = c.i0[1] + dj, k = c.i0[2] + dk;
    const double* src = inside(g, i, j, k) ? f.voxel(g.index(i, j, k)).data() : f.boundary().data();
    for (size_t ch = 0; ch < nc; ++ch) out[ch] += w * src[ch];
  }
}

std::vector<double> interpolate(const CoefficientField& f, const Vec3& x) {
  std::vector<double> out(static_cast<size_t>(f.channels()));
  interpolate(f, x, out);
  return out;
}

void interpolate_with_gradient(const CoefficientField& f, const Vec3& x, std::span<double> out,
                               Eigen::Ref<Eigen::Matrix<double, Eigen::Dynamic, 3>> grad) {
  const Grid& g = f.grid();
  const Cell c = locate(g, x);
  const auto nc = static_cast<Eigen::Index>(f.channels());
  std::fill(out.begin(), out.end(), 0.0);
  grad.setZero();
  const Vec3 inv_h = g.spacing.cwiseInverse();
  for (int corner = 0; corner < 8; ++corner) {
    const int d[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
    double w1[3], dw[3];
    for (int a = 0; a < 3; ++a) {
      w1[a] = d[a] ? c.f[a] : 1.0 - c.f[a];
      dw[a] = (d[a] ? 1.0 : -1.0) * inv_h[a];
    }
    const int i = c.i0[0] + d[0], j = c.i0[1] + d[1], k = c.i0[2] + d[2];
    const double* src = inside(g, i, j, k) ? f.voxel(g.index(i, j, k)).data() : f.boundary().data();
    const double w = w1[0] * w1[1] * w1[2];
    const double gx = dw[0] * w1[1] * w1[2], gy = w1[0] * dw[1] * w1[2], gz = w1[0] * w1[1] * dw[2];
    for (Eigen::Index ch = 0; ch < nc; ++ch) {
      const double v = src[ch];
      out[static_cast<size_t>(ch)] += w * v;
      grad(ch, 0) += gx * v;
      grad(ch, 1) += gy * v;
      grad(ch, 2) += gz * v;
    }
  }
}

double interpolate(const ScalarField& f, const Vec3& x, Vec3* grad) {
  const Grid& g = f.grid;
  std::array<bool, 3> clamped{};
  const Cell c = locate_clamped(g, x, &clamped);
  double v = 0.0;
  Vec3 gr = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const int d[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
    double w1[3], dw[3];
    for (int a = 0; a < 3; ++a) {
      w1[a] = d[a] ? c.f[a] : 1.0 - c.f[a];
      dw[a] = clamped[a] ? 0.0 : (d[a] ? 1.0 : -1.0) / g.spacing[a];
    }
    const int i = clamp_index(c.i0[0] + d[0], g.dims[0]);
    const int j = clamp_index(c.i0[1] + d[1], g.dims[1]);
    const int k = clamp_index(c.i0[2] + d[2], g.dims[2]);
    const double s = f.values[g.index(i, j, k)];
    v += w1[0] * w1[1] * w1[2] * s;
    gr += Vec3(dw[0] * w1[1] * w1[2], w1[0] * dw[1] * w1[2], w1[0] * w1[1] * dw[2]) * s;
  }
  if (grad) *grad = gr;
  return v;
}

Vec3 deformation_at(const DeformationField& phi, const Vec3& x) {
  const Grid& g = phi.grid();
  const Cell c = locate_clamped(g, x);
  Vec3 u = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
    const double w = (di ? c.f[0] : 1.0 - c.f[0]) * (dj ? c.f[1] : 1.0 - c.f[1]) * (dk ? c.f[2] : 1.0 - c.f[2]);
    if (w == 0.0) continue;
    const int i = clamp_index(c.i0[0] + di, g.dims[0]);
    const int j = clamp_index(c.i0[1] + dj, g.dims[1]);
    const int k = clamp_index(c.i0[2] + dk, g.dims[2]);
    u += w * phi.displacement(g.index(i, j, k));
  }
  return x + u;
}

Mat3 jacobian(const DeformationField& phi, int i, int j, int k) {
  const Grid& g = phi.grid();
  const int c[3] = {i, j, k};
  Mat3 du = Mat3::Zero();
  for (int a = 0; a < 3; ++a) {
    const int n = g.dims[a];
    if (n == 1) continue;
    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
    double span = 2.0;
    if (c[a] == 0) {
      hi[a] = 1;
      span = 1.0;
    } else if (c[a] == n - 1) {
      lo[a] = n - 2;
      span = 1.0;
    } else {
      lo[a] -= 1;
      hi[a] += 1;
    }
    du.col(a) = (phi.displacement(g.index(hi[0], hi[1], hi[2])) - phi.displacement(g.index(lo[0], lo[1], lo[2]))) /
                (span * g.spacing[a]);
  }
  return Mat3::Identity() + du;
}

std::vector<Mat3> jacobian_field(const DeformationField& phi) {
  const Grid& g = phi.grid();
  std::vector<Mat3> out(g.count());
  parallel_for(g.count(), [&](size_t idx) {
    const auto c = g.ijk(idx);
    out[idx] = jacobian(phi, c[0], c[1], c[2]);
  });
  return out;
}

Mat3 interpolate_jacobian(const Grid& g, std::span<const Mat3> jac, const Vec3& x) {
  const Cell c = locate_clamped(g, x);
  Mat3 m = Mat3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
    const double w = (di ? c.f[0] : 1.0 - c.f[0]) * (dj ? c.f[1] : 1.0 - c.f[1]) * (dk ? c.f[2] : 1.0 - c.f[2]);
    if (w == 0.0) continue;
    const int i = clamp_index(c.i0[0] + di, g.dims[0]);
    const int j = clamp_index(c.i0[1] + dj, g.dims[1]);
    const int k = clamp_index(c.i0[2] + dk, g.dims[2]);
    m += w * jac[g.index(i, j, k)];
  }
  return m;
}

ScalarField jacobian_determinant(const DeformationField& phi) {
  const std::vector<Mat3> jac = jacobian_field(phi);
  ScalarField out(phi.grid());
  for (size_t i = 0; i < jac.size(); ++i) out.values[i] = jac[i].determinant();
  return out;
}

namespace {

void require_positive_jacobians(std::span<const Mat3> jac) {
  for (const Mat3& j : jac) {
    const double det = j.determinant();
    if (!(det > 0.0)) {
      throw Error(ErrorKind::Folding, "deformation folds: Jacobian determinant " + std::to_string(det));
    }
  }
}

}  // namespace

DeformationField invert_deformation(const DeformationField& phi, InversionReport* report) {
  const Grid& g = phi.grid();
  const std::vector<Mat3> jac = jacobian_field(phi);
  require_positive_jacobians(jac);
  const double tol = 0.01 * g.min_spacing();
  std::vector<Vec3> inv(g.count());
  std::vector<double> resid(g.count());
  parallel_for(g.count(), [&](size_t idx) {
    const Vec3 x = g.point(idx);
    Vec3 y = x - phi.displacement(idx);
    Vec3 r = deformation_at(phi, y) - x;
    double rn = r.norm();
    bool newton = false;
    for (int it = 0; it < 50 && rn >= tol; ++it) {
      Vec3 step = r;
      if (newton) step = interpolate_jacobian(g, jac, y).lu().solve(r);
      const Vec3 y_new = y - step;
      const Vec3 r_new = deformation_at(phi, y_new) - x;
      const double rn_new = r_new.norm();
      if (rn_new >= rn && !newton) {
        newton = true;  // fixed-point contraction lost; switch to Newton
        continue;
      }
      y = y_new;
      r = r_new;
      rn = rn_new;
    }
    inv[idx] = y;
    resid[idx] = rn;
  });
  InversionReport rep;
  for (double r : resid) {
    rep.max_residual = std::max(rep.max_residual, r);
    if (!(r < tol)) ++rep.failures;
  }
  if (report) *report = rep;
  if (static_cast<double>(rep.failures) > 1e-3 * static_cast<double>(g.count())) {
    throw Error(ErrorKind::InversionQuality, "deformation inversion failed at " + std::to_string(rep.failures) +
                                                 " of " + std::to_string(g.count()) + " voxels");
  }
  return DeformationField(g, std::move(inv));
}

DeformationField compose(const DeformationField& a, const DeformationField& b) {
  if (!(a.grid() == b.grid())) throw Error(ErrorKind::Dimension, "compose: grid mismatch");
  std::vector<Vec3> out(b.map().size());
  parallel_for(out.size(), [&](size_t i) { out[i] = deformation_at(a, b.map()[i]); });
  return DeformationField(b.grid(), std::move(out));
}

CoefficientField group_action(const CoefficientField& f, const DeformationField& phi) {
  return group_action(f, phi, invert_deformation(phi));
}

CoefficientField group_action(const CoefficientField& f, const DeformationField& phi,
                              const DeformationField& phi_inv) {
  if (!(f.grid() == phi.grid()) || !(phi.grid() == phi_inv.grid())) {
    throw Error(ErrorKind::Dimension, "group_action: grid mismatch");
  }
  const Grid& g = f.grid();
  const std::vector<Mat3> jac = jacobian_field(phi);
  require_positive_jacobians(jac);
  CoefficientField out(g, f.spec());
  out.set_boundary(f.boundary());
  const int L = f.spec().order();
  parallel_for(g.count(), [&](size_t idx) {
    const Vec3 y = phi_inv.map()[idx];
    const Mat3 R = wigner::finite_strain_rotation(interpolate_jacobian(g, jac, y));
    std::vector<double> c = interpolate(f, y);
    wigner::reorient(c, wigner::wigner_from_rotation_unchecked(R, L), out.voxel(idx));
  });
  return out;
}

double l2_norm(const CoefficientField& f) { return bfor::l2_norm(f.data(), f.grid().voxel_volume()); }

}  // namespace qflow::field
