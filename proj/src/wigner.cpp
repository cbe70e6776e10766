#include "qflow/wigner.hpp"

#include <array>
#include <cmath>
#include <mutex>
#include <string>

#include <Eigen/Dense>

#include "qflow/error.hpp"
#include "qflow/quadrature.hpp"
#include "qflow/sphharm.hpp"

namespace qflow::wigner {

namespace {

// Sphere rule exact to degree 2L together with the weighted harmonic table
// w_k Y_j(u_k); projecting rotated samples onto it gives each block exactly.
struct ProjectionTable {
  std::vector<Vec3> points;
  Eigen::MatrixXd weighted;  // K x N_Y
};

const ProjectionTable& projection_table(int L) {
  static std::array<std::once_flag, sh::kMaxOrder / 2 + 1> once;
  static std::array<ProjectionTable, sh::kMaxOrder / 2 + 1> tables;
  const auto slot = static_cast<size_t>(L / 2);
  std::call_once(once[slot], [L, slot] {
    const quad::SphereRule rule = quad::sphere_product_rule(2 * L);
    const int nsh = sh::sh_count(L);
    ProjectionTable t;
    t.points = rule.points;
    t.weighted.resize(static_cast<Eigen::Index>(rule.points.size()), nsh);
    std::vector<double> y(nsh);
    for (size_t k = 0; k < rule.points.size(); ++k) {
      sh::sh_eval_all(L, rule.points[k], y);
      for (int j = 0; j < nsh; ++j) t.weighted(static_cast<Eigen::Index>(k), j) = rule.weights[k] * y[j];
    }
    tables[slot] = std::move(t);
  });
  return tables[slot];
}

bool is_exact_identity(const Mat3& m) { return m == Mat3::Identity(); }

}  // namespace

WignerBlock WignerBlock::identity(int L) {
  sh::sh_count(L);
  std::vector<Eigen::MatrixXd> blocks;
  for (int l = 0; l <= L; l += 2) blocks.push_back(Eigen::MatrixXd::Identity(2 * l + 1, 2 * l + 1));
  return WignerBlock(Mat3::Identity(), L, std::move(blocks));
}

Eigen::MatrixXd WignerBlock::dense() const {
  const int n = sh::sh_count(L_);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int l = 0; l <= L_; l += 2) {
    m.block(sh::degree_offset(l), sh::degree_offset(l), 2 * l + 1, 2 * l + 1) = block(l);
  }
  return m;
}

void WignerBlock::apply(std::span<const double> in, std::span<double> out) const {
  for (int l = 0; l <= L_; l += 2) {
    const int off = sh::degree_offset(l), w = 2 * l + 1;
    Eigen::Map<const Eigen::VectorXd> src(in.data() + off, w);
    Eigen::Map<Eigen::VectorXd> dst(out.data() + off, w);
    dst.noalias() = block(l) * src;
  }
}

WignerBlock wigner_from_rotation_unchecked(const Mat3& R, int L) {
  if (is_exact_identity(R)) return WignerBlock::identity(L);
  const ProjectionTable& table = projection_table(L);
  const int nsh = sh::sh_count(L);
  const auto k = static_cast<Eigen::Index>(table.points.size());
  Eigen::MatrixXd rotated(k, nsh);
  std::vector<double> y(nsh);
  const Mat3 rt = R.transpose();
  for (Eigen::Index i = 0; i < k; ++i) {
    sh::sh_eval_all(L, rt * table.points[static_cast<size_t>(i)], y);
    for (int j = 0; j < nsh; ++j) rotated(i, j) = y[j];
  }
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(static_cast<size_t>(L / 2 + 1));
  for (int l = 0; l <= L; l += 2) {
    const int off = sh::degree_offset(l), w = 2 * l + 1;
    blocks.emplace_back(table.weighted.middleCols(off, w).transpose() * rotated.middleCols(off, w));
  }
  return WignerBlock(R, L, std::move(blocks));
}

WignerBlock wigner_from_rotation(const Mat3& R, int L) {
  sh::sh_count(L);
  if (!R.allFinite() || (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-8 ||
      R.determinant() <= 0.0) {
    throw Error(ErrorKind::InvalidRotation, "matrix is not a proper rotation");
  }
  return wigner_from_rotation_unchecked(R, L);
}

void reorient(std::span<const double> c, const WignerBlock& w, std::span<double> out) {
  const auto nsh = static_cast<size_t>(sh::sh_count(w.order()));
  if (c.size() % nsh != 0 || out.size() != c.size()) {
    throw Error(ErrorKind::Dimension, "coefficient length " + std::to_string(c.size()) +
                                          " is not a multiple of " + std::to_string(nsh));
  }
  for (size_t base = 0; base < c.size(); base += nsh) {
    w.apply(c.subspan(base, nsh), out.subspan(base, nsh));
  }
}

std::vector<double> reorient(std::span<const double> c, const WignerBlock& w) {
  std::vector<double> out(c.size());
  reorient(c, w, out);
  return out;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 k = skew(v);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  return Mat3::Identity() + std::sin(theta) / theta * k +
         (1.0 - std::cos(theta)) / (theta * theta) * k * k;
}

Mat3 finite_strain_rotation(const Mat3& jac) {
  if (is_exact_identity(jac)) return Mat3::Identity();
  const double det = jac.determinant();
  if (!std::isfinite(det) || det <= 0.0) {
    throw Error(ErrorKind::Folding, "Jacobian determinant " + std::to_string(det) + " is not positive");
  }
  Eigen::JacobiSVD<Mat3> svd(jac, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv.minCoeff() <= 1e-14 * sv.maxCoeff()) {
    throw Error(ErrorKind::Folding, "Jacobian is numerically singular");
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

Mat3 finite_strain_differential(const Mat3& jac, const Mat3& rotation) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(jac * jac.transpose());
  const Vec3 ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat3 s = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const Mat3 m = s.trace() * Mat3::Identity() - s;
  // eigenvalues of m are pairwise sums of singular values of jac
  const double smallest = ev.sum() - ev.maxCoeff();
  if (!(smallest > 1e-14 * std::max(ev.sum(), 1e-300))) {
    throw Error(ErrorKind::DegenerateJacobian, "two singular values of the Jacobian vanish");
  }
  return -rotation.transpose() * m.inverse() * rotation;
}

Vec3 rotation_variation(const Mat3& F, const Mat3& rotation, const Mat3& H) {
  Vec3 s = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    const Vec3 r = rotation.row(i).transpose();
    const Vec3 h = H.row(i).transpose();
    s += r.cross(h);
  }
  return F * s;
}

RotationDerivative::RotationDerivative(int L, double delta) : L_(L), delta_(delta) {
  if (!(delta > 0.0)) throw Error(ErrorKind::Domain, "rotation step must be positive");
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 mu = Vec3::Zero();
    mu[axis] = delta;
    perturb_.push_back(wigner_from_rotation_unchecked(exp_so3(mu), L));
  }
}

void RotationDerivative::apply(std::span<const double> c_hat,
                               Eigen::Ref<Eigen::Matrix<double, 3, Eigen::Dynamic>> out) const {
  const auto nsh = static_cast<size_t>(sh::sh_count(L_));
  if (c_hat.size() % nsh != 0 || static_cast<size_t>(out.cols()) != c_hat.size()) {
    throw Error(ErrorKind::Dimension, "rotated_coeff_gradient size mismatch");
  }
  std::vector<double> tmp(nsh);
  for (int axis = 0; axis < 3; ++axis) {
    for (size_t base = 0; base < c_hat.size(); base += nsh) {
      perturb_[static_cast<size_t>(axis)].apply(c_hat.subspan(base, nsh), tmp);
      for (size_t k = 0; k < nsh; ++k) {
        out(axis, static_cast<Eigen::Index>(base + k)) = (tmp[k] - c_hat[base + k]) / delta_;
      }
    }
  }
}

Eigen::Matrix<double, 3, Eigen::Dynamic> rotated_coeff_gradient(std::span<const double> c_hat,
                                                                int L, double delta) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> out(3, static_cast<Eigen::Index>(c_hat.size()));
  RotationDerivative(L, delta).apply(c_hat, out);
  return out;
}

}  // namespace qflow::wigner
