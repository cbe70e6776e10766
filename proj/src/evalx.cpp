#include "qflow/evalx.hpp"

#include <cmath>

#include <Eigen/Core>

#include "qflow/error.hpp"
#include "qflow/parallel.hpp"

namespace qflow::evalx {

namespace {

void check_pair(const field::CoefficientField& a, const field::CoefficientField& b, const field::ScalarField* mask) {
  if (!(a.grid() == b.grid()) || !(a.spec() == b.spec())) {
    throw Error(ErrorKind::Dimension, "fields must share grid and basis");
  }
  if (mask && !(mask->grid == a.grid())) throw Error(ErrorKind::Dimension, "mask grid mismatch");
}

std::vector<size_t> masked_voxels(const field::Grid& g, const field::ScalarField* mask) {
  std::vector<size_t> out;
  for (size_t i = 0; i < g.count(); ++i) {
    if (!mask || mask->values[i] > 0.0) out.push_back(i);
  }
  if (out.empty()) throw Error(ErrorKind::Input, "mask selects no voxels");
  return out;
}

}  // namespace

std::vector<double> shell_sq_diff(const field::CoefficientField& a, const field::CoefficientField& b,
                                  const phantom::EncodingScheme& scheme, const field::ScalarField* mask) {
  check_pair(a, b, mask);
  const std::vector<size_t> vox = masked_voxels(a.grid(), mask);
  std::vector<double> out;
  for (int s : scheme.weighted_shells()) {
    const phantom::Shell& shell = scheme.shells[static_cast<size_t>(s)];
    std::vector<Vec3> qs;
    for (const Vec3& u : shell.directions) qs.push_back(shell.q * u);
    const Eigen::MatrixXd A = bfor::design_matrix(a.spec(), qs);
    double total = 0.0;
    for (size_t v : vox) {
      Eigen::VectorXd d(A.cols());
      for (Eigen::Index k = 0; k < d.size(); ++k) {
        d[k] = a.voxel(v)[static_cast<size_t>(k)] - b.voxel(v)[static_cast<size_t>(k)];
      }
      total += (A * d).squaredNorm();
    }
    out.push_back(total);
  }
  return out;
}

double symmetric_kl(std::span<const double> p, std::span<const double> q, double floor) {
  if (p.size() != q.size() || p.empty()) throw Error(ErrorKind::Dimension, "distributions differ in size");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    sp += std::max(p[i], floor);
    sq += std::max(q[i], floor);
  }
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], floor) / sp, b = std::max(q[i], floor) / sq;
    kl += (a - b) * std::log(a / b);
  }
  return kl;
}

double skl_divergence(const field::CoefficientField& a, const field::CoefficientField& b,
                      const field::ScalarField* mask, int grid_size) {
  check_pair(a, b, mask);
  const std::vector<size_t> vox = masked_voxels(a.grid(), mask);
  const bfor::EapTransform eap(a.spec(), grid_size, a.spec().tau());
  std::vector<double> per(vox.size());
  parallel_for(vox.size(), [&](size_t i) {
    per[i] = symmetric_kl(eap.pdf(a.voxel(vox[i])), eap.pdf(b.voxel(vox[i])));
  });
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

}  // namespace qflow::evalx
