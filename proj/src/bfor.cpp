#include "qflow/bfor.hpp"

#include <atomic>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <Eigen/QR>

#include "qflow/error.hpp"
#include "qflow/quadrature.hpp"

namespace qflow::bfor {

namespace {

std::atomic<std::uint64_t> g_basis_evals{0};

constexpr size_t kMaxSh = (sh::kMaxOrder + 1) * (sh::kMaxOrder + 2) / 2;

}  // namespace

double sph_bessel(int l, double x) {
  if (x == 0.0) return l == 0 ? 1.0 : 0.0;
  return std::sph_bessel(static_cast<unsigned>(l), x);
}

double bessel_root(int n, int l) {
  if (n < 1 || l < 0) {
    throw Error(ErrorKind::Domain, "bessel_root needs n >= 1 and l >= 0");
  }
  // Roots of j_l are spaced by roughly pi; a 0.05 scan never skips one.
  const double step = 0.05;
  double a = step;
  double fa = sph_bessel(l, a);
  int found = 0;
  for (;;) {
    const double b = a + step;
    const double fb = sph_bessel(l, b);
    if (fa == 0.0 || (fa < 0.0) != (fb < 0.0)) {
      if (++found == n) {
        if (fa == 0.0) return a;
        double lo = a, hi = b, flo = fa;
        for (int it = 0; it < 200 && hi - lo > 4e-16 * hi; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = sph_bessel(l, mid);
          if (fm == 0.0) return mid;
          if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
          }
        }
        return 0.5 * (lo + hi);
      }
    }
    a = b;
    fa = fb;
  }
}

BasisSpec::BasisSpec(int L, int Nb, double tau)
    : L_(L), Nb_(Nb), tau_(tau), n_sh_(sh::sh_count(L)) {
  if (Nb < 1) throw Error(ErrorKind::InvalidOrder, "radial order must be >= 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorKind::Domain, "tau must be positive and finite");
  }
  const size_t count = static_cast<size_t>(Nb) * (L / 2 + 1);
  roots_.resize(count);
  norms_.resize(count);
  for (int n = 1; n <= Nb; ++n) {
    for (int l = 0; l <= L; l += 2) {
      const double a = bessel_root(n, l);
      roots_[idx(n, l)] = a;
      norms_[idx(n, l)] = 2.0 * std::sqrt(a) /
                          (std::sqrt(std::numbers::pi * tau * tau * tau) *
                           std::cyl_bessel_j(l + 1.5, a));
    }
  }
}

std::uint64_t basis_eval_count() noexcept { return g_basis_evals.load(std::memory_order_relaxed); }
void reset_basis_eval_count() noexcept { g_basis_evals.store(0, std::memory_order_relaxed); }

void basis_row(const BasisSpec& spec, const Vec3& q, std::span<double> out) {
  if (static_cast<int>(out.size()) < spec.size()) {
    throw Error(ErrorKind::Dimension, "basis_row output too short");
  }
  const double r = q.norm();
  if (r >= spec.tau()) {
    throw Error(ErrorKind::Domain, "|q| = " + std::to_string(r) + " outside basis support tau = " +
                                       std::to_string(spec.tau()));
  }
  g_basis_evals.fetch_add(static_cast<std::uint64_t>(spec.size()), std::memory_order_relaxed);

  const int L = spec.order();
  std::array<double, kMaxSh> y{};
  const Vec3 u = r > 0.0 ? Vec3(q / r) : Vec3(0.0, 0.0, 1.0);
  sh::sh_eval_all(L, u, y);

  for (int n = 1; n <= spec.radial_order(); ++n) {
    for (int l = 0; l <= L; l += 2) {
      const double radial =
          spec.norm(n, l) * sph_bessel(l, spec.root(n, l) * r / spec.tau());
      const int first = sh::degree_offset(l);
      for (int m = 0; m < 2 * l + 1; ++m) {
        out[spec.channel(n, first + m)] = radial * y[first + m];
      }
    }
  }
}

double basis_eval(const BasisSpec& spec, int n, sh::ShIndex j, const Vec3& q) {
  if (n < 1 || n > spec.radial_order()) throw Error(ErrorKind::Domain, "radial index out of range");
  if (j.l > spec.order() || j.l % 2 != 0 || std::abs(j.m) > j.l) {
    throw Error(ErrorKind::Domain, "SH index outside the basis");
  }
  const double r = q.norm();
  if (r >= spec.tau()) throw Error(ErrorKind::Domain, "|q| outside basis support");
  g_basis_evals.fetch_add(1, std::memory_order_relaxed);
  const Vec3 u = r > 0.0 ? Vec3(q / r) : Vec3(0.0, 0.0, 1.0);
  std::array<double, kMaxSh> y{};
  sh::sh_eval_all(j.l, u, y);
  return spec.norm(n, j.l) * sph_bessel(j.l, spec.root(n, j.l) * r / spec.tau()) *
         y[sh::linear_index(j.l, j.m)];
}

Eigen::MatrixXd design_matrix(const BasisSpec& spec, std::span<const Vec3> qs) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(qs.size()), spec.size());
  std::vector<double> row(spec.size());
  for (size_t k = 0; k < qs.size(); ++k) {
    basis_row(spec, qs[k], row);
    for (int c = 0; c < spec.size(); ++c) a(static_cast<Eigen::Index>(k), c) = row[c];
  }
  return a;
}

double reconstruct(std::span<const double> c, const BasisSpec& spec, const Vec3& q) {
  if (static_cast<int>(c.size()) != spec.size()) {
    throw Error(ErrorKind::Dimension, "coefficient length does not match basis");
  }
  std::vector<double> row(spec.size());
  basis_row(spec, q, row);
  double s = 0.0;
  for (int i = 0; i < spec.size(); ++i) s += c[i] * row[i];
  return s;
}

Eigen::VectorXd laplace_beltrami_weights(const BasisSpec& spec) {
  Eigen::VectorXd w(spec.size());
  for (int n = 1; n <= spec.radial_order(); ++n) {
    for (int j = 0; j < spec.sh_terms(); ++j) {
      const double l = sh::index_of(j).l;
      w[spec.channel(n, j)] = l * l * (l + 1) * (l + 1);
    }
  }
  return w;
}

Fitter::Fitter(const BasisSpec& spec, std::span<const Vec3> qs, double ridge)
    : spec_(spec), design_(design_matrix(spec, qs)) {
  if (qs.empty()) throw Error(ErrorKind::Input, "no samples to fit");
  if (ridge < 0.0) throw Error(ErrorKind::Domain, "ridge weight must be non-negative");
  const Eigen::Index k = design_.rows(), p = design_.cols();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(k + p, p);
  aug.topRows(k) = design_;
  // The ridge is relative to the mean squared design column norm, so it does
  // not depend on the units of q.
  const double scale = design_.squaredNorm() / static_cast<double>(p);
  aug.bottomRows(p) = (std::sqrt(ridge * scale) * laplace_beltrami_weights(spec)).asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aug);
  if (qr.rank() < p) {
    throw Error(ErrorKind::RankDeficient,
                "normal matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                    std::to_string(p) + "); increase ridge or sampling");
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k + p, k);
  rhs.topRows(k).setIdentity();
  solve_ = qr.solve(rhs);
}

FitResult Fitter::fit(std::span<const double> values) const {
  if (static_cast<Eigen::Index>(values.size()) != design_.rows()) {
    throw Error(ErrorKind::Dimension, "sample count does not match fitter");
  }
  Eigen::Map<const Eigen::VectorXd> e(values.data(), design_.rows());
  FitResult r;
  r.coefficients = solve_ * e;
  r.rms_residual = std::sqrt((design_ * r.coefficients - e).squaredNorm() /
                             static_cast<double>(design_.rows()));
  return r;
}

FitResult fit_coefficients(std::span<const Sample> samples, const BasisSpec& spec, double ridge) {
  if (samples.empty()) throw Error(ErrorKind::Input, "empty sample list");
  std::vector<Vec3> qs;
  std::vector<double> values;
  qs.reserve(samples.size());
  values.reserve(samples.size());
  for (const auto& s : samples) {
    qs.push_back(s.q);
    values.push_back(s.value);
  }
  return Fitter(spec, qs, ridge).fit(values);
}

double l2_norm(std::span<const double> coefficients, double voxel_volume) {
  double s = 0.0;
  for (double v : coefficients) s += v * v;
  return std::sqrt(s * voxel_volume);
}

EapTransform::EapTransform(const BasisSpec& spec, int grid_size, double q_extent)
    : spec_(spec), g_(grid_size) {
  if (grid_size < 3 || grid_size % 2 == 0) {
    throw Error(ErrorKind::Domain, "EAP grid size must be odd and >= 3");
  }
  if (!(q_extent > 0.0) || q_extent > spec.tau()) {
    throw Error(ErrorKind::Domain, "q extent must lie in (0, tau]");
  }
  const int h = (g_ - 1) / 2;
  dq_ = q_extent / h;
  dr_ = 1.0 / (g_ * dq_);

  std::vector<Vec3> qs;
  for (int k = 0; k < g_; ++k) {
    for (int j = 0; j < g_; ++j) {
      for (int i = 0; i < g_; ++i) {
        const Vec3 q((i - h) * dq_, (j - h) * dq_, (k - h) * dq_);
        if (q.norm() < spec.tau()) {
          inside_.push_back(i + g_ * (j + g_ * k));
          qs.push_back(q);
        }
      }
    }
  }
  samples_ = design_matrix(spec, qs);

  dft_.resize(g_, g_);
  for (int k = 0; k < g_; ++k) {
    for (int i = 0; i < g_; ++i) {
      const double ang = -2.0 * std::numbers::pi * (i - h) * (k - h) / g_;
      dft_(k, i) = std::complex<double>(std::cos(ang), std::sin(ang));
    }
  }
}

std::vector<double> EapTransform::pdf(std::span<const double> c) const {
  if (static_cast<int>(c.size()) != spec_.size()) {
    throw Error(ErrorKind::Dimension, "coefficient length does not match basis");
  }
  Eigen::Map<const Eigen::VectorXd> cv(c.data(), spec_.size());
  const Eigen::VectorXd vals = samples_ * cv;

  const size_t n = static_cast<size_t>(g_) * g_ * g_;
  std::vector<std::complex<double>> a(n), b(n);
  for (size_t s = 0; s < inside_.size(); ++s) a[inside_[s]] = vals[static_cast<Eigen::Index>(s)];

  // Separable transform: one 1-D pass per axis, ping-ponging between buffers.
  const size_t g = static_cast<size_t>(g_);
  const std::array<size_t, 3> strides{1, g, g * g};
  for (size_t axis = 0; axis < 3; ++axis) {
    const size_t st = strides[axis];
    for (size_t base = 0; base < n; ++base) {
      if ((base / st) % g != 0) continue;  // base must be the first element of its line
      for (size_t k = 0; k < g; ++k) {
        std::complex<double> acc = 0.0;
        for (size_t i = 0; i < g; ++i) acc += dft_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) * a[base + i * st];
        b[base + k * st] = acc;
      }
    }
    std::swap(a, b);
  }

  std::vector<double> p(n);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::max(0.0, a[i].real());
    total += p[i];
  }
  if (!(total > 1e-300) || !std::isfinite(total)) {
    throw Error(ErrorKind::DegeneratePdf, "EAP transform is identically non-positive");
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> eap_grid(std::span<const double> c, const BasisSpec& spec, int grid_size,
                             double q_extent) {
  return EapTransform(spec, grid_size, q_extent).pdf(c);
}

double gfa(std::span<const double> values, std::span<const double> weights) {
  double wsum = 0.0, mean = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    wsum += weights[i];
    mean += weights[i] * values[i];
  }
  mean /= wsum;
  double var = 0.0, sq = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    var += weights[i] * (values[i] - mean) * (values[i] - mean);
    sq += weights[i] * values[i] * values[i];
  }
  return sq > 0.0 ? std::sqrt(var / sq) : 0.0;
}

namespace {

double sample_trilinear(const std::vector<double>& p, int g, double x, double y, double z) {
  auto clampi = [g](int v) { return std::min(std::max(v, 0), g - 1); };
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y)),
            z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  double s = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        if (w == 0.0) continue;
        s += w * p[clampi(x0 + dx) + g * (clampi(y0 + dy) + g * clampi(z0 + dz))];
      }
  return s;
}

}  // namespace

ScalarFeatures scalar_features(std::span<const double> c, const EapTransform& eap,
                               std::span<const double> radii_um) {
  const int g = eap.grid_size();
  const int h = (g - 1) / 2;
  const double dr_um = eap.displacement_spacing() * 1000.0;
  for (double r : radii_um) {
    if (!(r >= 0.0) || r > h * dr_um) {
      throw Error(ErrorKind::Domain, "GFA radius " + std::to_string(r) +
                                         " um outside the EAP grid extent " +
                                         std::to_string(h * dr_um) + " um");
    }
  }
  const std::vector<double> p = eap.pdf(c);
  ScalarFeatures f;
  const double dr_mm = eap.displacement_spacing();
  f.po = p[h + g * (h + g * h)] / (dr_mm * dr_mm * dr_mm);
  for (int k = 0; k < g; ++k)
    for (int j = 0; j < g; ++j)
      for (int i = 0; i < g; ++i) {
        const double r2 = dr_um * dr_um * ((i - h) * (i - h) + (j - h) * (j - h) + (k - h) * (k - h));
        f.msd += r2 * p[i + g * (j + g * k)];
      }
  const quad::SphereRule sphere = quad::sphere_product_rule(16);
  std::vector<double> vals(sphere.points.size());
  for (double r : radii_um) {
    const double rc = r / dr_um;
    for (size_t s = 0; s < sphere.points.size(); ++s) {
      const Vec3& u = sphere.points[s];
      vals[s] = sample_trilinear(p, g, h + rc * u.x(), h + rc * u.y(), h + rc * u.z());
    }
    f.gfa.push_back(gfa(vals, sphere.weights));
  }
  return f;
}

ScalarFeatures scalar_features(std::span<const double> c, const BasisSpec& spec,
                               std::span<const double> radii_um, int grid_size) {
  return scalar_features(c, EapTransform(spec, grid_size, spec.tau()), radii_um);
}

}  // namespace qflow::bfor
