#include "qflow/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <Eigen/Dense>

#include "qflow/error.hpp"
#include "qflow/lddmm.hpp"
#include "qflow/parallel.hpp"

namespace qflow::phantom {

size_t EncodingScheme::size() const {
  size_t n = 0;
  for (const Shell& s : shells) n += s.directions.size();
  return n;
}

std::vector<Vec3> EncodingScheme::qvectors() const {
  std::vector<Vec3> out;
  out.reserve(size());
  for (const Shell& s : shells) {
    for (const Vec3& u : s.directions) out.push_back(s.q * u);
  }
  return out;
}

std::vector<double> EncodingScheme::bvalues() const {
  std::vector<double> out;
  out.reserve(size());
  for (const Shell& s : shells) out.insert(out.end(), s.directions.size(), s.b);
  return out;
}

std::vector<int> EncodingScheme::weighted_shells() const {
  std::vector<int> out;
  for (size_t i = 0; i < shells.size(); ++i) {
    if (shells[i].b > 0.0) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<Vec3> electrostatic_directions(int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::Domain, "direction count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<Vec3> u(static_cast<size_t>(n));
  for (Vec3& v : u) v = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
  if (n == 1) return {Vec3(0.0, 0.0, 1.0)};

  auto energy = [&](const std::vector<Vec3>& p) {
    double e = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      for (size_t j = i + 1; j < p.size(); ++j) e += 1.0 / (p[i] - p[j]).norm() + 1.0 / (p[i] + p[j]).norm();
    }
    return e;
  };
  double step = 0.1;
  double e = energy(u);
  std::vector<Vec3> force(u.size()), trial(u.size());
  for (int it = 0; it < 2000 && step > 1e-10; ++it) {
    for (size_t i = 0; i < u.size(); ++i) {
      Vec3 f = Vec3::Zero();
      for (size_t j = 0; j < u.size(); ++j) {
        if (i == j) continue;
        const Vec3 d1 = u[i] - u[j], d2 = u[i] + u[j];
        f += d1 / std::pow(d1.norm(), 3) + d2 / std::pow(d2.norm(), 3);
      }
      force[i] = f - f.dot(u[i]) * u[i];  // tangential part
    }
    double fmax = 0.0;
    for (const Vec3& f : force) fmax = std::max(fmax, f.norm());
    if (fmax == 0.0) break;
    for (size_t i = 0; i < u.size(); ++i) trial[i] = (u[i] + (step / fmax) * force[i]).normalized();
    const double et = energy(trial);
    if (et < e) {
      u.swap(trial);
      e = et;
      step *= 1.2;
    } else {
      step *= 0.5;
    }
  }
  for (Vec3& v : u) {
    if (v.z() < 0.0) v = -v;
  }
  return u;
}

EncodingScheme hydi_scheme(std::uint64_t seed) {
  constexpr int kCounts[] = {6, 21, 24, 24, 50};
  constexpr double kB[] = {300.0, 1200.0, 2700.0, 4800.0, 7500.0};
  constexpr double kDq = 15.79;
  EncodingScheme s;
  s.shells.push_back({0.0, 0.0, std::vector<Vec3>(7, Vec3(0.0, 0.0, 1.0))});
  for (int k = 0; k < 5; ++k) {
    s.shells.push_back({kB[k], kDq * (k + 1), electrostatic_directions(kCounts[k], seed + static_cast<std::uint64_t>(k))});
  }
  return s;
}

EncodingScheme dense_scheme(int shells, int dirs, double q_max, std::uint64_t seed) {
  if (shells < 1 || dirs < 1 || !(q_max > 0.0)) throw Error(ErrorKind::Domain, "invalid dense scheme");
  EncodingScheme s;
  s.shells.push_back({0.0, 0.0, {Vec3(0.0, 0.0, 1.0)}});
  for (int k = 1; k <= shells; ++k) {
    const double q = q_max * k / shells;
    s.shells.push_back({field::b_per_q2() * q * q, q, electrostatic_directions(dirs, seed + static_cast<std::uint64_t>(k))});
  }
  return s;
}

EncodingScheme scheme_from_rows(std::span<const Vec3> q, std::span<const double> b) {
  if (q.size() != b.size() || q.empty()) throw Error(ErrorKind::Input, "scheme rows are empty or inconsistent");
  std::map<double, Shell> by_b;
  for (size_t i = 0; i < q.size(); ++i) {
    Shell& s = by_b[b[i]];
    s.b = b[i];
    const double n = q[i].norm();
    if (b[i] == 0.0 || n == 0.0) {
      s.q = 0.0;
      s.directions.emplace_back(0.0, 0.0, 1.0);
    } else {
      s.q = n;
      s.directions.push_back(q[i] / n);
    }
  }
  EncodingScheme out;
  for (auto& [bv, s] : by_b) out.shells.push_back(std::move(s));
  return out;
}

std::vector<double> tensor_mixture_signal(const EncodingScheme& scheme, std::span<const Tensor> tensors) {
  if (tensors.empty()) throw Error(ErrorKind::Domain, "tensor mixture needs at least one tensor");
  double fsum = 0.0;
  for (const Tensor& t : tensors) {
    if (t.fraction < 0.0) throw Error(ErrorKind::Domain, "negative tensor fraction");
    if ((t.D - t.D.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, t.D.cwiseAbs().maxCoeff())) {
      throw Error(ErrorKind::Domain, "diffusion tensor is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(t.D, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw Error(ErrorKind::Domain, "diffusion tensor is not positive definite");
    fsum += t.fraction;
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw Error(ErrorKind::Domain, "tensor fractions must sum to 1");
  std::vector<double> out;
  out.reserve(scheme.size());
  for (const Shell& s : scheme.shells) {
    for (const Vec3& u : s.directions) {
      double e = 0.0;
      for (const Tensor& t : tensors) e += t.fraction * std::exp(-s.b * u.dot(t.D * u));
      out.push_back(e);
    }
  }
  return out;
}

Mat3 fiber_tensor(const Vec3& dir, double lambda_par, double lambda_perp) {
  const Vec3 e = dir.normalized();
  return lambda_perp * Mat3::Identity() + (lambda_par - lambda_perp) * e * e.transpose();
}

Template make_template(const TemplateOptions& opt, const bfor::BasisSpec& spec, const EncodingScheme& scheme) {
  const field::Grid grid({opt.size, opt.size, opt.size}, Vec3::Constant(opt.spacing));
  const Vec3 c = grid.center();
  const bfor::Fitter fitter(spec, scheme.qvectors(), opt.ridge);
  const Mat3 water = 3e-3 * Mat3::Identity();
  const Mat3 tissue = 0.8e-3 * Mat3::Identity();

  Template out{field::CoefficientField(grid, spec), field::ScalarField(grid, 0.0)};
  {
    const Tensor fw{water, 1.0};
    const std::vector<double> sig = tensor_mixture_signal(scheme, std::span<const Tensor>(&fw, 1));
    const Eigen::VectorXd cw = fitter.fit(sig).coefficients;
    out.field.set_boundary(std::vector<double>(cw.data(), cw.data() + cw.size()));
  }

  const double r_arc = 10.0;
  const Vec3 arc_center = c - Vec3(r_arc, 0.0, 0.0);
  // Membership in [0, 1]; hard indicator when edge_width is 0.
  auto soft = [&](double signed_dist) {
    if (opt.edge_width <= 0.0) return signed_dist < 0.0 ? 1.0 : 0.0;
    return 1.0 / (1.0 + std::exp(signed_dist / opt.edge_width));
  };
  parallel_for(grid.count(), [&](size_t idx) {
    const Vec3 x = grid.point(idx);
    const Vec3 d = x - c;
    const double in_ball = soft(d.norm() - opt.ball_radius);
    std::vector<Tensor> tensors;
    double fiber = 0.0;
    if (opt.kind == Kind::Single) {
      const Vec3 rel = x - arc_center;
      const double rho = std::hypot(rel.x(), rel.y());
      const double f = rel.x() > 0.0 ? soft(std::hypot(rho - r_arc, d.z()) - opt.tube_radius) : 0.0;
      if (f > 0.0) tensors.push_back({fiber_tensor(Vec3(-rel.y(), rel.x(), 0.0)), f * in_ball});
      fiber = f;
    } else {
      const double fx = soft(std::hypot(d.y(), d.z()) - opt.tube_radius);
      const double fy = soft(std::hypot(d.x(), d.z()) - opt.tube_radius);
      // Inside the crossing the two populations share the volume equally.
      const double sum = fx + fy, total = std::max(fx, fy);
      if (sum > 0.0) {
        if (fx > 0.0) tensors.push_back({fiber_tensor(Vec3::UnitX()), in_ball * total * fx / sum});
        if (fy > 0.0) tensors.push_back({fiber_tensor(Vec3::UnitY()), in_ball * total * fy / sum});
      }
      fiber = total;
    }
    const double tissue_f = in_ball * (1.0 - fiber);
    if (tissue_f > 0.0) tensors.push_back({tissue, tissue_f});
    if (in_ball < 1.0) tensors.push_back({water, 1.0 - in_ball});
    double fsum = 0.0;
    for (const Tensor& t : tensors) fsum += t.fraction;
    for (Tensor& t : tensors) t.fraction /= fsum;
    if (in_ball > 0.5 && fiber > 0.5) out.fiber_mask.values[idx] = 1.0;
    const Eigen::VectorXd coef = fitter.fit(tensor_mixture_signal(scheme, tensors)).coefficients;
    std::copy(coef.data(), coef.data() + coef.size(), out.field.voxel(idx).begin());
  });
  return out;
}

field::DeformationField swirl(const field::Grid& grid, double theta0, double s) {
  if (!(s > 0.0)) throw Error(ErrorKind::Domain, "swirl width must be positive");
  const Vec3 c = grid.center();
  field::DeformationField phi(grid);
  for (size_t i = 0; i < grid.count(); ++i) {
    const Vec3 d = grid.point(i) - c;
    const double th = theta0 * std::exp(-d.squaredNorm() / (s * s));
    phi.map()[i] = c + Eigen::AngleAxisd(th, Vec3::UnitZ()).toRotationMatrix() * d;
  }
  return phi;
}

field::DeformationField random_warp(const field::Grid& grid, double amplitude, double sigma, std::uint64_t seed) {
  if (amplitude < 0.0) throw Error(ErrorKind::Domain, "warp amplitude must be >= 0");
  if (amplitude == 0.0) return field::DeformationField(grid);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  lddmm::MomentumTrajectory m = lddmm::MomentumTrajectory::zeros(grid, 10, sigma, 2);
  std::vector<Vec3> a(m.points());
  for (Vec3& v : a) v = Vec3(gauss(rng), gauss(rng), gauss(rng));
  for (auto& step : m.alpha) step = a;

  auto max_disp = [&](const lddmm::MomentumTrajectory& mm) {
    const field::DeformationField phi = lddmm::flow_forward(mm, grid).phi1();
    double d = 0.0;
    for (size_t i = 0; i < grid.count(); ++i) d = std::max(d, phi.displacement(i).norm());
    return d;
  };
  for (int it = 0; it < 4; ++it) {
    const double d = max_disp(m);
    if (d == 0.0) break;
    const double scale = amplitude / d;
    for (auto& step : m.alpha) {
      for (Vec3& v : step) v *= scale;
    }
  }
  return lddmm::flow_forward(m, grid).phi1();
}

std::vector<Subject> synthetic_ensemble(const field::CoefficientField& tmpl, int n, const EnsembleOptions& opt,
                                        std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::Domain, "ensemble size must be >= 1");
  std::vector<Subject> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = seed * 1000003ULL + static_cast<std::uint64_t>(i);
    double amp = opt.warp_amplitude;
    field::DeformationField phi;
    bool ok = false;
    for (int attempt = 0; attempt < 4 && !ok; ++attempt) {
      phi = random_warp(tmpl.grid(), amp, opt.warp_sigma, s);
      const field::ScalarField det = field::jacobian_determinant(phi);
      ok = std::all_of(det.values.begin(), det.values.end(), [](double v) { return v > 0.0; });
      if (!ok) amp *= 0.5;
    }
    if (!ok) throw Error(ErrorKind::Folding, "could not generate a non-folding warp");
    field::CoefficientField f = field::group_action(tmpl, phi);
    if (opt.noise_sd > 0.0) {
      std::mt19937_64 rng(s ^ 0x9e3779b97f4a7c15ULL);
      std::normal_distribution<double> gauss(0.0, opt.noise_sd);
      for (double& v : f.data()) v += gauss(rng);
    }
    out.push_back({std::move(f), std::move(phi)});
  }
  return out;
}

}  // namespace qflow::phantom
