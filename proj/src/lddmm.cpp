#include "qflow/lddmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "qflow/error.hpp"
#include "qflow/parallel.hpp"

namespace qflow::lddmm {

using field::CoefficientField;
using field::DeformationField;
using field::Grid;
using simd::Soa3;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Soa3 soa(std::span<const Vec3> v) { return Soa3(v); }

void add_scaled(Soa3& y, double a, const Soa3& x) {
  for (size_t i = 0; i < y.size(); ++i) {
    y.x[i] += a * x.x[i];
    y.y[i] += a * x.y[i];
    y.z[i] += a * x.z[i];
  }
}

Soa3 sum(const Soa3& a, const Soa3& b) {
  Soa3 out = a;
  add_scaled(out, 1.0, b);
  return out;
}

bool all_finite(const Soa3& v) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v.x[i]) || !std::isfinite(v.y[i]) || !std::isfinite(v.z[i])) return false;
  }
  return true;
}

double inv_sigma2(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::Domain, "kernel width must be positive");
  return 1.0 / (sigma * sigma);
}

// Finite-difference stencil of D phi along one axis at voxel (i,j,k).
struct AxisStencil {
  size_t lo, hi;
  double inv;  // 1 / (span * h)
  bool active;
};

AxisStencil stencil(const Grid& g, const std::array<int, 3>& c, int a) {
  const int n = g.dims[a];
  if (n == 1) return {0, 0, 0.0, false};
  std::array<int, 3> lo = c, hi = c;
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
  return {g.index(lo[0], lo[1], lo[2]), g.index(hi[0], hi[1], hi[2]), 1.0 / (span * g.spacing[a]), true};
}

}  // namespace

std::vector<Vec3> kernel_apply(std::span<const Vec3> a, std::span<const Vec3> b, std::span<const Vec3> vb,
                               double sigma) {
  if (b.size() != vb.size()) throw Error(ErrorKind::Dimension, "kernel_apply: source/vector count mismatch");
  Soa3 out;
  simd::gaussian_apply(soa(a), soa(b), soa(vb), inv_sigma2(sigma), out);
  return out.to_vec3();
}

std::vector<Vec3> control_points(const Grid& grid, int stride) {
  if (stride < 1) throw Error(ErrorKind::Domain, "control-point stride must be >= 1");
  std::vector<Vec3> pts;
  for (int k = 0; k < grid.dims[2]; k += stride) {
    for (int j = 0; j < grid.dims[1]; j += stride) {
      for (int i = 0; i < grid.dims[0]; i += stride) pts.push_back(grid.point(i, j, k));
    }
  }
  return pts;
}

MomentumTrajectory MomentumTrajectory::zeros(const Grid& grid, int steps, double sigma, int stride) {
  if (steps < 1) throw Error(ErrorKind::Domain, "flow needs at least one time step");
  inv_sigma2(sigma);
  MomentumTrajectory m;
  m.steps = steps;
  m.sigma = sigma;
  m.stride = stride;
  m.control = control_points(grid, stride);
  m.alpha.assign(static_cast<size_t>(steps), std::vector<Vec3>(m.control.size(), Vec3::Zero()));
  return m;
}

void MomentumTrajectory::axpy(double a, const MomentumTrajectory& x) {
  for (size_t t = 0; t < alpha.size(); ++t) {
    for (size_t i = 0; i < alpha[t].size(); ++i) alpha[t][i] += a * x.alpha[t][i];
  }
}

double MomentumTrajectory::dot(const MomentumTrajectory& other) const {
  double s = 0.0;
  for (size_t t = 0; t < alpha.size(); ++t) {
    for (size_t i = 0; i < alpha[t].size(); ++i) s += alpha[t][i].dot(other.alpha[t][i]);
  }
  return s;
}

bool MomentumTrajectory::is_zero() const {
  for (const auto& a : alpha) {
    for (const Vec3& v : a) {
      if (v != Vec3::Zero()) return false;
    }
  }
  return true;
}

DeformationField Flow::phi(int t) const { return DeformationField(grid, p[static_cast<size_t>(t)].to_vec3()); }

Flow flow_forward(const MomentumTrajectory& m, const Grid& grid) {
  const double is2 = inv_sigma2(m.sigma);
  const double dt = m.dt();
  Flow f;
  f.grid = grid;
  f.q.reserve(static_cast<size_t>(m.steps) + 1);
  f.p.reserve(static_cast<size_t>(m.steps) + 1);
  f.q.push_back(soa(m.control));
  {
    Soa3 p0(grid.count());
    for (size_t i = 0; i < grid.count(); ++i) p0.set(i, grid.point(i));
    f.p.push_back(std::move(p0));
  }
  Soa3 vq, vp;
  for (int t = 0; t < m.steps; ++t) {
    const Soa3 a = soa(m.alpha[static_cast<size_t>(t)]);
    const Soa3& q = f.q.back();
    const Soa3& p = f.p.back();
    simd::gaussian_apply(q, q, a, is2, vq);
    simd::gaussian_apply(p, q, a, is2, vp);
    Soa3 qn = q, pn = p;
    add_scaled(qn, dt, vq);
    add_scaled(pn, dt, vp);
    if (!all_finite(qn) || !all_finite(pn)) {
      throw Error(ErrorKind::Divergence, "flow diverged at step " + std::to_string(t + 1));
    }
    f.q.push_back(std::move(qn));
    f.p.push_back(std::move(pn));
  }
  return f;
}

std::vector<double> kinetic_per_step(const MomentumTrajectory& m, const Flow& flow) {
  const double is2 = inv_sigma2(m.sigma);
  std::vector<double> out(static_cast<size_t>(m.steps));
  Soa3 ka;
  for (int t = 0; t < m.steps; ++t) {
    const Soa3 a = soa(m.alpha[static_cast<size_t>(t)]);
    simd::gaussian_apply(flow.q[static_cast<size_t>(t)], flow.q[static_cast<size_t>(t)], a, is2, ka);
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.x[i] * ka.x[i] + a.y[i] * ka.y[i] + a.z[i] * ka.z[i];
    out[static_cast<size_t>(t)] = s;
  }
  return out;
}

double kinetic_energy(const MomentumTrajectory& m, const Flow& flow) {
  const std::vector<double> k = kinetic_per_step(m, flow);
  return m.dt() * std::accumulate(k.begin(), k.end(), 0.0);
}

double matching_energy(const CoefficientField& atlas, const CoefficientField& subject, const DeformationField& phi1) {
  if (!(atlas.grid() == subject.grid()) || !(atlas.spec() == subject.spec())) {
    throw Error(ErrorKind::Dimension, "atlas and subject must share grid and basis");
  }
  const CoefficientField moved = field::group_action(atlas, phi1);
  double s = 0.0;
  for (size_t i = 0; i < moved.data().size(); ++i) {
    const double d = moved.data()[i] - subject.data()[i];
    s += d * d;
  }
  return s * atlas.grid().voxel_volume();
}

MatchingTerm::MatchingTerm(const CoefficientField& atlas, const CoefficientField& subject, EnergyOptions opt)
    : atlas_(atlas), subject_(subject), opt_(opt), drot_(atlas.spec().order(), opt.delta) {
  if (!(atlas.grid() == subject.grid()) || !(atlas.spec() == subject.spec())) {
    throw Error(ErrorKind::Dimension, "atlas and subject must share grid and basis");
  }
  if (opt.weight && !(opt.weight->grid == atlas.grid())) {
    throw Error(ErrorKind::Dimension, "weight volume grid mismatch");
  }
  if (opt.frozen_rotations && opt.frozen_rotations->size() != atlas.grid().count()) {
    throw Error(ErrorKind::Dimension, "frozen rotation count mismatch");
  }
}

double MatchingTerm::energy(const DeformationField& phi1) const { return evaluate(phi1, nullptr); }

double MatchingTerm::energy_and_gradient(const DeformationField& phi1, std::vector<Vec3>& grad) const {
  return evaluate(phi1, &grad);
}

std::vector<Mat3> finite_strain_rotations(const DeformationField& phi) {
  const std::vector<Mat3> jac = field::jacobian_field(phi);
  std::vector<Mat3> out(jac.size());
  parallel_for(jac.size(), [&](size_t i) { out[i] = wigner::finite_strain_rotation(jac[i]); });
  return out;
}

double MatchingTerm::evaluate(const DeformationField& phi1, std::vector<Vec3>* grad) const {
  const Grid& g = atlas_.grid();
  if (!(phi1.grid() == g)) throw Error(ErrorKind::Dimension, "deformation grid mismatch");
  const size_t n = g.count();
  const auto nc = static_cast<size_t>(atlas_.channels());
  const int L = atlas_.spec().order();
  const double dv = g.voxel_volume();
  const bool term_b = opt_.with_term_B && opt_.frozen_rotations == nullptr;

  const std::vector<Mat3> jac = field::jacobian_field(phi1);
  for (const Mat3& j : jac) {
    if (!(j.determinant() > 0.0)) {
      if (grad) grad->assign(n, Vec3::Zero());
      return kInf;
    }
  }

  std::vector<double> e(n, 0.0);
  std::vector<Vec3> direct;
  std::vector<Mat3> G;
  if (grad) {
    direct.assign(n, Vec3::Zero());
    G.assign(n, Mat3::Zero());
  }

  parallel_for(n, [&](size_t idx) {
    thread_local std::vector<double> c_hat, s, res;
    thread_local Eigen::Matrix<double, Eigen::Dynamic, 3> ds;
    thread_local Eigen::Matrix<double, 3, Eigen::Dynamic> dc;
    c_hat.resize(nc);
    s.resize(nc);
    res.resize(nc);

    const Mat3& J = jac[idx];
    const double det = J.determinant();
    const Mat3 R = opt_.frozen_rotations ? (*opt_.frozen_rotations)[idx] : wigner::finite_strain_rotation(J);
    wigner::reorient(atlas_.voxel(idx), wigner::wigner_from_rotation_unchecked(R, L), c_hat);

    const Vec3 y = phi1.map()[idx];
    Vec3 gw = Vec3::Zero();
    const double w = opt_.weight ? field::interpolate(*opt_.weight, y, grad ? &gw : nullptr) : 1.0;
    if (grad) {
      ds.resize(static_cast<Eigen::Index>(nc), 3);
      field::interpolate_with_gradient(subject_, y, s, ds);
    } else {
      field::interpolate(subject_, y, s);
    }
    const auto m = static_cast<Eigen::Index>(nc);
    Eigen::Map<Eigen::VectorXd> r(res.data(), m);
    r = Eigen::Map<const Eigen::VectorXd>(c_hat.data(), m) - Eigen::Map<const Eigen::VectorXd>(s.data(), m);
    const double rr = r.squaredNorm();
    e[idx] = w * rr * det * dv;
    if (!grad) return;

    direct[idx] = dv * det * (gw * rr - 2.0 * w * (ds.transpose() * r));
    Mat3 Gx = (dv * w * det * rr) * J.inverse().transpose();
    if (term_b && w != 0.0) {
      dc.resize(3, m);
      drot_.apply(c_hat, dc);
      const Vec3 v = dc * r;
      const Mat3 F = wigner::finite_strain_differential(J, R);
      const Vec3 z = 2.0 * F.transpose() * R.transpose() * v;
      for (int i = 0; i < 3; ++i) {
        const Vec3 ri = R.row(i).transpose();
        Gx.row(i) += (dv * w * det) * z.cross(ri).transpose();
      }
    }
    G[idx] = Gx;
  });

  const double total = std::accumulate(e.begin(), e.end(), 0.0);
  if (!grad) return total;

  *grad = std::move(direct);
  for (size_t idx = 0; idx < n; ++idx) {
    const auto c = g.ijk(idx);
    for (int a = 0; a < 3; ++a) {
      const AxisStencil st = stencil(g, c, a);
      if (!st.active) continue;
      const Vec3 col = G[idx].col(a) * st.inv;
      (*grad)[st.hi] += col;
      (*grad)[st.lo] -= col;
    }
  }
  return total;
}

std::vector<Vec3> gradient_E(const CoefficientField& atlas, const CoefficientField& subject,
                             const DeformationField& phi1, const EnergyOptions& opt) {
  std::vector<Vec3> grad;
  const double e = MatchingTerm(atlas, subject, opt).energy_and_gradient(phi1, grad);
  if (!std::isfinite(e)) throw Error(ErrorKind::Folding, "gradient requested at a folded deformation");
  return grad;
}

Adjoint adjoint_backward(const MomentumTrajectory& m, const Flow& flow, std::span<const Vec3> gradE,
                         double lambda) {
  const double is2 = inv_sigma2(m.sigma);
  const double dt = m.dt();
  const auto T = static_cast<size_t>(m.steps);
  if (gradE.size() != flow.p.front().size()) throw Error(ErrorKind::Dimension, "gradient size mismatch");
  Adjoint adj;
  adj.eta_q.resize(T + 1);
  adj.eta_p.resize(T + 1);
  adj.eta_q[T] = Soa3(m.points());
  adj.eta_p[T] = Soa3(gradE.size());
  for (size_t i = 0; i < gradE.size(); ++i) adj.eta_p[T].set(i, lambda * gradE[i]);

  Soa3 t1, t2, t3, t4;
  for (size_t k = T; k-- > 0;) {
    const Soa3 a = soa(m.alpha[k]);
    const Soa3& q = flow.q[k];
    const Soa3& p = flow.p[k];
    const Soa3& eq = adj.eta_q[k + 1];
    const Soa3& ep = adj.eta_p[k + 1];

    simd::weighted_displacement(p, q, ep, a, is2, t1);
    Soa3 np = ep;
    add_scaled(np, dt, t1);
    adj.eta_p[k] = std::move(np);

    const Soa3 ea = sum(eq, a);
    simd::weighted_displacement(q, q, ea, a, is2, t2);
    simd::weighted_displacement(q, q, a, ea, is2, t3);
    simd::weighted_displacement(q, p, a, ep, is2, t4);
    Soa3 nq = eq;
    add_scaled(nq, dt, t2);
    add_scaled(nq, dt, t3);
    add_scaled(nq, dt, t4);
    adj.eta_q[k] = std::move(nq);
  }
  return adj;
}

MomentumTrajectory objective_gradient(const MomentumTrajectory& m, const Flow& flow, const Adjoint& adj) {
  const double is2 = inv_sigma2(m.sigma);
  const double dt = m.dt();
  MomentumTrajectory g = m;
  Soa3 k1, k2;
  for (size_t t = 0; t < m.alpha.size(); ++t) {
    Soa3 w = soa(m.alpha[t]);
    for (size_t i = 0; i < w.size(); ++i) w.set(i, 2.0 * w[i] + adj.eta_q[t + 1][i]);
    simd::gaussian_apply(flow.q[t], flow.q[t], w, is2, k1);
    simd::gaussian_apply(flow.q[t], flow.p[t], adj.eta_p[t + 1], is2, k2);
    for (size_t i = 0; i < w.size(); ++i) g.alpha[t][i] = dt * (k1[i] + k2[i]);
  }
  return g;
}

namespace {

// Trilinear weights of every grid voxel on the control lattice.
struct Gather {
  std::vector<std::array<size_t, 8>> idx;
  std::vector<std::array<double, 8>> w;
};

Gather build_gather(const Grid& g, int stride) {
  std::array<int, 3> nc{};
  for (int a = 0; a < 3; ++a) nc[a] = (g.dims[a] - 1) / stride + 1;
  Gather out;
  out.idx.resize(g.count());
  out.w.resize(g.count());
  for (size_t v = 0; v < g.count(); ++v) {
    const auto c = g.ijk(v);
    std::array<int, 3> i0{};
    std::array<double, 3> f{};
    for (int a = 0; a < 3; ++a) {
      const double t = static_cast<double>(c[a]) / stride;
      i0[a] = nc[a] == 1 ? 0 : std::min(static_cast<int>(t), nc[a] - 2);
      f[a] = nc[a] == 1 ? 0.0 : std::min(1.0, t - i0[a]);
    }
    for (int corner = 0; corner < 8; ++corner) {
      const int d[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
      std::array<int, 3> l{};
      double w = 1.0;
      for (int a = 0; a < 3; ++a) {
        l[a] = std::min(i0[a] + d[a], nc[a] - 1);
        w *= d[a] ? f[a] : 1.0 - f[a];
      }
      out.idx[v][static_cast<size_t>(corner)] =
          static_cast<size_t>(l[0]) + static_cast<size_t>(nc[0]) * (static_cast<size_t>(l[1]) + static_cast<size_t>(nc[1]) * static_cast<size_t>(l[2]));
      out.w[v][static_cast<size_t>(corner)] = w;
    }
  }
  return out;
}

}  // namespace

MomentumTrajectory kernel_gradient(const MomentumTrajectory& m, const Flow& flow, const Adjoint& adj) {
  const Gather gather = build_gather(flow.grid, m.stride);
  MomentumTrajectory d = m;
  for (size_t t = 0; t < m.alpha.size(); ++t) {
    std::vector<Vec3>& out = d.alpha[t];
    for (size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * m.alpha[t][i] + adj.eta_q[t + 1][i];
    const Soa3& ep = adj.eta_p[t + 1];
    for (size_t v = 0; v < ep.size(); ++v) {
      const Vec3 e = ep[v];
      for (size_t c = 0; c < 8; ++c) {
        if (gather.w[v][c] != 0.0) out[gather.idx[v][c]] += gather.w[v][c] * e;
      }
    }
  }
  return d;
}

Objective evaluate_objective(const MomentumTrajectory& m, const Grid& grid, const MatchingTerm& term,
                             double lambda) {
  Objective o;
  try {
    const Flow flow = flow_forward(m, grid);
    o.kinetic = kinetic_energy(m, flow);
    o.E = term.energy(flow.phi1());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Divergence && e.kind() != ErrorKind::Folding) throw;
    o.E = kInf;
  }
  o.J = o.kinetic + lambda * o.E;
  if (!std::isfinite(o.J)) o.J = kInf;
  return o;
}

const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::MaxIterations: return "max-iterations";
    case Status::LineSearchExhausted: return "line-search-exhausted";
  }
  return "unknown";
}

namespace {

struct GradientState {
  Objective obj;
  MomentumTrajectory euclid;
  MomentumTrajectory precond;
};

GradientState compute_gradient(const MomentumTrajectory& m, const Grid& grid, const MatchingTerm& term,
                               double lambda) {
  GradientState s;
  const Flow flow = flow_forward(m, grid);
  std::vector<Vec3> gE;
  s.obj.kinetic = kinetic_energy(m, flow);
  s.obj.E = term.energy_and_gradient(flow.phi1(), gE);
  s.obj.J = s.obj.kinetic + lambda * s.obj.E;
  if (!std::isfinite(s.obj.J)) throw Error(ErrorKind::Divergence, "objective is not finite at an accepted iterate");
  const Adjoint adj = adjoint_backward(m, flow, gE, lambda);
  s.euclid = objective_gradient(m, flow, adj);
  s.precond = kernel_gradient(m, flow, adj);
  for (const auto& a : s.euclid.alpha) {
    for (const Vec3& v : a) {
      if (!v.allFinite()) throw Error(ErrorKind::Divergence, "gradient is not finite");
    }
  }
  return s;
}

double max_displacement(const MomentumTrajectory& m, const Grid& grid) {
  const Flow f = flow_forward(m, grid);
  double d = 0.0;
  for (size_t i = 0; i < f.p.back().size(); ++i) d = std::max(d, (f.p.back()[i] - f.p.front()[i]).norm());
  return d;
}

}  // namespace

RegisterResult register_fields(const CoefficientField& atlas, const CoefficientField& subject,
                               const RegisterParams& params,
                               const std::function<void(const IterationRecord&)>& on_iter) {
  if (!(params.lambda > 0.0)) throw Error(ErrorKind::Domain, "lambda must be positive");
  if (params.max_iter < 0) throw Error(ErrorKind::Domain, "max_iter must be >= 0");
  const Grid& grid = atlas.grid();
  EnergyOptions eopt;
  eopt.with_term_B = params.with_term_B;
  eopt.delta = params.delta;
  eopt.weight = params.weight;
  const MatchingTerm term(atlas, subject, eopt);
  const double lambda = params.lambda;

  RegisterResult res;
  MomentumTrajectory m = MomentumTrajectory::zeros(grid, params.steps, params.sigma_v, params.stride);
  GradientState cur = compute_gradient(m, grid, term, lambda);
  auto record = [&](int iter, double step) {
    IterationRecord r{iter, cur.obj.J, cur.obj.kinetic, cur.obj.E, step};
    res.report.push_back(r);
    if (on_iter) on_iter(r);
  };
  record(0, 0.0);

  auto finish = [&](Status st) {
    res.status = st;
    res.phi1 = flow_forward(m, grid).phi1();
    res.momentum = std::move(m);
    return std::move(res);
  };

  if (cur.obj.E == 0.0 || cur.euclid.dot(cur.euclid) == 0.0) return finish(Status::Converged);

  MomentumTrajectory dir = cur.precond;
  dir.axpy(-2.0, cur.precond);  // dir = -precond
  double eps_max = 0.0;
  int small_changes = 0;
  constexpr double kGolden = 0.6180339887498949;

  for (int it = 1; it <= params.max_iter; ++it) {
    double slope = dir.dot(cur.euclid);
    if (!(slope < 0.0)) {
      dir = cur.precond;
      dir.axpy(-2.0, cur.precond);
      slope = dir.dot(cur.euclid);
      if (!(slope < 0.0)) {
        dir = cur.euclid;
        dir.axpy(-2.0, cur.euclid);
      }
    }
    if (eps_max == 0.0) {
      const double d1 = max_displacement([&] {
        MomentumTrajectory probe = m;
        probe.axpy(1.0, dir);
        return probe;
      }(), grid);
      eps_max = d1 > 0.0 ? params.initial_step_voxels * grid.min_spacing() / d1 : 1.0;
    }

    auto J_at = [&](double eps) {
      MomentumTrajectory trial = m;
      trial.axpy(eps, dir);
      return evaluate_objective(trial, grid, term, lambda).J;
    };

    double best_eps = 0.0, best_J = cur.obj.J;
    for (int attempt = 0; attempt < 4 && best_eps == 0.0; ++attempt) {
      double lo = 0.0, hi = eps_max;
      double c = hi - kGolden * (hi - lo), d = lo + kGolden * (hi - lo);
      double fc = J_at(c), fd = J_at(d);
      int evals = 2;
      auto consider = [&](double e, double f) {
        if (f < best_J) {
          best_J = f;
          best_eps = e;
        }
      };
      consider(c, fc);
      consider(d, fd);
      while (evals < params.max_line_evals && (hi - lo) > params.line_tol * eps_max) {
        if (fc <= fd) {
          hi = d;
          d = c;
          fd = fc;
          c = hi - kGolden * (hi - lo);
          fc = J_at(c);
          consider(c, fc);
        } else {
          lo = c;
          c = d;
          fc = fd;
          d = lo + kGolden * (hi - lo);
          fd = J_at(d);
          consider(d, fd);
        }
        ++evals;
      }
      if (best_eps == 0.0) eps_max *= 0.25;
    }
    if (best_eps == 0.0) return finish(Status::LineSearchExhausted);

    m.axpy(best_eps, dir);
    const double prev_J = cur.obj.J;
    const GradientState prev = std::move(cur);
    cur = compute_gradient(m, grid, term, lambda);
    record(it, best_eps);

    if (best_eps > 0.6 * eps_max) {
      eps_max *= 2.0;
    } else if (best_eps < 0.2 * eps_max) {
      eps_max *= 0.5;
    }

    const double rel = std::abs(prev_J - cur.obj.J) / std::max(std::abs(prev_J), 1e-300);
    small_changes = rel < params.tol ? small_changes + 1 : 0;
    if (small_changes >= 3 || cur.obj.J == 0.0) return finish(Status::Converged);

    // Polak-Ribiere in the preconditioned metric, restarted every 10 iterations
    double beta = 0.0;
    if (it % 10 != 0) {
      const double den = prev.euclid.dot(prev.precond);
      if (den > 0.0) {
        beta = (cur.euclid.dot(cur.precond) - cur.euclid.dot(prev.precond)) / den;
        beta = std::max(0.0, beta);
      }
    }
    MomentumTrajectory next = cur.precond;
    next.axpy(-2.0, cur.precond);
    next.axpy(beta, dir);
    dir = std::move(next);
  }
  return finish(Status::MaxIterations);
}

}  // namespace qflow::lddmm
