#include "qflow/atlas.hpp"

#include <cmath>

#include <Eigen/LU>

#include "qflow/error.hpp"
#include "qflow/parallel.hpp"
#include "qflow/wigner.hpp"

namespace qflow::atlas {

using field::CoefficientField;
using field::DeformationField;
using field::ScalarField;

namespace {

void check_lists(std::span<const CoefficientField> subjects, std::span<const DeformationField> phis) {
  if (subjects.empty()) throw Error(ErrorKind::Input, "at least one subject is required");
  if (subjects.size() != phis.size()) throw Error(ErrorKind::Dimension, "subject and deformation counts differ");
  for (size_t i = 0; i < subjects.size(); ++i) {
    if (!(subjects[i].grid() == subjects[0].grid()) || !(subjects[i].spec() == subjects[0].spec()) ||
        !(phis[i].grid() == subjects[0].grid())) {
      throw Error(ErrorKind::Dimension, "subjects and deformations must share one grid and basis");
    }
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace

double update_sigma2(std::span<const CoefficientField> subjects, const CoefficientField& atlas,
                     std::span<const DeformationField> phis) {
  check_lists(subjects, phis);
  double s = 0.0;
  for (size_t i = 0; i < subjects.size(); ++i) s += lddmm::matching_energy(atlas, subjects[i], phis[i]);
  return s / static_cast<double>(subjects.size());
}

CoefficientField pullback(const CoefficientField& subject, const DeformationField& phi) {
  if (!(subject.grid() == phi.grid())) throw Error(ErrorKind::Dimension, "deformation grid mismatch");
  const field::Grid& g = subject.grid();
  const int L = subject.spec().order();
  CoefficientField out(g, subject.spec());
  out.set_boundary(subject.boundary());
  parallel_for(g.count(), [&](size_t idx) {
    const auto c = g.ijk(idx);
    const Mat3 J = field::jacobian(phi, c[0], c[1], c[2]);
    if (!(J.determinant() > 0.0)) throw Error(ErrorKind::Folding, "deformation folds at voxel " + std::to_string(idx));
    const Mat3 R = wigner::finite_strain_rotation(J);
    const std::vector<double> v = field::interpolate(subject, phi.map()[idx]);
    wigner::reorient(v, wigner::wigner_from_rotation_unchecked(R.transpose(), L), out.voxel(idx));
  });
  return out;
}

WeightedMean weighted_mean_field(std::span<const CoefficientField> subjects, std::span<const DeformationField> phis) {
  check_lists(subjects, phis);
  const field::Grid& g = subjects[0].grid();
  const size_t K = static_cast<size_t>(subjects[0].channels());
  WeightedMean out{CoefficientField(g, subjects[0].spec()), ScalarField(g, 0.0)};
  out.mean.set_boundary(subjects[0].boundary());
  for (size_t i = 0; i < subjects.size(); ++i) {
    const CoefficientField p = pullback(subjects[i], phis[i]);
    const ScalarField det = field::jacobian_determinant(phis[i]);
    for (size_t v = 0; v < g.count(); ++v) {
      const double w = det.values[v];
      out.weights.values[v] += w;
      for (size_t k = 0; k < K; ++k) out.mean.voxel(v)[k] += w * p.voxel(v)[k];
    }
  }
  for (size_t v = 0; v < g.count(); ++v) {
    const double w = out.weights.values[v];
    for (size_t k = 0; k < K; ++k) out.mean.voxel(v)[k] /= w;
  }
  return out;
}

lddmm::RegisterResult modified_register(const CoefficientField& hyperatlas, const CoefficientField& target_mean,
                                        const ScalarField& weights, double sigma2, lddmm::RegisterParams params) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw Error(ErrorKind::Domain, "sigma^2 must be positive");
  if (!(weights.grid == hyperatlas.grid())) throw Error(ErrorKind::Dimension, "weight volume grid mismatch");
  params.lambda = 1.0 / sigma2;
  params.weight = &weights;
  return lddmm::register_fields(hyperatlas, target_mean, params);
}

AtlasState estimate_atlas(std::span<const CoefficientField> subjects, const CoefficientField& hyperatlas,
                          const AtlasParams& params, const std::function<void(const AtlasState&)>& on_iteration) {
  if (subjects.empty()) throw Error(ErrorKind::Input, "atlas estimation needs at least one subject");
  if (!(params.sigma_v > params.sigma_vpi) || !(params.sigma_vpi > 0.0)) {
    throw Error(ErrorKind::Domain, "kernel widths must satisfy sigma_v > sigma_vpi > 0");
  }
  if (params.iterations < 1) throw Error(ErrorKind::Domain, "at least one EM iteration is required");
  for (const auto& s : subjects) {
    if (!(s.grid() == hyperatlas.grid()) || !(s.spec() == hyperatlas.spec())) {
      throw Error(ErrorKind::Dimension, "subjects must share the hyperatlas grid and basis");
    }
  }
  const field::Grid& g = hyperatlas.grid();
  const size_t n = subjects.size();

  AtlasState st;
  st.hyperatlas = hyperatlas;
  st.atlas = hyperatlas;
  st.m0 = lddmm::MomentumTrajectory::zeros(g, params.registration.steps, params.sigma_v, params.registration.stride);
  {
    const std::vector<DeformationField> ids(n, DeformationField(g));
    st.sigma2 = update_sigma2(subjects, hyperatlas, ids);
  }

  for (int it = 1; it <= params.iterations; ++it) {
    st.iteration = it;
    if (st.sigma2 == 0.0) {
      // Every subject already equals the atlas.
      st.per_subject.assign(n, SubjectState{lddmm::MomentumTrajectory::zeros(g, params.registration.steps,
                                                                             params.sigma_vpi,
                                                                             params.registration.stride),
                                            DeformationField(g), 0.0});
      st.history.push_back({it, 0.0, 0.0, 0.0});
      if (on_iteration) on_iteration(st);
      break;
    }

    lddmm::RegisterParams reg = params.registration;
    reg.sigma_v = params.sigma_vpi;
    reg.weight = nullptr;
    std::vector<SubjectState> per(n);
    std::vector<std::string> failure(n);
    parallel_for(n, [&](size_t i) {
      try {
        lddmm::RegisterResult r = lddmm::register_fields(st.atlas, subjects[i], reg);
        const double kin = r.report.empty() ? 0.0 : r.report.back().metric;
        per[i] = {std::move(r.momentum), std::move(r.phi1), std::sqrt(std::max(kin, 0.0))};
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Divergence && e.kind() != ErrorKind::Folding) throw;
        failure[i] = "subject " + std::to_string(i) + ": " + e.what();
      }
    });
    for (const auto& f : failure) {
      if (!f.empty()) {
        st.aborted = true;
        st.abort_reason = f;
        return st;
      }
    }
    st.per_subject = std::move(per);

    std::vector<DeformationField> phis;
    std::vector<double> metrics;
    for (const auto& s : st.per_subject) {
      phis.push_back(s.phi);
      metrics.push_back(s.metric);
    }
    WeightedMean wm;
    try {
      wm = weighted_mean_field(subjects, phis);
      st.sigma2 = update_sigma2(subjects, st.atlas, phis);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Folding && e.kind() != ErrorKind::InversionQuality) throw;
      st.aborted = true;
      st.abort_reason = e.what();
      return st;
    }
    st.history.push_back({it, st.sigma2, mean(metrics), stddev(metrics)});

    if (st.sigma2 > 0.0) {
      lddmm::RegisterParams mod = params.registration;
      mod.sigma_v = params.sigma_v;
      try {
        lddmm::RegisterResult r = modified_register(hyperatlas, wm.mean, wm.weights, st.sigma2, mod);
        st.m0 = std::move(r.momentum);
        st.atlas = field::group_action(hyperatlas, r.phi1);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Divergence && e.kind() != ErrorKind::Folding &&
            e.kind() != ErrorKind::InversionQuality) {
          throw;
        }
        st.aborted = true;
        st.abort_reason = std::string("hyperatlas: ") + e.what();
        return st;
      }
    }
    if (on_iteration) on_iteration(st);
  }
  return st;
}

}  // namespace qflow::atlas
