// qflow: BFOR fitting, LDDMM registration, atlas estimation and evaluation.
//
// Exit codes: 0 success, 2 input error, 3 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qflow/atlas.hpp"
#include "qflow/bfor.hpp"
#include "qflow/error.hpp"
#include "qflow/evalx.hpp"
#include "qflow/io.hpp"
#include "qflow/lddmm.hpp"
#include "qflow/parallel.hpp"
#include "qflow/phantom.hpp"

namespace fs = std::filesystem;
using namespace qflow;

namespace {

constexpr int kOk = 0;
constexpr int kInput = 2;
constexpr int kNumeric = 3;

[[noreturn]] void input_error(const std::string& what) { throw Error(ErrorKind::Input, what); }

void require(const std::string& value, const char* flag) {
  if (value.empty()) input_error(std::string("missing required option --") + flag);
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) input_error("no such file: " + path);
}

field::CoefficientField load_bfor(const std::string& path) {
  require_file(path);
  return io::coefficient_field(io::read_volume(path));
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string dwi, scheme, out;
  int L = 4;
  int Nb = 6;
  double tau = 98.6875;
  double ridge = 1e-6;
};

int run_fit(const FitArgs& a) {
  require(a.dwi, "dwi");
  require(a.scheme, "scheme");
  require(a.out, "out");
  require_file(a.dwi);
  require_file(a.scheme);
  const io::Volume dwi = io::read_volume(a.dwi);
  if (dwi.kind != io::ChannelKind::Samples) input_error(a.dwi + " does not hold DWI samples");
  const phantom::EncodingScheme scheme = io::read_scheme(a.scheme);
  if (static_cast<int>(scheme.size()) != dwi.channels) {
    input_error("scheme has " + std::to_string(scheme.size()) + " samples but the volume has " +
                std::to_string(dwi.channels));
  }
  const bfor::BasisSpec spec(a.L, a.Nb, a.tau);
  const bfor::Fitter fitter(spec, scheme.qvectors(), a.ridge);

  field::CoefficientField out(dwi.grid, spec);
  {
    const phantom::Tensor water{3e-3 * Mat3::Identity(), 1.0};
    const Eigen::VectorXd cw = fitter.fit(phantom::tensor_mixture_signal(scheme, std::span(&water, 1))).coefficients;
    out.set_boundary(std::vector<double>(cw.data(), cw.data() + cw.size()));
  }
  const size_t K = static_cast<size_t>(dwi.channels);
  double sum = 0.0, worst = 0.0;
  for (size_t v = 0; v < dwi.grid.count(); ++v) {
    const bfor::FitResult r = fitter.fit(std::span<const double>(dwi.data.data() + v * K, K));
    std::copy(r.coefficients.data(), r.coefficients.data() + r.coefficients.size(), out.voxel(v).begin());
    sum += r.rms_residual;
    worst = std::max(worst, r.rms_residual);
  }
  io::write_volume(a.out, io::to_volume(out));
  std::printf("channels\t%d\nmean_rms_residual\t%.6g\nmax_rms_residual\t%.6g\n", spec.size(),
              sum / static_cast<double>(dwi.grid.count()), worst);
  return kOk;
}

// ---------------------------------------------------------------------------
// register

struct RegisterArgs {
  std::string atlas, subject, out_phi, out_momentum, report;
  lddmm::RegisterParams p;
  bool no_term_b = false;
};

int run_register(RegisterArgs a) {
  require(a.atlas, "atlas");
  require(a.subject, "subject");
  require(a.out_phi, "out-phi");
  const field::CoefficientField atlas = load_bfor(a.atlas);
  const field::CoefficientField subject = load_bfor(a.subject);
  a.p.with_term_B = !a.no_term_b;

  std::vector<lddmm::IterationRecord> rows;
  std::printf("iter\tJ\tmetric\tE\tstep\n");
  const lddmm::RegisterResult r = lddmm::register_fields(atlas, subject, a.p, [&](const lddmm::IterationRecord& rec) {
    std::printf("%d\t%.10g\t%.10g\t%.10g\t%.6g\n", rec.iter, rec.J, rec.metric, rec.E, rec.step);
    std::fflush(stdout);
  });
  io::write_volume(a.out_phi, io::to_volume(r.phi1));
  if (!a.out_momentum.empty()) io::write_momentum(a.out_momentum, r.momentum);
  if (!a.report.empty()) {
    std::ofstream rep(a.report);
    rep << "iter\tJ\tmetric\tE\tstep\n";
    char buf[160];
    for (const auto& rec : r.report) {
      std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", rec.iter, rec.J, rec.metric, rec.E, rec.step);
      rep << buf;
    }
    if (!rep) input_error("cannot write " + a.report);
  }
  std::fprintf(stderr, "status: %s\n", lddmm::to_string(r.status));
  return kOk;
}

// ---------------------------------------------------------------------------
// atlas

struct AtlasArgs {
  std::string subjects, hyperatlas, out, metrics, checkpoint_dir;
  atlas::AtlasParams p;
};

int run_atlas(AtlasArgs a) {
  require(a.subjects, "subjects");
  require(a.out, "out");
  require_file(a.subjects);
  std::vector<std::string> paths;
  {
    std::ifstream in(a.subjects);
    for (std::string line; std::getline(in, line);) {
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos || line[b] == '#') continue;
      std::string p = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
      if (fs::path(p).is_relative()) p = (fs::path(a.subjects).parent_path() / p).string();
      paths.push_back(p);
    }
  }
  if (paths.empty()) input_error(a.subjects + " lists no subjects");
  for (const auto& p : paths) require_file(p);
  std::vector<field::CoefficientField> subjects;
  for (const auto& p : paths) subjects.push_back(load_bfor(p));
  const field::CoefficientField hyper = a.hyperatlas.empty() ? subjects.front() : load_bfor(a.hyperatlas);
  if (!a.checkpoint_dir.empty()) fs::create_directories(a.checkpoint_dir);

  std::printf("iteration\tsigma2\tmetric_mean\tmetric_std\n");
  const atlas::AtlasState st = atlas::estimate_atlas(subjects, hyper, a.p, [&](const atlas::AtlasState& s) {
    const auto& h = s.history.back();
    std::printf("%d\t%.10g\t%.10g\t%.10g\n", h.iteration, h.sigma2, h.metric_mean, h.metric_std);
    std::fflush(stdout);
    if (!a.checkpoint_dir.empty()) {
      const fs::path base = fs::path(a.checkpoint_dir) / ("atlas_iter" + std::to_string(s.iteration));
      io::write_volume(base.string() + ".qv", io::to_volume(s.atlas));
      std::ofstream meta(base.string() + ".txt");
      meta << "iteration " << s.iteration << "\nsigma2 " << h.sigma2 << "\nmetrics";
      for (const auto& ps : s.per_subject) meta << ' ' << ps.metric;
      meta << '\n';
    }
  });
  if (st.aborted) throw Error(ErrorKind::Divergence, "atlas estimation aborted: " + st.abort_reason);
  io::write_volume(a.out, io::to_volume(st.atlas));
  if (!a.metrics.empty()) {
    std::ofstream m(a.metrics);
    m << "iteration\tsigma2\tmetric_mean\tmetric_std\n";
    char buf[160];
    for (const auto& h : st.history) {
      std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\n", h.iteration, h.sigma2, h.metric_mean, h.metric_std);
      m << buf;
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string a, b, mask, scheme;
  int skl_grid = 17;
};

int run_evaluate(const EvaluateArgs& e) {
  require(e.a, "a");
  require(e.b, "b");
  const field::CoefficientField fa = load_bfor(e.a);
  const field::CoefficientField fb = load_bfor(e.b);
  field::ScalarField mask;
  const field::ScalarField* mp = nullptr;
  if (!e.mask.empty()) {
    require_file(e.mask);
    mask = io::scalar_field(io::read_volume(e.mask));
    mp = &mask;
  }
  phantom::EncodingScheme scheme;
  if (e.scheme.empty()) {
    scheme = phantom::hydi_scheme();
  } else {
    require_file(e.scheme);
    scheme = io::read_scheme(e.scheme);
  }
  const std::vector<double> sq = evalx::shell_sq_diff(fa, fb, scheme, mp);
  const double skl = evalx::skl_divergence(fa, fb, mp, e.skl_grid);
  const std::vector<int> shells = scheme.weighted_shells();
  std::printf("metric\tshell\tb\tvalue\n");
  for (size_t i = 0; i < sq.size(); ++i) {
    std::printf("shell_sq_diff\t%zu\t%.6g\t%.10g\n", i + 1, scheme.shells[static_cast<size_t>(shells[i])].b, sq[i]);
  }
  std::printf("skl\t-\t-\t%.10g\n", skl);
  return kOk;
}

// ---------------------------------------------------------------------------
// phantom

struct PhantomArgs {
  std::string kind = "crossing";
  std::string out_dir = ".";
  int n = -1;
  std::uint64_t seed = 1;
  double warp = 4.0;
  double warp_sigma = 8.0;
  double noise = 0.0;
  int size = 16;
};

int run_phantom(const PhantomArgs& a) {
  phantom::TemplateOptions to;
  if (a.kind == "single") {
    to.kind = phantom::Kind::Single;
  } else if (a.kind != "crossing" && a.kind != "ensemble") {
    input_error("unknown phantom kind '" + a.kind + "'");
  }
  const int n = a.n >= 0 ? a.n : (a.kind == "ensemble" ? 5 : 1);
  if (a.size < 4) input_error("phantom size must be >= 4");
  to.size = a.size;
  // Keep the default proportions of the 16^3 phantom.
  to.ball_radius *= a.size / 16.0;
  to.tube_radius = std::max(2.0, to.tube_radius * a.size / 16.0);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const bfor::BasisSpec spec(4, 6, 98.6875);
  const phantom::EncodingScheme scheme = phantom::hydi_scheme();
  const phantom::Template t = phantom::make_template(to, spec, scheme);

  io::write_scheme(dir / "scheme.txt", scheme);
  io::write_volume(dir / "template.qv", io::to_volume(t.field));
  io::write_volume(dir / "fiber_mask.qv", io::to_volume(t.fiber_mask));
  {
    // Reconstructed template signal, for exercising `fit`.
    const auto qs = scheme.qvectors();
    const Eigen::MatrixXd A = bfor::design_matrix(spec, qs);
    std::vector<double> samples(t.field.grid().count() * qs.size());
    for (size_t v = 0; v < t.field.grid().count(); ++v) {
      const Eigen::Map<const Eigen::VectorXd> c(t.field.voxel(v).data(), spec.size());
      Eigen::Map<Eigen::VectorXd>(samples.data() + v * qs.size(), static_cast<Eigen::Index>(qs.size())) = A * c;
    }
    io::write_volume(dir / "template_dwi.qv",
                     io::samples_volume(t.field.grid(), static_cast<int>(qs.size()), std::move(samples)));
  }

  phantom::EnsembleOptions eo;
  eo.warp_amplitude = a.warp;
  eo.warp_sigma = a.warp_sigma;
  eo.noise_sd = a.noise;
  const auto subjects = n > 0 ? phantom::synthetic_ensemble(t.field, n, eo, a.seed) : std::vector<phantom::Subject>{};
  std::ofstream list(dir / "subjects.txt");
  for (size_t i = 0; i < subjects.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "subject_%02zu.qv", i);
    io::write_volume(dir / name, io::to_volume(subjects[i].field));
    std::snprintf(name, sizeof name, "phi_%02zu.qv", i);
    io::write_volume(dir / name, io::to_volume(subjects[i].phi));
    std::snprintf(name, sizeof name, "subject_%02zu.qv", i);
    list << name << '\n';
  }
  std::printf("wrote template and %zu subject(s) to %s\n", subjects.size(), dir.string().c_str());
  return kOk;
}

// Fill options that were not given on the command line from key=value pairs.
void apply_config(CLI::App& app, CLI::App& sub, const std::map<std::string, std::string>& cfg) {
  for (const auto& [key, value] : cfg) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (!opt || key == "config") input_error("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qflow: multi-shell diffusion registration and atlas estimation"};
  app.require_subcommand(1);
  int threads = 0;
  std::string config;
  app.add_option("--threads", threads, "Worker thread cap (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", config, "key=value file supplying any option; flags take precedence");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit BFOR coefficients to DWI samples");
  c_fit->add_option("--dwi", fit.dwi, "Samples volume");
  c_fit->add_option("--scheme", fit.scheme, "Scheme file (qx qy qz b)");
  c_fit->add_option("--out", fit.out, "Output coefficient volume");
  c_fit->add_option("--L", fit.L, "Angular order (even)");
  c_fit->add_option("--Nb", fit.Nb, "Radial order");
  c_fit->add_option("--tau", fit.tau, "q-space radius, mm^-1");
  c_fit->add_option("--ridge", fit.ridge, "Ridge weight");

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "Register an atlas to a subject");
  c_reg->add_option("--atlas", reg.atlas, "Atlas coefficient volume");
  c_reg->add_option("--subject", reg.subject, "Subject coefficient volume");
  c_reg->add_option("--out-phi", reg.out_phi, "Output deformation volume");
  c_reg->add_option("--out-momentum", reg.out_momentum, "Output momentum file");
  c_reg->add_option("--report", reg.report, "Per-iteration report (TSV)");
  c_reg->add_option("--sigma-v", reg.p.sigma_v, "Kernel width, mm");
  c_reg->add_option("--lambda", reg.p.lambda, "Matching weight");
  c_reg->add_option("--steps", reg.p.steps, "Time steps");
  c_reg->add_option("--max-iter", reg.p.max_iter, "Iteration cap");
  c_reg->add_option("--tol", reg.p.tol, "Relative J change for convergence");
  c_reg->add_option("--stride", reg.p.stride, "Control point stride");
  c_reg->add_flag("--no-term-b", reg.no_term_b, "Drop the reorientation term from the gradient");

  AtlasArgs atl;
  atl.p.registration.max_iter = 30;
  auto* c_atl = app.add_subcommand("atlas", "Estimate an atlas from a subject list");
  c_atl->add_option("--subjects", atl.subjects, "File listing subject volumes, one per line");
  c_atl->add_option("--hyperatlas", atl.hyperatlas, "Hyperatlas volume (default: first subject)");
  c_atl->add_option("--out", atl.out, "Output atlas volume");
  c_atl->add_option("--metrics", atl.metrics, "Per-iteration metrics table (TSV)");
  c_atl->add_option("--checkpoint-dir", atl.checkpoint_dir, "Write the atlas after every iteration");
  c_atl->add_option("--iters", atl.p.iterations, "EM iterations");
  c_atl->add_option("--sigma-v", atl.p.sigma_v, "Hyperatlas kernel width, mm");
  c_atl->add_option("--sigma-vpi", atl.p.sigma_vpi, "Subject kernel width, mm");
  c_atl->add_option("--steps", atl.p.registration.steps, "Time steps");
  c_atl->add_option("--max-iter", atl.p.registration.max_iter, "Iteration cap per registration");
  c_atl->add_option("--lambda", atl.p.registration.lambda, "Matching weight of the subject registrations");
  c_atl->add_option("--stride", atl.p.registration.stride, "Control point stride");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Per-shell signal differences and sKL between two volumes");
  c_ev->add_option("--a", ev.a, "First coefficient volume");
  c_ev->add_option("--b", ev.b, "Second coefficient volume");
  c_ev->add_option("--mask", ev.mask, "Scalar mask volume");
  c_ev->add_option("--scheme", ev.scheme, "Scheme file (default: five-shell HYDI)");
  c_ev->add_option("--skl-grid", ev.skl_grid, "EAP grid size (odd)");

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "Generate synthetic template and warped subjects");
  c_ph->add_option("--kind", ph.kind, "single | crossing | ensemble");
  c_ph->add_option("--n", ph.n, "Number of subjects (default 1, ensemble 5)");
  c_ph->add_option("--seed", ph.seed, "Random seed");
  c_ph->add_option("--warp", ph.warp, "Maximum warp displacement, mm");
  c_ph->add_option("--warp-sigma", ph.warp_sigma, "Warp kernel width, mm");
  c_ph->add_option("--noise", ph.noise, "Coefficient noise standard deviation");
  c_ph->add_option("--size", ph.size, "Grid size per axis");
  c_ph->add_option("--out-dir", ph.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInput;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config.empty()) {
      require_file(config);
      apply_config(app, *sub, io::read_config(config));
    }
    if (threads > 0) set_threads(threads);
    if (sub == c_fit) return run_fit(fit);
    if (sub == c_reg) return run_register(reg);
    if (sub == c_atl) return run_atlas(atl);
    if (sub == c_ev) return run_evaluate(ev);
    return run_phantom(ph);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.is_input_error() ? kInput : kNumeric;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInput;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  }
}
