#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mixforge/tangent_adjoint.hpp"
#include "mixforge/verify.hpp"

namespace fs = std::filesystem;
using namespace mixforge;

namespace {

const std::vector<std::string> kCommands = {"noise-sample", "simulate",   "tangent-check", "calibrate-inverse",
                                            "couple-step",  "mixing-run", "stationary",    "verify-all"};

struct Run {
  std::string command;
  Config cfg;
  std::uint64_t seed = 1;
  fs::path out;
  int verbosity = 0;

  std::ofstream open(const std::string& name) const {
    std::ofstream os(out / name);
    if (!os) throw std::runtime_error("cannot write " + (out / name).string());
    return os;
  }
  void log(const std::string& s) const {
    if (verbosity > 0) std::cerr << s << "\n";
  }
};

struct Setup {
  FlowModel model;
  SpatialBasis basis;
  std::shared_ptr<const NoiseSpec> spec;
  explicit Setup(const Config& c)
      : model(c.flow_config()),
        basis(c.model_kind(), model.grid(), c.flow.sobolev_m, c.noise.modes),
        spec(std::make_shared<NoiseSpec>(c.noise_spec())) {}
};

void write_calibration_summary(std::ostream& os, const CouplingCalibration& cal, const KantorovichDensity& kd) {
  os.precision(17);
  os << "key,value\n";
  os << "epsilon," << cal.epsilon << "\nachieved," << (cal.inverse.achieved ? 1 : 0) << '\n';
  os << "r," << cal.params.r << "\nM," << cal.params.M << "\nC_eps," << cal.params.C_eps << '\n';
  os << "delta," << cal.params.delta << "\nC1," << cal.C1 << "\nd0," << cal.params.d0 << '\n';
  os << "gamma," << cal.gamma_linear << "\nbeta," << cal.beta_linear << "\np," << cal.p_small_set << '\n';
  os << "R0," << kd.R0 << "\nR_star," << kd.R_star << "\nN0," << kd.N0 << "\nok," << (cal.ok ? 1 : 0) << '\n';
}

struct Calibrated {
  CouplingCalibration cal;
  KantorovichDensity kd;
};

Calibrated calibrate_all(const Run& run, const Setup& s) {
  run.log("calibrating coupling");
  Calibrated c;
  c.cal = calibrate_coupling(s.model, s.basis, s.spec, run.cfg.calibration_config(), run.seed);
  run.cfg.apply_numerics(c.cal.params);
  const double R0 = c.cal.beta_linear / (1.0 - c.cal.gamma_linear);
  c.kd = build_kantorovich_f(c.cal.gamma_linear, c.cal.beta_linear, run.cfg.coupling.r_star_factor * R0,
                             c.cal.params.d0, c.cal.p_small_set, run.cfg.coupling.p1_ratio * c.cal.p_small_set);
  auto os = run.open("coupling_calibration.csv");
  write_calibration_summary(os, c.cal, c.kd);
  return c;
}

BasePoint reference_base(const Run& run, const Setup& s) {
  const auto pool = typical_states(s.model, s.basis, s.spec, 1, run.cfg.coupling.warmup_steps, run.seed);
  RngStream rng(run.seed, 0xba5e);
  return make_base_point(s.model, s.basis, pool[0], sample_noise_path(s.spec, rng));
}

int noise_sample(const Run& run) {
  const Setup s(run.cfg);
  RngStream rng(run.seed, 0x4e);
  auto os = run.open("noise_path.csv");
  if (s.spec->kick_mode) {
    write_field_csv(os, kick_sample(*s.spec, s.basis, rng));
  } else {
    write_path_csv(os, sample_noise_path(s.spec, rng));
  }
  return 0;
}

int simulate(const Run& run) {
  const Setup s(run.cfg);
  const int m = s.model.state_index();
  SpectralField u = s.model.zero_field();
  auto os = run.open("trajectory.csv");
  os.precision(17);
  os << "step,norm0,norm_m,sup_norm\n";
  os << 0 << ',' << 0.0 << ',' << 0.0 << ',' << 0.0 << '\n';
  for (int k = 1; k <= run.cfg.run.steps; ++k) {
    RngStream rng(run.seed, 0x51, k);
    if (s.spec->kick_mode) {
      u = flow_map(s.model, s.basis, u, zero_path(s.spec));
      u += kick_sample(*s.spec, s.basis, rng);
    } else {
      u = flow_map(s.model, s.basis, u, sample_noise_path(s.spec, rng));
    }
    os << k << ',' << sobolev_norm(u, 0) << ',' << sobolev_norm(u, m) << ',' << s.model.sup_norm(u) << '\n';
  }
  auto fs_ = run.open("field.csv");
  write_field_csv(fs_, u);
  return 0;
}

int tangent_check(const Run& run) {
  const Setup s(run.cfg);
  const BasePoint base = reference_base(run, s);
  const TangentOperator A = assemble_A(s.model, s.basis, base, -1, run.cfg.calibration_config().gram);
  {
    auto os = run.open("tangent_operator.csv");
    A.write_csv(os);
    auto gs = run.open("tangent_gram.csv");
    A.write_gram_csv(gs);
  }
  auto os = run.open("fd_check.csv");
  os.precision(17);
  os << "direction,eps,remainder,ratio\n";
  RngStream rng(run.seed, 0xfd);
  const int D = s.spec->dimension();
  for (int d = 0; d < run.cfg.run.fd_directions; ++d) {
    const SpectralField h = random_field(s.model, rng, 1.0);
    Eigen::VectorXd dxi(D);
    for (int i = 0; i < D; ++i) dxi[i] = rng.normal();
    dxi.normalize();
    for (const auto& row : fd_check(s.model, s.basis, base, h, dxi, {1e-2, 1e-3, 1e-4}))
      os << d << ',' << row.eps << ',' << row.remainder << ',' << row.ratio << '\n';
  }
  const SpectralField h = random_field(s.model, rng, 1.0);
  const SpectralField w1 = random_field(s.model, rng, 1.0);
  Eigen::VectorXd dxi(D);
  for (int i = 0; i < D; ++i) dxi[i] = rng.normal();
  const double lhs = l2_inner(tangent_flow(s.model, s.basis, base, h, dxi), w1);
  const AdjointResult adj = adjoint_flow(s.model, s.basis, base, w1);
  const double rhs = l2_inner(h, adj.w.front()) + adj.noise_gradient.dot(dxi);
  auto ps = run.open("pairing.csv");
  ps.precision(17);
  ps << "tangent_pairing,adjoint_pairing,relative_difference\n"
     << lhs << ',' << rhs << ',' << std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300) << '\n';
  return 0;
}

int calibrate_inverse(const Run& run) {
  const Setup s(run.cfg);
  const int m = s.model.state_index();
  const BasePoint base = reference_base(run, s);
  const auto cc = run.cfg.calibration_config();
  const TangentOperator A = assemble_A(s.model, s.basis, base, -1, cc.gram);
  const StateCoords coords(s.model.model(), s.model.grid(), m);
  RngStream rng(run.seed, 0xca1);
  std::vector<Eigen::VectorXd> tests;
  std::vector<double> vn;
  for (int t = 0; t < cc.test_fields; ++t) {
    const SpectralField f = tangent_flow(s.model, s.basis, base, random_field(s.model, rng, 1.0), Eigen::VectorXd());
    tests.push_back(coords.to_vector(f));
    vn.push_back(sobolev_norm(f, m + 1));
  }
  const Calibration cal = calibrate(A, tests, vn, cc.epsilon, {}, {}, cc.projection);
  auto os = run.open("calibration.csv");
  write_calibration_csv(os, cal);
  std::cout << "r = " << cal.r << ", M = " << cal.M << ", defect ratio = " << cal.defect_ratio
            << (cal.achieved ? "" : " (epsilon not reached)") << (cal.monotone ? "" : ", lattice not monotone") << "\n";
  return 0;
}

int couple_step(const Run& run) {
  const Setup s(run.cfg);
  const Calibrated c = calibrate_all(run, s);
  const CouplingEngine engine(s.model, s.basis, s.spec, c.cal.params);
  const auto pool = typical_states(s.model, s.basis, s.spec, 1, run.cfg.coupling.warmup_steps, run.seed);
  RngStream init(run.seed, 0xc0);
  SpectralField u = pool[0];
  SpectralField up = u;
  up.axpy(0.5 * c.cal.params.delta, random_field(s.model, init, 1.0));
  auto os = run.open("coupling_steps.csv");
  write_step_csv_header(os);
  for (int k = 1; k <= run.cfg.run.steps; ++k) {
    RngStream rng(run.seed, 0xc1, k);
    CouplingOutcome o = engine.coupled_step(u, up, c.kd, rng);
    write_step_csv_row(os, k, o);
    u = std::move(o.u1);
    up = std::move(o.u1_prime);
  }
  return 0;
}

int mixing_run(const Run& run) {
  const Setup s(run.cfg);
  const Calibrated c = calibrate_all(run, s);
  const CouplingEngine engine(s.model, s.basis, s.spec, c.cal.params);
  run.log("running coupled ensemble");
  const MixingReport rep = run_coupled_ensemble(engine, c.kd, run.cfg.mixing_config(run.seed));
  auto os = run.open("mixing.csv");
  write_mixing_csv(os, rep);
  auto ss = run.open("mixing_summary.csv");
  write_mixing_summary(ss, rep, c.kd, c.cal.params);
  std::cout << "kappa = " << rep.fit.kappa << " [" << rep.fit.lo << ", " << rep.fit.hi << "]\n";
  if (rep.fit.non_mixing) {
    std::cerr << "mixing-run: fitted kappa is not below 1\n";
    return 2;
  }
  return 0;
}

int stationary(const Run& run) {
  const Setup s(run.cfg);
  StationaryConfig sc = run.cfg.stationary_config(run.seed);
  if (!(sc.radius > 0.0)) sc.radius = calibrate_all(run, s).kd.R_star;
  const StationaryReport rep = estimate_stationary(s.model, s.basis, s.spec, sc);
  auto os = run.open("stationary.csv");
  write_stationary_csv(os, rep);
  auto ss = run.open("stationary_summary.csv");
  ss.precision(17);
  ss << "key,value\nkappa," << rep.kappa << "\nburn_in," << rep.burn_in << "\nmax_norm," << rep.max_norm
     << "\nradius," << sc.radius << "\nagree," << (rep.agree ? 1 : 0) << '\n';
  if (!rep.agree) std::cerr << "stationary: the two ensembles disagree; the burn-in may be too short\n";
  return 0;
}

int verify_all(const Run& run) {
  const Model m = run.cfg.model_kind();
  const Config nse = m == Model::nse ? run.cfg : Config::defaults(Model::nse);
  const Config cgl = m == Model::cgl ? run.cfg : Config::defaults(Model::cgl);
  VerifySuite suite(nse, cgl, run.seed);
  std::vector<CriterionResult> results;
  std::vector<int> ids;
  for (int id = 1; id <= 9; ++id) {
    run.log("criterion " + std::to_string(id));
    results.push_back(suite.run(id));
    ids.push_back(id);
  }
  results.push_back(suite.determinism(results, ids));
  auto os = run.open("verify_summary.csv");
  write_verify_csv(os, results);
  bool all = true;
  for (const auto& r : results) {
    std::cout << r.id << ' ' << r.name << ' ' << (r.pass() ? "PASS" : "FAIL") << "\n";
    all = all && r.pass();
  }
  return all ? 0 : 1;
}

void apply_threads(const Config& cfg) {
  int n = cfg.run.threads > 0 ? cfg.run.threads : omp_get_max_threads();
  if (const char* env = std::getenv("MIXFORGE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  omp_set_num_threads(std::max(n, 1));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupling and mixing experiments for randomly forced 2D Navier-Stokes and Ginzburg-Landau models"};
  Run run;
  std::string config_path, out = ".";
  bool print_config = false;
  app.add_option("command", run.command, "one of: noise-sample simulate tangent-check calibrate-inverse "
                                         "couple-step mixing-run stationary verify-all");
  app.add_option("--config", config_path, "key = value file with [section] headers");
  app.add_option("--seed", run.seed, "64-bit seed");
  app.add_option("--out", out, "output directory");
  app.add_flag("-v,--verbose", run.verbosity, "progress on stderr");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    run.cfg = config_path.empty() ? Config::defaults() : load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  if (print_config) {
    emit_config(std::cout, run.cfg);
    return 0;
  }
  if (std::find(kCommands.begin(), kCommands.end(), run.command) == kCommands.end()) {
    if (!run.command.empty()) std::cerr << "unknown command '" << run.command << "'\n";
    std::cerr << app.help();
    return 1;
  }
  run.verbosity = std::max(run.verbosity, run.cfg.run.verbosity);
  apply_threads(run.cfg);
  run.out = out;
  std::error_code ec;
  fs::create_directories(run.out, ec);
  if (ec || !fs::is_directory(run.out)) {
    std::cerr << "cannot create output directory " << out << "\n";
    return 1;
  }

  try {
    {
      std::ofstream os(run.out / "config_used.ini");
      emit_config(os, run.cfg);
    }
    if (run.command == "noise-sample") return noise_sample(run);
    if (run.command == "simulate") return simulate(run);
    if (run.command == "tangent-check") return tangent_check(run);
    if (run.command == "calibrate-inverse") return calibrate_inverse(run);
    if (run.command == "couple-step") return couple_step(run);
    if (run.command == "mixing-run") return mixing_run(run);
    if (run.command == "stationary") return stationary(run);
    return verify_all(run);
  } catch (const BlowUpError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return 2;
  } catch (const FixedPointError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return 2;
  } catch (const ResidualCapError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
