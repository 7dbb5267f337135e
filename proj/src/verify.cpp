#include "mixforge/verify.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>

#include "mixforge/parallel.hpp"
#include "mixforge/tangent_adjoint.hpp"

namespace mixforge {

double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double F = cdf(x[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

double ks_critical(int n, double alpha) { return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(double(n)); }

void Digest::bytes(const void* p, size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h_ ^= c[i];
    h_ *= 1099511628211ULL;
  }
}
void Digest::add(double v) { bytes(&v, sizeof v); }
void Digest::add(std::int64_t v) { bytes(&v, sizeof v); }
void Digest::add(const std::vector<double>& v) {
  for (double x : v) add(x);
}
void Digest::add(const SpectralField& u) { bytes(u.data().data(), u.data().size() * sizeof(cplx)); }

bool CriterionResult::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRow& c) { return c.pass; });
}

namespace {

CheckRow le(const std::string& name, double v, double bound) { return {name, v, "<=", bound, v <= bound}; }
CheckRow lt(const std::string& name, double v, double bound) { return {name, v, "<", bound, v < bound}; }
CheckRow ge(const std::string& name, double v, double bound) { return {name, v, ">=", bound, v >= bound}; }
CheckRow eq(const std::string& name, double v, double bound) { return {name, v, "==", bound, v == bound}; }
CheckRow info(const std::string& name, double v) { return {name, v, "info", 0.0, true}; }

using Clock = std::chrono::steady_clock;

struct Timer {
  Clock::time_point t0 = Clock::now();
  double seconds() const { return std::chrono::duration<double>(Clock::now() - t0).count(); }
};

Config with_model(const Config& c, Model m) { return c.flow.model == to_string(m) ? c : Config::defaults(m); }

double relative(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

ModelSetup::ModelSetup(const Config& c) : cfg(c) {
  cfg.validate();
  model = std::make_unique<FlowModel>(cfg.flow_config());
  basis = std::make_unique<SpatialBasis>(cfg.model_kind(), model->grid(), cfg.flow.sobolev_m, cfg.noise.modes);
  spec = std::make_shared<NoiseSpec>(cfg.noise_spec());
}

const CouplingCalibration& ModelSetup::calibration(std::uint64_t seed) {
  if (!cal) {
    cal = calibrate_coupling(*model, *basis, spec, cfg.calibration_config(), seed);
    cfg.apply_numerics(cal->params);
  }
  return *cal;
}

double ModelSetup::R_star(std::uint64_t seed) {
  const auto& c = calibration(seed);
  return cfg.coupling.r_star_factor * c.beta_linear / (1.0 - c.gamma_linear);
}

const KantorovichDensity& ModelSetup::density(std::uint64_t seed) {
  if (!kd) {
    const auto& c = calibration(seed);
    kd = build_kantorovich_f(c.gamma_linear, c.beta_linear, R_star(seed), c.params.d0, c.p_small_set,
                             cfg.coupling.p1_ratio * c.p_small_set);
  }
  return *kd;
}

VerifySuite::VerifySuite(const Config& nse, const Config& cgl, std::uint64_t seed)
    : nse_(with_model(nse, Model::nse)), cgl_(with_model(cgl, Model::cgl)), seed_(seed) {}

std::string VerifySuite::name(int id) {
  static const char* names[] = {"",
                                "haar_noise",
                                "solver_validation",
                                "derivatives",
                                "right_inverse",
                                "squeezing",
                                "coupling_tv",
                                "kantorovich_density",
                                "exponential_mixing",
                                "stationarity",
                                "determinism"};
  return id >= 1 && id <= 10 ? names[id] : "unknown";
}

double VerifySuite::budget_seconds(int id) {
  static const double b[] = {0, 10, 120, 300, 600, 1800, 1800, 600, 7200, 1800, 14400};
  return id >= 1 && id <= 10 ? b[id] : 0.0;
}

CriterionResult VerifySuite::run(int id) {
  if (id < 1 || id > 9) throw std::invalid_argument("criterion id must lie in [1, 9]; 10 needs the first-run results");
  Timer t;
  CriterionResult r;
  try {
    switch (id) {
      case 1: r = noise(); break;
      case 2: r = solver(); break;
      case 3: r = derivatives(); break;
      case 4: r = right_inverse(); break;
      case 5: r = squeezing(); break;
      case 6: r = coupling(); break;
      case 7: r = kantorovich(); break;
      case 8: r = mixing(); break;
      default: r = stationarity(); break;
    }
  } catch (const std::exception& e) {
    // a guard trip fails the criterion; the message goes into the digest
    r = CriterionResult{};
    const std::string what = std::string("exception: ") + e.what();
    r.checks.push_back({what, 0.0, "==", 1.0, false});
    Digest dg;
    for (char c : what) dg.add(std::int64_t(c));
    r.digest = dg.value();
  }
  r.id = id;
  r.name = name(id);
  r.seconds = t.seconds();
  r.checks.push_back(le("runtime_s", r.seconds, budget_seconds(id)));
  return r;
}

// 1. Haar system, Parseval, brick containment and the coefficient law.
CriterionResult VerifySuite::noise() {
  CriterionResult r;
  Digest dg;
  {
    const int J = 6;
    const auto idx = haar_indices(J);
    const int pieces = 1 << (J + 1);
    Eigen::MatrixXd V(idx.size(), pieces);
    for (size_t a = 0; a < idx.size(); ++a)
      for (int p = 0; p < pieces; ++p) V(a, p) = haar_eval(idx[a], (p + 0.5) / pieces);
    const Eigen::MatrixXd G = V * V.transpose() / pieces;
    const double err = (G - Eigen::MatrixXd::Identity(idx.size(), idx.size())).cwiseAbs().maxCoeff();
    r.checks.push_back(le("orthonormality_max_error", err, 1e-12));
    dg.add(err);
  }
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    const NoiseSpec sp = NoiseSpec::defaults(s.cfg.noise.modes, 3, s.cfg.noise.amplitude, s.cfg.noise.slope);
    auto spec = std::make_shared<const NoiseSpec>(sp);
    const int pieces = 1 << (sp.max_level + 1);
    const int msob = s.basis->sobolev_m();
    double parseval = 0.0, brick_excess = -1.0, coef_excess = -1.0, sup_ratio = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      RngStream rng(seed_, 0x01, trial + 1000 * int(m));
      const NoisePath path = sample_noise_path(spec, rng);
      brick_excess = std::max(brick_excess, path.xi.cwiseAbs().maxCoeff() - 1.0);
      double integral = 0.0;
      for (int p = 0; p < pieces; ++p) {
        const SpectralField eta = noise_eval(path, *s.basis, (p + 0.5) / pieces);
        const double n = sobolev_norm(eta, msob);
        integral += n * n / pieces;
        sup_ratio = std::max(sup_ratio, n / sp.radius());
        // E-coefficient k on this piece is sum_j b c xi h(t); bounded by the per-mode amplitude sum.
        for (int i = 0; i < sp.modes; ++i) {
          const double coeff = sobolev_inner(eta, (*s.basis)[i], msob);
          double bound = 0.0;
          for (int h = 0; h < sp.haar_functions(); ++h)
            bound += std::abs(sp.coordinate_coefficient(h * sp.modes + i) *
                              haar_eval(haar_indices(sp.max_level)[h], (p + 0.5) / pieces));
          coef_excess = std::max(coef_excess, std::abs(coeff) - bound * (1.0 + 1e-14));
        }
      }
      double expected = 0.0;
      for (int c = 0; c < sp.dimension(); ++c) expected += std::pow(sp.coordinate_coefficient(c) * path.xi[c], 2);
      parseval = std::max(parseval, std::abs(integral - expected) / expected);
      dg.add(integral);
    }
    const std::string tag = to_string(m) + "_";
    r.checks.push_back(le(tag + "parseval_relative_error", parseval, 1e-10));
    r.checks.push_back(le(tag + "brick_max_abs_xi_minus_1", brick_excess, 0.0));
    r.checks.push_back(le(tag + "brick_coefficient_excess", coef_excess, 0.0));
    r.checks.push_back(info(tag + "sup_E_norm_over_R_eta", sup_ratio));
  }
  for (double slope : {0.0, 0.5}) {
    const TentDensity rho(slope);
    RngStream rng(seed_, 0x02, static_cast<std::uint64_t>(slope * 10));
    std::vector<double> x(100000);
    for (double& v : x) v = rho.sample(rng);
    const double d = ks_statistic(x, [&](double t) { return rho.cdf(t); });
    r.checks.push_back(le("ks_tent_slope_" + std::to_string(slope).substr(0, 3), d, ks_critical(x.size(), 0.01)));
    dg.add(d);
  }
  r.digest = dg.value();
  return r;
}

// 2. Exact solutions, divergence and first-order convergence.
CriterionResult VerifySuite::solver() {
  CriterionResult r;
  Digest dg;
  {
    ModelSetup& s = setup(Model::nse);
    const FlowModel& fm = *s.model;
    const auto zero = zero_path(s.spec);
    double worst = 0.0;
    for (auto [k1, k2] : {std::pair{1, 0}, std::pair{0, 1}}) {
      SpectralField u = fm.zero_field();
      const cplx a(0.3, -0.7);
      u.at(0, k1, k2) = a * double(-k2);
      u.at(1, k1, k2) = a * double(k1);
      u.at(0, -k1, -k2) = std::conj(a) * double(-k2);
      u.at(1, -k1, -k2) = std::conj(a) * double(k1);
      const SpectralField u1 = flow_map(fm, *s.basis, u, zero);
      const SpectralField exact = std::exp(-s.cfg.flow.viscosity) * u;
      worst = std::max(worst, sobolev_norm(u1 - exact, 0) / sobolev_norm(exact, 0));
      dg.add(u1);
    }
    r.checks.push_back(le("nse_shear_decay_relative_error", worst, 1e-8));

    RngStream rng(seed_, 0x21);
    SpectralField u = random_field(fm, rng, 2.0);
    double div = divergence_max(u);
    for (int k = 0; k < 10; ++k) {
      u = flow_map(fm, *s.basis, u, sample_noise_path(s.spec, rng));
      div = std::max(div, divergence_max(u));
    }
    r.checks.push_back(le("nse_divergence_max", div, 1e-12));
    dg.add(div);
  }
  {
    ModelSetup& s = setup(Model::cgl);
    const FlowModel& fm = *s.model;
    SpectralField u = fm.zero_field();
    u.at(0, 0, 0) = cplx(0.8, 0.3);
    const SpectralField u1 = flow_map(fm, *s.basis, u, zero_path(s.spec));
    const double got = std::abs(u1.at(0, 0, 0)) / std::abs(u.at(0, 0, 0));
    r.checks.push_back(le("cgl_constant_mode_decay_relative_error", relative(got, std::exp(-s.cfg.flow.damping)), 1e-8));
    dg.add(got);
  }
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    RngStream rng(seed_, 0x22, int(m));
    const SpectralField u0 = random_field(*s.model, rng, 1.0);
    const NoisePath eta = sample_noise_path(s.spec, rng);
    // Each substep count gets its own grid; coefficients are copied across.
    auto run = [&](int substeps) {
      FlowConfig fc = s.cfg.flow_config();
      fc.substeps = substeps;
      const FlowModel fm(fc);
      const SpatialBasis basis(m, fm.grid(), fc.sobolev_m, s.cfg.noise.modes);
      SpectralField v = fm.zero_field();
      for (const auto& md : fm.grid()->retained())
        for (int c = 0; c < v.components(); ++c) v.at(c, md.k1, md.k2) = u0.at(c, md.k1, md.k2);
      const SpectralField w = flow_map(fm, basis, v, eta);
      SpectralField out = s.model->zero_field();
      for (const auto& md : fm.grid()->retained())
        for (int c = 0; c < v.components(); ++c) out.at(c, md.k1, md.k2) = w.at(c, md.k1, md.k2);
      return out;
    };
    const SpectralField ref = run(2048);
    std::vector<double> err;
    for (int n : {8, 16, 32, 64}) err.push_back(sobolev_norm(run(n) - ref, s.model->state_index()));
    for (size_t i = 0; i + 1 < err.size(); ++i)
      r.checks.push_back(ge(to_string(m) + "_halving_ratio_" + std::to_string(i + 1), err[i] / err[i + 1], 1.8));
    dg.add(err);
  }
  r.digest = dg.value();
  return r;
}

// 3. Taylor remainder, tangent/adjoint duality, matrix against operator.
CriterionResult VerifySuite::derivatives() {
  CriterionResult r;
  Digest dg;
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    const FlowModel& fm = *s.model;
    const int msob = fm.state_index();
    const std::string tag = to_string(m) + "_";
    RngStream rng(seed_, 0x31, int(m));
    const BasePoint base = make_base_point(fm, *s.basis, random_field(fm, rng, 1.0), sample_noise_path(s.spec, rng));
    const int D = s.spec->dimension();

    double variation = 0.0;
    for (int dir = 0; dir < s.cfg.run.fd_directions; ++dir) {
      const SpectralField h = random_field(fm, rng, 1.0);
      Eigen::VectorXd dxi(D);
      for (int i = 0; i < D; ++i) dxi[i] = rng.normal();
      dxi.normalize();
      const auto rows = fd_check(fm, *s.basis, base, h, dxi, {1e-2, 1e-3, 1e-4});
      double lo = rows[0].ratio, hi = rows[0].ratio;
      for (const auto& row : rows) {
        lo = std::min(lo, row.ratio);
        hi = std::max(hi, row.ratio);
        dg.add(row.ratio);
      }
      variation = std::max(variation, hi / lo - 1.0);
    }
    r.checks.push_back(le(tag + "taylor_ratio_variation", variation, 0.25));

    // Pairing <v(t), w(t)> along the trajectory, and the full duality with a noise direction.
    const SpectralField h = random_field(fm, rng, 1.0);
    const SpectralField w1 = random_field(fm, rng, 1.0);
    std::vector<SpectralField> states;
    const SpectralField v1 = tangent_flow(fm, *s.basis, base, h, Eigen::VectorXd(), &states);
    const AdjointResult adj = adjoint_flow(fm, *s.basis, base, w1);
    const double p1 = l2_inner(v1, w1);
    double drift = 0.0;
    for (size_t n = 0; n < states.size() && n < adj.w.size(); ++n)
      drift = std::max(drift, relative(l2_inner(states[n], adj.w[n]), p1));
    r.checks.push_back(le(tag + "pairing_constancy_relative", drift, 1e-8));
    r.checks.push_back(ge(tag + "pairing_points_checked", double(std::min(states.size(), adj.w.size())),
                          double(fm.substeps() + 1)));
    Eigen::VectorXd dxi(D);
    for (int i = 0; i < D; ++i) dxi[i] = rng.normal();
    const double lhs = l2_inner(tangent_flow(fm, *s.basis, base, h, dxi), w1);
    const double a0 = l2_inner(h, adj.w.front()), a1 = adj.noise_gradient.dot(dxi);
    r.checks.push_back(
        le(tag + "duality_relative", std::abs(lhs - a0 - a1) / (std::abs(lhs) + std::abs(a0) + std::abs(a1)), 1e-8));
    dg.add(lhs);
    dg.add(a0 + a1);

    const TangentOperator A = assemble_A(fm, *s.basis, base);
    const TangentOperator As = assemble_A_serial(fm, *s.basis, base);
    const StateCoords coords(m, fm.grid(), msob);
    const Eigen::VectorXd g = coords.gram().cwiseSqrt();
    double mv = 0.0;
    for (int t = 0; t < 4; ++t) {
      Eigen::VectorXd x(D);
      for (int i = 0; i < D; ++i) x[i] = rng.normal();
      const Eigen::VectorXd op = coords.to_vector(tangent_flow(fm, *s.basis, base, fm.zero_field(), x));
      mv = std::max(mv, g.cwiseProduct(A.apply(x) - op).norm() / g.cwiseProduct(op).norm());
    }
    const double ser = (A.columns - As.columns).norm() / As.columns.norm();
    r.checks.push_back(le(tag + "matrix_vs_operator_relative", mv, 1e-9));
    r.checks.push_back(le(tag + "parallel_vs_serial_assembly_relative", ser, 1e-9));
    dg.add(mv);
    dg.add(ser);
  }
  r.digest = dg.value();
  return r;
}

// 4. Closed-form defects, lattice monotonicity and epsilon on the test set.
CriterionResult VerifySuite::right_inverse() {
  CriterionResult r;
  Digest dg;
  {
    RngStream rng(seed_, 0x41);
    double worst = 0.0;
    for (int kind = 0; kind < 3; ++kind) {
      const int n = 12;
      const int rows = kind == 2 ? 16 : n;
      Eigen::VectorXd d(n);
      for (int i = 0; i < n; ++i) d[i] = kind == 0 ? 1.0 : 1.0 / (i + 1.0);
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, n);
      for (int i = 0; i < n; ++i) a(i, i) = d[i];
      Eigen::VectorXd f(rows);
      for (int i = 0; i < rows; ++i) f[i] = rng.normal();
      for (double reg : {1.0, 1e-2, 1e-4})
        for (int M : {4, 8, 12})
          for (Projection proj : {Projection::restricted, Projection::outer}) {
            const RightInverse R(a, reg, M, proj);
            double exact = 0.0;
            for (int i = 0; i < rows; ++i) {
              const double e = i < M ? reg * f[i] / (d[i] * d[i] + reg) : f[i];
              exact += e * e;
            }
            worst = std::max(worst, std::abs(R.defect(f) - std::sqrt(exact)));
          }
    }
    r.checks.push_back(le("synthetic_defect_abs_error", worst, 1e-12));
    dg.add(worst);
  }
  {
    // Assembled operator at noise dimension 64.
    Config c = setup(Model::nse).cfg;
    c.noise.levels = 2;
    ModelSetup s(c);
    const FlowModel& fm = *s.model;
    const int msob = fm.state_index();
    const StateCoords coords(Model::nse, fm.grid(), msob);
    RngStream rng(seed_, 0x42);
    const auto pool = typical_states(fm, *s.basis, s.spec, 1, c.coupling.warmup_steps, seed_);
    const BasePoint base = make_base_point(fm, *s.basis, pool[0], sample_noise_path(s.spec, rng));
    const TangentOperator A = assemble_A(fm, *s.basis, base);
    std::vector<Eigen::VectorXd> tests;
    std::vector<double> vn;
    for (int t = 0; t < c.inverse.test_fields; ++t) {
      const SpectralField f = tangent_flow(fm, *s.basis, base, random_field(fm, rng, 1.0), Eigen::VectorXd());
      tests.push_back(coords.to_vector(f));
      vn.push_back(sobolev_norm(f, msob + 1));
    }
    const Calibration cal = calibrate(A, tests, vn, c.inverse.epsilon);
    const Calibration outer = calibrate(A, tests, vn, c.inverse.epsilon, {}, {}, Projection::outer);
    r.checks.push_back(eq("noise_dimension", A.noise_dim(), 64));
    r.checks.push_back(eq("lattice_monotone", cal.monotone ? 1.0 : 0.0, 1.0));
    r.checks.push_back(eq("epsilon_achieved", cal.achieved ? 1.0 : 0.0, 1.0));
    r.checks.push_back(le("defect_ratio_at_chosen_point", cal.defect_ratio, c.inverse.epsilon));
    r.checks.push_back(info("chosen_r", cal.r));
    r.checks.push_back(info("chosen_M", cal.M));
    r.checks.push_back(info("outer_projection_monotone", outer.monotone ? 1.0 : 0.0));
    for (const auto& row : cal.rows) dg.add(row.max_defect_ratio);
  }
  r.digest = dg.value();
  return r;
}

// 5. Squeeze ratio on 500 samples per model at the calibrated (epsilon, delta).
CriterionResult VerifySuite::squeezing() {
  CriterionResult r;
  Digest dg;
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    const auto& cal = s.calibration(seed_);
    const ControlParams& par = cal.params;
    const auto pool = typical_states(*s.model, *s.basis, s.spec, 100, s.cfg.coupling.warmup_steps, seed_ ^ 0x55);
    const int n = 500;
    std::vector<double> ratio(n);
    LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) guard.run([&] {
      RngStream rng(seed_, 0x51 + int(m), i);
      const SpectralField& u = pool[i % pool.size()];
      const NoisePath eta = sample_noise_path(s.spec, rng);
      SpectralField up = u;
      up.axpy(par.delta * (1.0 - rng.uniform()), random_field(*s.model, rng, 1.0));
      const ControlContext ctx(*s.model, *s.basis, par, u, eta);
      ratio[i] = psi_squeeze(ctx, up).ratio;
    });
    guard.rethrow();
    const double frac = double(std::count_if(ratio.begin(), ratio.end(), [](double x) { return x <= 0.5; })) / n;
    const std::string tag = to_string(m) + "_";
    r.checks.push_back(ge(tag + "fraction_squeezed", frac, 0.99));
    r.checks.push_back(info(tag + "epsilon", cal.epsilon));
    r.checks.push_back(info(tag + "delta", par.delta));
    r.checks.push_back(info(tag + "ratio_q99", quantile(ratio, 0.99)));
    dg.add(ratio);
  }
  r.digest = dg.value();
  return r;
}

// 6. Maximal coupling on tents, near-branch glue rate, coupled marginals.
CriterionResult VerifySuite::coupling() {
  CriterionResult r;
  Digest dg;
  {
    const TentDensity rho(0.5);
    for (double shift : {0.25, 0.5, 1.0}) {
      std::vector<double> pts{-1.0, 0.0, 1.0, shift - 1.0, shift, shift + 1.0, 0.5 * shift};
      std::sort(pts.begin(), pts.end());
      auto mn = [&](double x) { return std::min(rho.pdf(x), rho.pdf(x - shift)); };
      double overlap = 0.0;
      // min(p, q) is linear between breakpoints but jumps at the support
      // edges, so evaluate at segment midpoints only
      for (size_t i = 0; i + 1 < pts.size(); ++i) overlap += (pts[i + 1] - pts[i]) * mn(0.5 * (pts[i] + pts[i + 1]));
      const double tv = 1.0 - overlap;
      auto p = [&](const Eigen::VectorXd& x) { return rho.pdf(x[0]); };
      auto q = [&](const Eigen::VectorXd& x) { return rho.pdf(x[0] - shift); };
      auto ps = [&](RngStream& g) { return Eigen::VectorXd::Constant(1, rho.sample(g)); };
      auto qs = [&](RngStream& g) { return Eigen::VectorXd::Constant(1, rho.sample(g) + shift); };
      RngStream rng(seed_, 0x61, static_cast<std::uint64_t>(shift * 100));
      const int n = 100000;
      int differ = 0;
      for (int i = 0; i < n; ++i) differ += !maximal_coupling_sample(p, q, ps, qs, rng).equal;
      const double est = double(differ) / n;
      r.checks.push_back(le("tent_tv_error_shift_" + std::to_string(shift).substr(0, 4), std::abs(est - tv), 0.01));
      dg.add(est);
    }
  }
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    const auto& cal = s.calibration(seed_);
    const auto& kd = s.density(seed_);
    const CouplingEngine engine(*s.model, *s.basis, s.spec, cal.params);
    const auto pool = typical_states(*s.model, *s.basis, s.spec, 50, s.cfg.coupling.warmup_steps, seed_ ^ 0x66);
    const int trials = 500;
    const int M = cal.params.M;
    const std::string tag = to_string(m) + "_";
    std::vector<std::vector<double>> eta(M), etap(M);
    int k = 0;
    for (double frac : {0.125, 0.25, 0.5}) {
      // just inside d0 so rounding cannot send the pair to the far branch
      const double d = std::min(frac * cal.params.delta, kd.d0 * (1.0 - 1e-9));
      std::vector<char> ok(trials, 0);
      std::vector<Eigen::VectorXd> xa(trials), xb(trials);
      LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
      for (int i = 0; i < trials; ++i) guard.run([&] {
        RngStream rng(seed_, 0x62 + int(m), 1000 * k + i);
        const SpectralField& u = pool[i % pool.size()];
        SpectralField up = u;
        up.axpy(d, random_field(*s.model, rng, 1.0));
        const CouplingOutcome o = engine.coupled_step(u, up, kd, rng);
        ok[i] = o.branch == Branch::near && o.glued_equal && o.distance_after <= 0.5 * d;
        xa[i] = o.eta.xi;
        xb[i] = o.eta_prime.xi;
      });
      guard.rethrow();
      const double rate = double(std::count(ok.begin(), ok.end(), 1)) / trials;
      const double bound = 1.0 - cal.C1 * d;
      const double se = std::sqrt(std::max(bound * (1.0 - bound), 1.0 / trials) / trials);
      r.checks.push_back(ge(tag + "glue_rate_plus_2se_at_d" + std::to_string(k + 1), rate + 2.0 * se, bound));
      r.checks.push_back(info(tag + "glue_rate_at_d" + std::to_string(k + 1), rate));
      dg.add(rate);
      for (int i = 0; i < trials; ++i)
        for (int c = 0; c < M; ++c) {
          eta[c].push_back(xa[i][c]);
          etap[c].push_back(xb[i][c]);
        }
      ++k;
    }
    const TentDensity rho(s.spec->density_slope);
    double worst = 0.0;
    const double alpha = 0.01 / (2.0 * M);  // Bonferroni over coordinates and both marginals
    for (int c = 0; c < M; ++c) {
      for (const auto* v : {&eta[c], &etap[c]}) {
        const double D = ks_statistic(*v, [&](double t) { return rho.cdf(t); });
        worst = std::max(worst, D / ks_critical(v->size(), alpha));
        dg.add(D);
      }
    }
    r.checks.push_back(le(tag + "marginal_ks_over_critical", worst, 1.0));
    r.checks.push_back(info(tag + "C1_hat", cal.C1));
  }
  r.digest = dg.value();
  return r;
}

// 7. Step table, range of f and the distance sandwich.
CriterionResult VerifySuite::kantorovich() {
  CriterionResult r;
  Digest dg;
  for (Model m : {Model::nse, Model::cgl}) {
    ModelSetup& s = setup(m);
    const auto& kd = s.density(seed_);
    const std::string tag = to_string(m) + "_";
    r.checks.push_back(eq(tag + "a1_minus_2.5d0", kd.a1 - 2.5 * kd.d0, 0.0));
    r.checks.push_back(eq(tag + "relation_holds", kantorovich_relation_holds(kd) ? 1.0 : 0.0, 1.0));
    double fmin = INFINITY, fmax = -INFINITY;
    for (int i = 0; i <= 10000; ++i) {
      const double x = kd.R_star * std::pow(1e-12, 1.0 - i / 10000.0);
      fmin = std::min(fmin, kd.f(x));
      fmax = std::max(fmax, kd.f(x));
    }
    r.checks.push_back(CheckRow{tag + "f_min_minus_2d0", fmin - 2.0 * kd.d0, ">", 0.0, fmin > 2.0 * kd.d0});
    r.checks.push_back(le(tag + "f_max_minus_3d0", fmax - 3.0 * kd.d0, 0.0));
    r.checks.push_back(eq(tag + "f_at_R_star_minus_3d0", kd.f(kd.R_star) - 3.0 * kd.d0, 0.0));
    const FlowModel& fm = *s.model;
    const int msob = fm.state_index();
    double lower = INFINITY, upper = INFINITY;
    RngStream rng(seed_, 0x71, int(m));
    for (int i = 0; i < 10000; ++i) {
      const SpectralField a = random_field(fm, rng, rng.uniform(0.0, 1.2 * kd.R_star));
      SpectralField b = a;
      b.axpy(std::exp(rng.uniform(std::log(1e-6), std::log(2.0 * kd.R_star))), random_field(fm, rng, 1.0));
      const double d = sobolev_norm(a - b, msob);
      const double f = f_K_eval(kd, a, b, msob);
      lower = std::min(lower, f - std::min(d, kd.d0));
      upper = std::min(upper, 3.0 * d - f);
      dg.add(f);
    }
    r.checks.push_back(ge(tag + "sandwich_lower_slack", lower, 0.0));
    r.checks.push_back(ge(tag + "sandwich_upper_slack", upper, 0.0));
    r.checks.push_back(info(tag + "N0", kd.N0));
    r.checks.push_back(info(tag + "d0", kd.d0));
  }
  r.digest = dg.value();
  return r;
}

// 8. Coupled ensemble on the default Navier-Stokes configuration.
CriterionResult VerifySuite::mixing() {
  CriterionResult r;
  Digest dg;
  ModelSetup& s = setup(Model::nse);
  const auto& cal = s.calibration(seed_);
  const auto& kd = s.density(seed_);
  const CouplingEngine engine(*s.model, *s.basis, s.spec, cal.params);
  const MixingConfig mc = s.cfg.mixing_config(seed_);
  const MixingReport rep = run_coupled_ensemble(engine, kd, mc);
  r.checks.push_back(eq("pairs", mc.pairs, 256));
  r.checks.push_back(eq("horizon", mc.horizon, 40));
  r.checks.push_back(lt("kappa", rep.fit.kappa, 1.0));
  r.checks.push_back(lt("kappa_band_upper", rep.fit.hi, 1.0));
  const double f0 = rep.steps[0].mean_fK;
  const double f20 = rep.steps.at(20).mean_fK;
  r.checks.push_back(le("mean_fK_k20_over_k0", f20 / f0, 0.2));
  int violations = 0;
  for (const auto& st : rep.steps) violations += st.lip_lower > st.lip_upper;
  r.checks.push_back(eq("lip_dominance_violations", violations, 0));
  r.checks.push_back(info("kappa_band_lower", rep.fit.lo));
  r.checks.push_back(info("burn_in", rep.burn_in));
  r.checks.push_back(info("ball_exits", rep.ball_exits));
  r.checks.push_back(info("never_merged", rep.never_merged));
  for (const auto& st : rep.steps) {
    dg.add(st.mean_fK);
    dg.add(st.lip_lower);
  }
  dg.add(std::vector<double>(rep.fK.data(), rep.fK.data() + rep.fK.size()));
  r.digest = dg.value();
  return r;
}

// 9. Two initial radii agree; zero noise collapses to the origin.
CriterionResult VerifySuite::stationarity() {
  CriterionResult r;
  Digest dg;
  ModelSetup& s = setup(Model::nse);
  const auto& cal = s.calibration(seed_);
  StationaryConfig sc = s.cfg.stationary_config(seed_);
  if (!(sc.radius > 0.0)) sc.radius = s.R_star(seed_);
  const StationaryReport rep = estimate_stationary(*s.model, *s.basis, s.spec, sc);
  const int agreeing = std::count_if(rep.moments.begin(), rep.moments.end(), [](const MomentRow& m) { return m.agree; });
  r.checks.push_back(eq("moments_agreeing", agreeing, rep.moments.size()));
  sc.zero_noise = true;
  const StationaryReport zero = estimate_stationary(*s.model, *s.basis, s.spec, sc);
  double biggest = 0.0;
  for (const auto& m : zero.moments) biggest = std::max({biggest, std::abs(m.mean_a), std::abs(m.mean_b)});
  r.checks.push_back(lt("zero_noise_max_moment", biggest, 1e-10));
  r.checks.push_back(info("burn_in", rep.burn_in));
  r.checks.push_back(info("max_post_burn_in_norm", rep.max_norm));
  r.checks.push_back(info("R0", cal.beta_linear / (1.0 - cal.gamma_linear)));
  for (const auto& m : rep.moments) {
    dg.add(m.mean_a);
    dg.add(m.mean_b);
    dg.add(m.diff_lo);
  }
  dg.add(biggest);
  r.digest = dg.value();
  return r;
}

CriterionResult VerifySuite::determinism(const std::vector<CriterionResult>& first, const std::vector<int>& ids) {
  Timer t;
  CriterionResult r;
  r.id = 10;
  r.name = name(10);
  const int threads = omp_get_max_threads();
  omp_set_num_threads(threads == 3 ? 2 : 3);
  VerifySuite again(nse_.cfg, cgl_.cfg, seed_);
  for (int id : ids) {
    const auto it = std::find_if(first.begin(), first.end(), [&](const CriterionResult& c) { return c.id == id; });
    if (it == first.end()) continue;
    const CriterionResult second = again.run(id);
    r.checks.push_back(eq("digest_match_" + std::to_string(id), it->digest == second.digest ? 1.0 : 0.0, 1.0));
  }
  omp_set_num_threads(threads);
  r.seconds = t.seconds();
  r.checks.push_back(le("runtime_s", r.seconds, budget_seconds(10)));
  return r;
}

void write_verify_csv(std::ostream& os, const std::vector<CriterionResult>& results) {
  os << "criterion,name,check,value,relation,bound,pass\n";
  os.precision(17);
  for (const auto& c : results)
    for (const auto& k : c.checks)
      os << c.id << ',' << c.name << ',' << k.check << ',' << k.value << ',' << k.relation << ',' << k.bound << ','
         << (k.pass ? 1 : 0) << '\n';
}

}  // namespace mixforge
