#include "doctest.h"

#include <cmath>
#include <sstream>

#include "mixforge/mixing_harness.hpp"
#include "support.hpp"

using namespace mixforge;
using mixforge::testing::Setup;

namespace {

ControlParams small_params() {
  ControlParams p;
  p.r = 1e-3;
  p.M = 4;
  p.delta = 0.2;
  p.d0 = 0.2;
  return p;
}

KantorovichDensity sample_density() { return build_kantorovich_f(0.6, 1.0, 3.125, 0.2, 0.3, 0.15); }

MixingConfig small_mixing(std::uint64_t seed = 5) {
  MixingConfig c;
  c.pairs = 8;
  c.horizon = 8;
  c.lip_functionals = 8;
  c.bootstrap = 20;
  c.seed = seed;
  return c;
}

const MomentRow& row(const StationaryReport& r, const std::string& name) {
  for (const auto& m : r.moments)
    if (m.name == name) return m;
  throw std::runtime_error("missing observable " + name);
}

}  // namespace

TEST_CASE("decay fit of a geometric series") {
  std::vector<double> s;
  for (int k = 0; k < 20; ++k) s.push_back(std::pow(0.5, k));
  const DecayFit f = fit_decay_rate(s);
  CHECK(f.kappa == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f.lo <= f.kappa);
  CHECK(f.hi >= f.kappa);
  CHECK_FALSE(f.non_mixing);
  CHECK_FALSE(f.floored);
  CHECK(f.window_begin == 10);
  CHECK(f.window_end == 20);
}

TEST_CASE("decay fit of a constant series is flagged") {
  const DecayFit f = fit_decay_rate(std::vector<double>(12, 0.3));
  CHECK(f.kappa == doctest::Approx(1.0));
  CHECK(f.non_mixing);
}

TEST_CASE("decay fit with noise") {
  RngStream rng(3);
  std::vector<double> s;
  for (int k = 0; k < 40; ++k) s.push_back(std::pow(0.7, k) * (1.0 + rng.uniform(-0.05, 0.05)));
  const DecayFit f = fit_decay_rate(s, nullptr, 200);
  CHECK(f.kappa > 0.68);
  CHECK(f.kappa < 0.72);
  CHECK(f.lo < 0.7);
  CHECK(f.hi > 0.7);
}

TEST_CASE("decay fit stops at the first zero") {
  std::vector<double> s;
  for (int k = 0; k < 12; ++k) s.push_back(std::pow(0.5, k));
  for (int k = 0; k < 6; ++k) s.push_back(0.0);
  const DecayFit f = fit_decay_rate(s);
  CHECK(f.floored);
  CHECK(f.window_end == 12);
  CHECK(f.kappa == doctest::Approx(0.5));
  CHECK_THROWS_AS(fit_decay_rate(std::vector<double>(5, 1.0)), std::invalid_argument);
}

TEST_CASE("decay fit with a trajectory bootstrap") {
  RngStream rng(4);
  const int rows = 50, K = 20;
  Eigen::MatrixXd T(rows, K);
  for (int r = 0; r < rows; ++r) {
    const double c = rng.uniform(0.5, 1.5);
    for (int k = 0; k < K; ++k) T(r, k) = c * std::pow(0.6, k);
  }
  const Eigen::VectorXd mean = T.colwise().mean();
  const std::vector<double> s(mean.data(), mean.data() + K);
  const DecayFit f = fit_decay_rate(s, &T);
  CHECK(f.kappa == doctest::Approx(0.6));
  CHECK(f.hi - f.lo < 1e-10);
}

TEST_CASE("dual distance estimate") {
  Setup st(Model::nse, 16, 16);
  RngStream rng(6);
  std::vector<SpectralField> a;
  for (int j = 0; j < 10; ++j) a.push_back(random_field(st.model, rng, rng.uniform(0.1, 2.0)));
  CHECK(lip_dual_estimate(a, a, 16, 1, 1) == 0.0);
  const SpectralField x = random_field(st.model, rng, 0.3);
  const SpectralField y = x + random_field(st.model, rng, 0.5);
  const double d = lip_dual_estimate({x}, {y}, 64, 1, 2);
  CHECK(d > 0.0);
  CHECK(d <= 0.5 + 1e-12);
}

TEST_CASE("identical pairs have zero f_K throughout") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  MixingConfig cfg = small_mixing();
  cfg.distance_schedule = {0.0};
  const MixingReport r = run_coupled_ensemble(eng, sample_density(), cfg);
  CHECK(r.fK.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& s : r.steps) CHECK(s.lip_lower == 0.0);
}

TEST_CASE("coupled ensemble") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  const KantorovichDensity kd = sample_density();
  const MixingConfig cfg = small_mixing();
  const MixingReport a = run_coupled_ensemble(eng, kd, cfg, true);

  SUBCASE("reproducible and independent of the scheduling") {
    const MixingReport b = run_coupled_ensemble(eng, kd, cfg, true);
    const MixingReport c = run_coupled_ensemble(eng, kd, cfg, false);
    CHECK(a.fK == b.fK);
    CHECK(a.fK == c.fK);
    MixingConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK(run_coupled_ensemble(eng, kd, other).fK != a.fK);
  }
  SUBCASE("lipschitz lower estimate is dominated") {
    CHECK(a.dominance_ok);
    for (const auto& s : a.steps) CHECK(s.lip_lower <= s.lip_upper);
  }
  SUBCASE("glued pairs stay glued") {
    for (int j = 0; j < a.fK.rows(); ++j) {
      bool zero = false;
      for (int k = 0; k < a.fK.cols(); ++k) {
        if (zero) CHECK(a.fK(j, k) == 0.0);
        zero = zero || a.fK(j, k) == 0.0;
      }
    }
  }
  SUBCASE("steps and bookkeeping") {
    CHECK(a.steps.size() == 9);
    CHECK(a.near_steps + a.far_steps == 8 * 8);
    CHECK(a.steps.back().mean_fK < a.steps.front().mean_fK);
  }
}

TEST_CASE("ensemble without noise contracts") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  MixingConfig cfg = small_mixing();
  cfg.zero_noise = true;
  cfg.horizon = 12;
  const MixingReport r = run_coupled_ensemble(eng, sample_density(), cfg);
  for (size_t k = 1; k < r.steps.size(); ++k) CHECK(r.steps[k].mean_dist <= r.steps[k - 1].mean_dist);
  CHECK(r.fit.kappa < 1.0);
}

TEST_CASE("synchronous contraction") {
  Setup st(Model::nse, 16, 16);
  const double kappa = synchronous_contraction(st.model, st.basis, st.spec, 1.0, 8, 12, 3);
  CHECK(kappa > 0.0);
  CHECK(kappa < 1.0);
}

TEST_CASE("stationary moments without noise vanish") {
  Setup st(Model::nse, 16, 16);
  StationaryConfig c;
  c.trajectories = 4;
  c.samples = 4;
  c.burn_in_min = 60;
  c.kappa = 0.5;
  c.radius = 3.0;
  c.bootstrap = 20;
  c.zero_noise = true;
  const StationaryReport r = estimate_stationary(st.model, st.basis, st.spec, c);
  CHECK(r.burn_in == 60);
  for (const auto& m : r.moments) {
    CHECK(std::abs(m.mean_a) < 1e-10);
    CHECK(std::abs(m.mean_b) < 1e-10);
    CHECK(m.agree);
  }
}

TEST_CASE("stationary band narrows with the ensemble size") {
  Setup st(Model::nse, 16, 16);
  StationaryConfig c;
  c.samples = 20;
  c.burn_in_min = 20;
  c.kappa = 0.5;
  c.radius = 1.0;
  c.bootstrap = 400;
  c.trajectories = 16;
  const StationaryReport small = estimate_stationary(st.model, st.basis, st.spec, c);
  c.trajectories = 32;
  const StationaryReport large = estimate_stationary(st.model, st.basis, st.spec, c);
  const MomentRow& s = row(small, "norm1_sq");
  const MomentRow& l = row(large, "norm1_sq");
  const double ratio = (l.hi_a - l.lo_a) / (s.hi_a - s.lo_a);
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.3));
  CHECK(large.max_norm > 0.0);
  CHECK(std::isfinite(large.max_norm));
}

TEST_CASE("mixing csv files") {
  MixingReport r;
  r.steps.resize(2);
  r.steps[1].k = 1;
  std::ostringstream os;
  write_mixing_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "k,mean_fK,q10,q90,mean_dist,glued_fraction,lip_lower,lip_upper");
  int rows = 0;
  while (std::getline(is, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
    ++rows;
  }
  CHECK(rows == 2);

  std::ostringstream ss;
  write_mixing_summary(ss, r, sample_density(), small_params());
  CHECK(ss.str().rfind("key,value\nkappa,", 0) == 0);
}
