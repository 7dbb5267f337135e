#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mixforge/coupling_engine.hpp"
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

KantorovichDensity sample_density(double d0 = 0.2) { return build_kantorovich_f(0.6, 1.0, 3.125, d0, 0.3, 0.15); }

// Two-sample Kolmogorov-Smirnov statistic.
double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

double ks_two_sample_critical(size_t n, size_t m, double alpha) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt(double(n + m) / double(n * m));
}

}  // namespace

TEST_CASE("control vanishes at equal states and is linear in the offset") {
  Setup st(Model::nse, 16, 16);
  RngStream rng(1);
  const SpectralField u = random_field(st.model, rng, 1.0);
  const ControlContext ctx(st.model, st.basis, small_params(), u, sample_noise_path(st.spec, rng));
  CHECK(phi_control(ctx, u).norm() == 0.0);
  const SpectralField h = random_field(st.model, rng, 0.04);
  const Eigen::VectorXd p1 = phi_control(ctx, u + h);
  const Eigen::VectorXd p2 = phi_control(ctx, u + 2.0 * h);
  CHECK((p2 - 2.0 * p1).norm() < 1e-12 * p2.norm());
  CHECK(p1.tail(p1.size() - 4).norm() == 0.0);
  CHECK_THROWS_AS(phi_control(ctx, u + 10.0 * h), std::domain_error);
}

TEST_CASE("clamp caps the control") {
  Setup st(Model::cgl, 16, 16);
  RngStream rng(2);
  ControlParams p = small_params();
  p.clamp_radius = 1e-6;
  const SpectralField u = random_field(st.model, rng, 1.0);
  const ControlContext ctx(st.model, st.basis, p, u, sample_noise_path(st.spec, rng));
  bool clamped = false;
  const Eigen::VectorXd phi = phi_control(ctx, u + random_field(st.model, rng, 0.1), &clamped);
  CHECK(clamped);
  CHECK(std::sqrt(phi.head(4).cwiseProduct(ctx.A().gram_E).dot(phi.head(4))) == doctest::Approx(1e-6));
}

TEST_CASE("squeeze ratio of the linear model is the inverse defect") {
  FlowConfig fc = Setup::flow(Model::nse, 16, 16);
  fc.nonlinear = false;
  Setup st(fc);
  RngStream rng(3);
  const SpectralField u = random_field(st.model, rng, 1.0);
  const ControlContext ctx(st.model, st.basis, small_params(), u, sample_noise_path(st.spec, rng));
  const SpectralField h = random_field(st.model, rng, 0.1);
  const SqueezeResult s = psi_squeeze(ctx, u + h);
  const StateCoords sc(Model::nse, st.model.grid(), 1);
  const double defect = ctx.R().defect(-sc.to_vector(ctx.du_apply(h)));
  CHECK(s.ratio * 0.1 == doctest::Approx(defect).epsilon(1e-8));
  CHECK(psi_squeeze(ctx, u).ratio == 0.0);
}

TEST_CASE("squeezing contracts on the nonlinear model") {
  Setup st(Model::nse, 16, 16);
  RngStream rng(4);
  for (int t = 0; t < 5; ++t) {
    const SpectralField u = random_field(st.model, rng, 1.0);
    const ControlContext ctx(st.model, st.basis, small_params(), u, sample_noise_path(st.spec, rng));
    CHECK(psi_squeeze(ctx, u + random_field(st.model, rng, 0.05)).ratio < 0.5);
  }
}

TEST_CASE("pushforward density of simple maps") {
  const TentDensity rho(0.5);
  const ControlParams p = small_params();
  Eigen::VectorXd c(3);
  c << 0.1, -0.2, 0.05;
  Eigen::VectorXd x(3);
  x << 0.3, 0.1, -0.4;
  SUBCASE("zero map") {
    const DensityEval e = pushforward_density([](const Eigen::VectorXd& v) { return Eigen::VectorXd::Zero(v.size()); },
                                              rho, x, p);
    CHECK(e.q == doctest::Approx(product_density(rho, x)));
    CHECK(e.jacobian == doctest::Approx(1.0));
  }
  SUBCASE("constant shift") {
    const DensityEval e = pushforward_density([&](const Eigen::VectorXd&) { return Eigen::VectorXd(c); }, rho, x, p);
    CHECK((e.preimage - (x - c)).norm() < 1e-14);
    CHECK(e.q == doctest::Approx(product_density(rho, x - c)));
  }
  SUBCASE("linear contraction") {
    const double eps = 0.1;
    const DensityEval e =
        pushforward_density([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(eps * v); }, rho, x, p);
    CHECK((e.preimage - x / (1.0 + eps)).norm() < 1e-11);
    CHECK(e.jacobian == doctest::Approx(std::pow(1.0 + eps, 3)).epsilon(1e-9));
    CHECK(e.q == doctest::Approx(product_density(rho, x / (1.0 + eps)) / std::pow(1.0 + eps, 3)).epsilon(1e-9));
  }
  SUBCASE("expanding map falls back to newton") {
    // v - 2v = x: plain iteration diverges, the preimage is -x
    const DensityEval e =
        pushforward_density([](const Eigen::VectorXd& v) { return Eigen::VectorXd(-2.0 * v); }, rho, x, p);
    CHECK((e.preimage + x).norm() < 1e-11);
    CHECK(e.jacobian == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(e.q == doctest::Approx(product_density(rho, -x)).epsilon(1e-9));
  }
  SUBCASE("singular map does not converge") {
    ControlParams q = p;
    q.fixed_point_max = 20;
    CHECK_THROWS_AS(pushforward_density([](const Eigen::VectorXd& v) { return Eigen::VectorXd(-v); }, rho, x, q),
                    FixedPointError);
  }
}

TEST_CASE("maximal coupling of one-dimensional laws") {
  auto uniform_on = [](double lo, double hi) {
    return std::pair{std::function<double(const Eigen::VectorXd&)>([=](const Eigen::VectorXd& v) {
                       return v[0] >= lo && v[0] <= hi ? 1.0 / (hi - lo) : 0.0;
                     }),
                     std::function<Eigen::VectorXd(RngStream&)>([=](RngStream& r) {
                       return Eigen::VectorXd::Constant(1, r.uniform(lo, hi));
                     })};
  };
  const auto [pd, ps] = uniform_on(-1.0, 1.0);
  const int n = 20000;
  SUBCASE("equal laws always couple") {
    RngStream rng(5);
    for (int t = 0; t < 1000; ++t) CHECK(maximal_coupling_sample(pd, pd, ps, ps, rng).equal);
  }
  SUBCASE("disjoint laws never couple") {
    const auto [qd, qs] = uniform_on(2.0, 4.0);
    RngStream rng(6);
    for (int t = 0; t < 1000; ++t) {
      const MaximalSample s = maximal_coupling_sample(pd, qd, ps, qs, rng);
      CHECK_FALSE(s.equal);
      CHECK(s.y[0] >= 2.0);
    }
  }
  SUBCASE("overlap gives one minus the total variation") {
    const auto [qd, qs] = uniform_on(-0.7, 1.3);
    RngStream rng(7);
    int equal = 0;
    std::vector<double> ys;
    for (int t = 0; t < n; ++t) {
      const MaximalSample s = maximal_coupling_sample(pd, qd, ps, qs, rng);
      equal += s.equal;
      ys.push_back(s.y[0]);
    }
    CHECK(double(equal) / n == doctest::Approx(0.85).epsilon(0.02));
    // y has the law q
    double below = 0.0;
    for (double y : ys) below += y < 0.3;
    CHECK(below / n == doctest::Approx(0.5).epsilon(0.03));
    CHECK(*std::min_element(ys.begin(), ys.end()) >= -0.7);
  }
}

TEST_CASE("kantorovich density table") {
  const KantorovichDensity kd = sample_density();
  CHECK(kd.R0 == doctest::Approx(2.5));
  CHECK(kd.a1 == doctest::Approx(0.5));
  CHECK(kd.N0 == 15);
  CHECK(kantorovich_relation_holds(kd));
  CHECK(kd.values.back() > 2.0 * kd.d0);
  CHECK(kd.f(kd.R_star) == doctest::Approx(3.0 * kd.d0));
  CHECK(kd.f(10.0) == doctest::Approx(3.0 * kd.d0));
  CHECK(kd.f(kd.R0) == doctest::Approx(kd.a1));
  double prev = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = std::exp(std::log(1e-6) + (std::log(2.0 * kd.R_star) - std::log(1e-6)) * i / 10000.0);
    const double f = kd.f(x);
    CHECK(f >= prev);
    CHECK(f > 2.0 * kd.d0);
    CHECK(f <= 3.0 * kd.d0 * (1.0 + 1e-15));
    prev = f;
  }
}

TEST_CASE("kantorovich construction guards") {
  CHECK_THROWS_AS(build_kantorovich_f(0.6, 1.0, 3.125, 0.2, 0.3, 0.15, 0.02), InfeasibleError);
  CHECK_THROWS_AS(build_kantorovich_f(1.2, 1.0, 3.125, 0.2, 0.3, 0.15), std::invalid_argument);
  CHECK_THROWS_AS(build_kantorovich_f(0.6, 1.0, 2.0, 0.2, 0.3, 0.15), std::invalid_argument);
  CHECK_THROWS_AS(build_kantorovich_f(0.6, 1.0, 3.125, 0.2, 0.3, 0.4), std::invalid_argument);
  // a_N0 > 2 d0 needs a1 - a2 < (d0/2) p1^(N0-2), about 1.9e-12 here
  const KantorovichDensity ok = build_kantorovich_f(0.6, 1.0, 3.125, 0.2, 0.3, 0.15, 0.5 - 1e-13);
  CHECK(kantorovich_relation_holds(ok));
}

TEST_CASE("f_K values") {
  const KantorovichDensity kd = build_kantorovich_f(0.6, 1.0, 3.125, 0.1, 0.3, 0.15);
  CHECK(f_K_value(kd, 0.05, 1.0) == doctest::Approx(0.05));
  CHECK(f_K_value(kd, 0.0, 1.0) == 0.0);
  CHECK(f_K_value(kd, 1.0, kd.R_star) == doctest::Approx(0.3));
  RngStream rng(8);
  for (int t = 0; t < 10000; ++t) {
    const double d = std::exp(rng.uniform(std::log(1e-6), std::log(10.0)));
    const double f = f_K_value(kd, d, rng.uniform(0.0, 2.0 * kd.R_star));
    const double m = std::min(d, kd.d0);
    CHECK(f >= m);
    CHECK(f <= 3.0 * m * (1.0 + 1e-15));
  }
}

TEST_CASE("coupled step glues equal states") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  RngStream rng(9);
  const SpectralField u = random_field(st.model, rng, 1.0);
  const CouplingOutcome o = eng.coupled_step(u, u, sample_density(), rng);
  CHECK(o.branch == Branch::near);
  CHECK(o.glued_equal);
  CHECK(sobolev_norm(o.u1 - o.u1_prime, 0) == 0.0);
  CHECK(o.tv_estimate == 0.0);
}

TEST_CASE("far branch shares the noise") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  RngStream rng(10);
  const SpectralField u = random_field(st.model, rng, 1.0);
  const SpectralField v = random_field(st.model, rng, 1.0);
  const CouplingOutcome o = eng.coupled_step(u, v, sample_density(), rng);
  CHECK(o.branch == Branch::far);
  CHECK(o.eta.xi == o.eta_prime.xi);
  CHECK_FALSE(o.glued_equal);
}

TEST_CASE("coupled marginals match the uncoupled kernel") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  const KantorovichDensity kd = sample_density();
  RngStream rng(11);
  const SpectralField u = random_field(st.model, rng, 1.0);
  SUBCASE("far branch") {
    const SpectralField v = random_field(st.model, rng, 1.5);
    std::vector<double> coupled, plain;
    for (int t = 0; t < 200; ++t) {
      RngStream r(11, 1, t);
      coupled.push_back(sobolev_norm(eng.coupled_step(u, v, kd, r).u1_prime, 1));
      RngStream q(11, 2, t);
      plain.push_back(sobolev_norm(flow_map(st.model, st.basis, v, sample_noise_path(st.spec, q)), 1));
    }
    CHECK(ks_two_sample(coupled, plain) < ks_two_sample_critical(200, 200, 0.01));
  }
  SUBCASE("near branch") {
    const SpectralField v = u + random_field(st.model, rng, 0.02);
    const int n = 120;
    std::vector<std::vector<double>> coords(4);
    for (int t = 0; t < n; ++t) {
      RngStream r(11, 3, t);
      const CouplingOutcome o = eng.coupled_step(u, v, kd, r);
      REQUIRE(o.branch == Branch::near);
      for (int i = 0; i < 4; ++i) coords[i].push_back(o.eta_prime.xi[i]);
    }
    const TentDensity rho(st.spec->density_slope);
    const double crit = std::sqrt(-0.5 * std::log(0.01 / 8.0)) / std::sqrt(double(n));
    for (const auto& c : coords) {
      std::vector<double> x = c;
      std::sort(x.begin(), x.end());
      double d = 0.0;
      for (size_t k = 0; k < x.size(); ++k) {
        const double F = rho.cdf(x[k]);
        d = std::max({d, std::abs(F - double(k) / n), std::abs(F - double(k + 1) / n)});
      }
      CHECK(d < crit);
    }
  }
}

TEST_CASE("near-branch failure grows linearly with the distance") {
  Setup st(Model::nse, 16, 16);
  const CouplingEngine eng(st.model, st.basis, st.spec, small_params());
  RngStream rng(12);
  const SpectralField u = random_field(st.model, rng, 1.0);
  const SpectralField dir = random_field(st.model, rng, 1.0);
  std::vector<double> slope;
  for (double d : {0.01, 0.02, 0.04}) {
    // the same noise draws at every distance
    double tv = 0.0;
    for (int t = 0; t < 100; ++t) {
      RngStream r(12, 0, t);
      const auto np = eng.near_proposal(u, u + d * dir, r);
      tv += np.q > 0.0 ? std::max(0.0, 1.0 - np.p / np.q) : 1.0;
    }
    slope.push_back(tv / 100.0 / d);
  }
  const auto [lo, hi] = std::minmax_element(slope.begin(), slope.end());
  CHECK(*lo > 0.0);
  CHECK(*hi / *lo < 2.0);
}

TEST_CASE("near pairs contract in f_K on average") {
  // A failed glue costs about 2.5 d0 against a gain of order d, so d0 has to
  // be small against the inverse failure constant.
  Setup st(Model::nse, 16, 16);
  ControlParams p = small_params();
  p.d0 = 0.05;
  const CouplingEngine eng(st.model, st.basis, st.spec, p);
  const KantorovichDensity kd = sample_density(0.05);
  RngStream rng(13);
  double before = 0.0, after = 0.0;
  for (int t = 0; t < 100; ++t) {
    const SpectralField u = random_field(st.model, rng, rng.uniform(0.2, 1.5));
    const SpectralField v = u + random_field(st.model, rng, 0.02);
    const CouplingOutcome o = eng.coupled_step(u, v, kd, rng);
    before += f_K_eval(kd, u, v, 1);
    after += f_K_eval(kd, o.u1, o.u1_prime, 1);
  }
  CHECK(after <= 0.8 * before);
}

TEST_CASE("step csv") {
  std::ostringstream os;
  write_step_csv_header(os);
  CouplingOutcome o;
  write_step_csv_row(os, 3, o);
  CHECK(os.str() ==
        "step,branch,distance_before,distance_after,squeeze_ratio,glued_equal,tv_estimate,clamped\n"
        "3,far,0,0,0,0,0,0\n");
}

TEST_CASE("quantile") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0}, 0.25) == doctest::Approx(1.25));
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);
}
