#include "doctest.h"

#include <cmath>

#include "mixforge/spectral_models.hpp"
#include "support.hpp"

using namespace mixforge;
using mixforge::testing::Setup;

namespace {

SpectralField copy_to(const SpectralField& u, const FlowModel& target) {
  SpectralField v = target.zero_field();
  for (const auto& md : target.grid()->retained())
    for (int c = 0; c < v.components(); ++c) v.at(c, md.k1, md.k2) = u.at(c, md.k1, md.k2);
  return v;
}

SpectralField shear(const FlowModel& fm, cplx a) {
  // u = a exp(i x1) (0, 1) + c.c.
  SpectralField u = fm.zero_field();
  u.at(1, 1, 0) = a;
  u.at(1, -1, 0) = std::conj(a);
  return u;
}

}  // namespace

TEST_CASE("grid truncation follows the two-thirds rule") {
  auto g = Grid::make(32);
  CHECK(g->kmax() == 10);
  CHECK(g->is_retained(10, -10));
  CHECK_FALSE(g->is_retained(11, 0));
  CHECK(Grid::make(16)->kmax() == 5);
}

TEST_CASE("fft round trip") {
  Setup st(Model::cgl, 16, 16);
  RngStream rng(1);
  const SpectralField u = random_field(st.model, rng, 1.0, 20.0);
  const auto& g = *u.grid();
  std::vector<cplx> phys(g.size()), back(g.size());
  g.inverse(u.comp(0).data(), phys.data());
  g.forward(phys.data(), back.data());
  double err = 0.0;
  for (int i = 0; i < g.size(); ++i) err = std::max(err, std::abs(back[i] - u.comp(0)[i]));
  CHECK(err < 1e-14);
}

TEST_CASE("leray projection") {
  Setup st(Model::nse, 16, 16);
  SpectralField grad = st.model.zero_field();
  // gradient of cos(x1 + 2 x2): u_k parallel to k
  grad.at(0, 1, 2) = cplx(0.5, 0.0) * 1.0;
  grad.at(1, 1, 2) = cplx(0.5, 0.0) * 2.0;
  grad.at(0, -1, -2) = cplx(0.5, 0.0) * -1.0;
  grad.at(1, -1, -2) = cplx(0.5, 0.0) * -2.0;
  CHECK(leray_project(grad).max_abs() < 1e-15);

  SpectralField e1 = st.model.zero_field();
  e1.at(0, 1, 0) = 1.0;
  e1.at(0, -1, 0) = 1.0;
  CHECK(leray_project(e1).max_abs() < 1e-15);
  SpectralField e2 = st.model.zero_field();
  e2.at(1, 1, 0) = 1.0;
  e2.at(1, -1, 0) = 1.0;
  CHECK(sobolev_norm(leray_project(e2) - e2, 0) < 1e-15);

  RngStream rng(3);
  const SpectralField u = random_field(st.model, rng, 1.0);
  CHECK(sobolev_norm(leray_project(u) - u, 0) < 1e-14);
  CHECK(divergence_max(u) < 1e-14);

  Setup sc(Model::cgl, 16, 16);
  CHECK_THROWS_AS(leray_project(sc.model.zero_field()), std::invalid_argument);
}

TEST_CASE("sobolev norms") {
  Setup st(Model::cgl, 16, 16);
  SpectralField u = st.model.zero_field();
  CHECK(sobolev_norm(u, 1) == 0.0);
  u.at(0, 1, 0) = 1.0;
  CHECK(sobolev_norm(u, 0) == doctest::Approx(1.0));
  CHECK(sobolev_norm(u, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(sobolev_norm(u, 2) == doctest::Approx(2.0));
  RngStream rng(8);
  const SpectralField v = random_field(st.model, rng, 1.0);
  CHECK(sobolev_norm(v, 0) <= sobolev_norm(v, 1));
  CHECK(sobolev_norm(v, 1) <= sobolev_norm(v, 2));
  CHECK(sobolev_norm(v, 2) == doctest::Approx(1.0));
}

TEST_CASE("spatial basis is orthonormal in the state norm") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup st(m, 16, 16, 0, 12);
    const int s = st.model.state_index();
    for (int i = 0; i < st.basis.size(); ++i)
      for (int j = 0; j < st.basis.size(); ++j)
        CHECK(sobolev_inner(st.basis[i], st.basis[j], s) == doctest::Approx(i == j ? 1.0 : 0.0).scale(1.0));
    if (m == Model::nse)
      for (int i = 0; i < st.basis.size(); ++i) CHECK(divergence_max(st.basis[i]) < 1e-15);
  }
}

TEST_CASE("state coordinates round trip and encode the inner product") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup st(m, 16, 16);
    const StateCoords sc(m, st.model.grid(), st.model.state_index());
    RngStream rng(10);
    const SpectralField a = random_field(st.model, rng, 1.0, 30.0);
    const SpectralField b = random_field(st.model, rng, 1.0, 30.0);
    const Eigen::VectorXd xa = sc.to_vector(a), xb = sc.to_vector(b);
    CHECK(sobolev_norm(sc.from_vector(xa) - a, 0) < 1e-14);
    CHECK(xa.dot(sc.gram().asDiagonal() * xb) ==
          doctest::Approx(sobolev_inner(a, b, st.model.state_index())).epsilon(1e-12));
  }
}

TEST_CASE("nonlinearity vanishes where it should") {
  Setup st(Model::nse, 16, 16);
  CHECK(st.model.nonlinearity(st.model.zero_field()).max_abs() == 0.0);
  CHECK(st.model.nonlinearity(shear(st.model, cplx(0.3, -0.2))).max_abs() < 1e-14);
  Setup sc(Model::cgl, 16, 16);
  CHECK(sc.model.nonlinearity(sc.model.zero_field()).max_abs() == 0.0);
}

TEST_CASE("advection conserves energy") {
  Setup st(Model::nse, 32, 32);
  RngStream rng(12);
  for (int t = 0; t < 5; ++t) {
    const SpectralField u = random_field(st.model, rng, 3.0, 40.0);
    const SpectralField b = st.model.nonlinearity(u);
    CHECK(std::abs(l2_inner(b, u)) < 1e-12 * sobolev_norm(b, 0) * sobolev_norm(u, 0) + 1e-15);
  }
}

TEST_CASE("flow of zero without noise stays zero") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup st(m, 16, 16);
    CHECK(flow_map(st.model, st.basis, st.model.zero_field(), zero_path(st.spec)).max_abs() == 0.0);
  }
}

TEST_CASE("shear flow decays at the viscous rate") {
  Setup st(Model::nse, 16, 16);
  const SpectralField u = shear(st.model, cplx(0.4, 0.1));
  const SpectralField u1 = flow_map(st.model, st.basis, u, zero_path(st.spec));
  CHECK(sobolev_norm(u1 - std::exp(-0.5) * u, 0) < 1e-12);
}

TEST_CASE("constant mode of the Ginzburg-Landau model") {
  // du/dt = -gamma u - i |u|^2 u: the modulus decays exponentially (exact
  // under the splitting), the phase turns by the integrated squared modulus
  // (first order in the substep).
  const cplx c(0.8, 0.3);
  const double g = 0.5;
  const double turn = -std::norm(c) * (1.0 - std::exp(-2.0 * g)) / (2.0 * g);
  std::vector<double> err;
  for (int n : {16, 32, 64}) {
    Setup st(Model::cgl, 16, n);
    SpectralField u = st.model.zero_field();
    u.at(0, 0, 0) = c;
    const cplx got = flow_map(st.model, st.basis, u, zero_path(st.spec)).at(0, 0, 0);
    CHECK(std::abs(got) == doctest::Approx(std::abs(c) * std::exp(-g)).epsilon(1e-12));
    err.push_back(std::abs(std::arg(got / c) - turn));
  }
  CHECK(err[0] / err[1] == doctest::Approx(2.0).epsilon(0.05));
  CHECK(err[1] / err[2] == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("integration over split ranges matches one pass") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup st(m, 16, 32, 1);
    RngStream rng(21);
    const SpectralField u0 = random_field(st.model, rng, 1.0);
    const Forcing f = forcing_from_path(sample_noise_path(st.spec, rng), st.basis);
    const SpectralField whole = st.model.integrate(u0, f);
    const SpectralField half = st.model.integrate(u0, f, nullptr, 0, 16);
    const SpectralField rest = st.model.integrate(half, f, nullptr, 16, 32);
    CHECK(sobolev_norm(whole - rest, 0) == 0.0);
  }
}

TEST_CASE("first-order convergence in the substep") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup ref(m, 16, 512, 1);
    RngStream rng(33);
    const SpectralField u0 = random_field(ref.model, rng, 1.0);
    const NoisePath eta = sample_noise_path(ref.spec, rng);
    const SpectralField exact = flow_map(ref.model, ref.basis, u0, eta);
    std::vector<double> err;
    for (int n : {8, 16, 32}) {
      Setup st(m, 16, n, 1);
      NoisePath p = eta;
      p.spec = st.spec;
      const SpectralField u1 = flow_map(st.model, st.basis, copy_to(u0, st.model), p);
      err.push_back(sobolev_norm(copy_to(u1, ref.model) - exact, ref.model.state_index()));
    }
    CHECK(err[0] / err[1] > 1.8);
    CHECK(err[1] / err[2] > 1.8);
  }
}

TEST_CASE("velocity stays divergence free with zero mean") {
  Setup st(Model::nse, 16, 16, 1);
  RngStream rng(4);
  SpectralField u = random_field(st.model, rng, 2.0);
  for (int k = 0; k < 5; ++k) {
    u = flow_map(st.model, st.basis, u, sample_noise_path(st.spec, rng));
    CHECK(divergence_max(u) < 1e-12);
    CHECK(u.at(0, 0, 0) == cplx(0.0));
    CHECK(u.at(1, 0, 0) == cplx(0.0));
  }
}

TEST_CASE("dissipativity") {
  for (Model m : {Model::nse, Model::cgl}) {
    Setup st(m, 16, 16);
    RngStream rng(5, int(m));
    std::vector<std::pair<SpectralField, NoisePath>> samples;
    for (int k = 0; k < 10; ++k)
      samples.emplace_back(random_field(st.model, rng, rng.uniform(0.1, 4.0)), sample_noise_path(st.spec, rng));
    const DissipativityReport rep = dissipativity_check(st.model, st.basis, samples);
    CHECK(rep.violations == 0);
    CHECK(rep.max_zero_noise_ratio < 1.0);
    CHECK(rep.beta >= 0.0);
  }
}

TEST_CASE("additive constant is of the order of the noise energy") {
  Setup st(Model::nse, 16, 16);
  RngStream rng(6);
  std::vector<std::pair<SpectralField, NoisePath>> samples;
  for (int k = 0; k < 20; ++k) samples.emplace_back(st.model.zero_field(), sample_noise_path(st.spec, rng));
  const DissipativityReport rep = dissipativity_check(st.model, st.basis, samples);
  // From rest, ||u1|| <= int_0^1 ||eta_t|| dt <= R_eta.
  CHECK(rep.beta <= std::pow(st.spec->radius(), 2));
}

TEST_CASE("hamiltonian monitor") {
  Setup st(Model::cgl, 16, 16);
  CHECK(hamiltonian_monitor(st.model, st.model.zero_field()) == 0.0);
  SpectralField u = st.model.zero_field();
  const cplx c(0.6, -0.2);
  u.at(0, 0, 0) = c;
  const double area = 4.0 * M_PI * M_PI;
  CHECK(hamiltonian_monitor(st.model, u) == doctest::Approx(area * std::pow(std::norm(c), 2) / 4.0));
  RngStream rng(2);
  CHECK(hamiltonian_monitor(st.model, random_field(st.model, rng, 1.0)) > 0.0);
  Setup sn(Model::nse, 16, 16);
  CHECK_THROWS_AS(hamiltonian_monitor(sn.model, sn.model.zero_field()), std::invalid_argument);
}

TEST_CASE("configuration is validated") {
  FlowConfig c = FlowConfig::defaults(Model::nse);
  c.substeps = 24;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FlowConfig::defaults(Model::nse);
  c.nu = 0.0;
  CHECK_THROWS_AS(FlowModel{c}, std::invalid_argument);
  c = FlowConfig::defaults(Model::cgl);
  c.sobolev_m = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("blow-up guard trips") {
  Setup st(Model::nse, 16, 16);
  RngStream rng(1);
  const SpectralField u0 = random_field(st.model, rng, 1.0);
  CHECK_THROWS_AS(st.model.integrate(u0, Forcing{}, nullptr, 0, -1, 0.5), BlowUpError);
  CHECK_NOTHROW(st.model.integrate(u0, Forcing{}, nullptr, 0, -1, 2.0));
}

TEST_CASE("sup norm bounds the l2 mean") {
  Setup st(Model::cgl, 16, 16);
  RngStream rng(7);
  const SpectralField u = random_field(st.model, rng, 1.0);
  CHECK(st.model.sup_norm(u) >= sobolev_norm(u, 0));
  SpectralField c = st.model.zero_field();
  c.at(0, 0, 0) = cplx(0.0, 2.0);
  CHECK(st.model.sup_norm(c) == doctest::Approx(2.0));
}
