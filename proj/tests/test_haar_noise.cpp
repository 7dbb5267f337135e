#include "doctest.h"

#include <cmath>
#include <sstream>

#include "mixforge/haar_noise.hpp"
#include "support.hpp"

using namespace mixforge;
using mixforge::testing::Setup;

TEST_CASE("haar values at sample points") {
  CHECK(haar_eval({-1, 0}, 0.5) == doctest::Approx(1.0));
  CHECK(haar_eval({1, 1}, 0.55) == doctest::Approx(std::sqrt(2.0)));
  CHECK(haar_eval({1, 1}, 0.80) == doctest::Approx(-std::sqrt(2.0)));
  CHECK(haar_eval({2, 0}, 0.9) == 0.0);
  CHECK(haar_eval({0, 0}, 0.25) == doctest::Approx(1.0));
  CHECK(haar_eval({0, 0}, 0.75) == doctest::Approx(-1.0));
}

TEST_CASE("haar rejects bad arguments") {
  CHECK_THROWS_AS(haar_eval({0, 0}, 1.0), std::domain_error);
  CHECK_THROWS_AS(haar_eval({0, 0}, -0.1), std::domain_error);
  CHECK_THROWS_AS(haar_eval({1, 2}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(haar_eval({-1, 1}, 0.1), std::invalid_argument);
}

TEST_CASE("haar system is orthonormal") {
  // Midpoint quadrature on a grid finer than the smallest support is exact
  // for products of piecewise constants.
  const int J = 5;
  const auto idx = haar_indices(J);
  REQUIRE(static_cast<int>(idx.size()) == haar_count(J));
  const int n = 1 << (J + 2);
  for (size_t a = 0; a < idx.size(); ++a)
    for (size_t b = a; b < idx.size(); ++b) {
      double acc = 0.0;
      for (int q = 0; q < n; ++q) {
        const double t = (q + 0.5) / n;
        acc += haar_eval(idx[a], t) * haar_eval(idx[b], t);
      }
      acc /= n;
      CHECK(acc == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("tent density values") {
  TentDensity rho(0.5);
  CHECK(rho.pdf(0.0) == doctest::Approx(2.0 / 3.0));
  CHECK(rho.pdf(1.2) == 0.0);
  CHECK(rho.pdf(-1.0) == doctest::Approx(1.0 / 3.0));
  CHECK(rho.cdf(-1.0) == doctest::Approx(0.0));
  CHECK(rho.cdf(0.0) == doctest::Approx(0.5));
  CHECK(rho.cdf(1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(TentDensity(1.0), std::invalid_argument);
  CHECK_THROWS_AS(TentDensity(-0.1), std::invalid_argument);
}

TEST_CASE("tent sampler matches its law") {
  for (double s : {0.0, 0.5, 0.9}) {
    TentDensity rho(s);
    RngStream rng(11, 3);
    const int n = 100000;
    double mean = 0.0, var = 0.0;
    int below = 0;
    for (int k = 0; k < n; ++k) {
      const double x = rho.sample(rng);
      REQUIRE(std::abs(x) <= 1.0);
      mean += x;
      var += x * x;
      if (x < 0.5) ++below;
    }
    mean /= n;
    var /= n;
    // second moment of (1 - s|x|)/(2 - s): (1/3 - s/4) * 2 / (2 - s)
    const double var_exact = (1.0 / 3.0 - s / 4.0) * 2.0 / (2.0 - s);
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(var_exact).epsilon(0.02));
    CHECK(double(below) / n == doctest::Approx(rho.cdf(0.5)).epsilon(0.01));
  }
}

TEST_CASE("noise spec validation") {
  NoiseSpec s = NoiseSpec::defaults(4, 1, 1.0);
  CHECK_NOTHROW(s.validate());
  CHECK(s.dimension() == 16);
  s.amplitudes[2] = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = NoiseSpec::defaults(4, 1, 1.0);
  s.time_coefficients[0].pop_back();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = NoiseSpec::defaults(4, 1, 1.0);
  s.density_slope = 1.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("noise radius is the coefficient l2 norm") {
  NoiseSpec s = NoiseSpec::defaults(3, 1, 2.0);
  double acc = 0.0;
  for (int i = 1; i <= 3; ++i) {
    const double b = 2.0 / (i * i);
    acc += b * b * (1.0 + 1.0 + 2.0 * 0.25);
  }
  CHECK(s.radius() == doctest::Approx(std::sqrt(acc)));
}

TEST_CASE("zero path gives zero field") {
  Setup st(Model::nse, 16, 16, 2);
  const NoisePath p = zero_path(st.spec);
  for (double t : {0.0, 0.3, 0.99}) CHECK(noise_eval(p, st.basis, t).is_zero());
  const Forcing f = forcing_from_path(p, st.basis);
  for (const auto& piece : f.pieces) CHECK(piece.is_zero());
}

TEST_CASE("scaling coefficient alone gives a constant-in-time field") {
  auto spec = std::make_shared<NoiseSpec>(NoiseSpec::defaults(1, 0, 1.0));
  Setup st(Model::nse, 16, 16);
  NoisePath p = zero_path(spec);
  p.xi[0] = 0.5;
  const SpectralField expect = 0.5 * st.basis[0];
  for (double t : {0.0, 0.25, 0.5, 0.9}) {
    const SpectralField e = noise_eval(p, st.basis, t);
    CHECK(sobolev_norm(e - expect, 1) < 1e-15);
  }
}

TEST_CASE("a single wavelet coordinate is antisymmetric in time") {
  auto spec = std::make_shared<NoiseSpec>(NoiseSpec::defaults(2, 1, 1.0));
  Setup st(Model::nse, 16, 16);
  NoisePath p = zero_path(spec);
  p.xi[1 * spec->modes + 1] = 0.7;  // level 0 wavelet of mode 2
  const SpectralField a = noise_eval(p, st.basis, 0.25);
  const SpectralField b = noise_eval(p, st.basis, 0.75);
  CHECK(sobolev_norm(a + b, 1) < 1e-15);
  CHECK(sobolev_norm(a, 1) == doctest::Approx(0.7 * 0.25));
}

TEST_CASE("forcing pieces agree with pointwise evaluation") {
  Setup st(Model::cgl, 16, 16, 2);
  RngStream rng(5);
  const NoisePath p = sample_noise_path(st.spec, rng);
  const Forcing f = forcing_from_path(p, st.basis);
  REQUIRE(f.pieces.size() == 8);
  for (int q = 0; q < 8; ++q) {
    const SpectralField e = noise_eval(p, st.basis, (q + 0.5) / 8.0);
    CHECK(sobolev_norm(e - f.pieces[q], 2) < 1e-13);
  }
}

TEST_CASE("noise paths are reproducible from the seed") {
  Setup st(Model::nse, 16, 16, 1);
  RngStream r1(9, 1, 2), r2(9, 1, 2), r3(9, 1, 3);
  const NoisePath a = sample_noise_path(st.spec, r1);
  const NoisePath b = sample_noise_path(st.spec, r2);
  const NoisePath c = sample_noise_path(st.spec, r3);
  CHECK(a.xi == b.xi);
  CHECK(a.xi != c.xi);
  CHECK(a.xi.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("Parseval in the time variable") {
  // int_0^1 |eta_t|^2 dt equals the sum of squared coefficients.
  Setup st(Model::nse, 16, 16, 2);
  RngStream rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const NoisePath p = sample_noise_path(st.spec, rng);
    const Forcing f = forcing_from_path(p, st.basis);
    double lhs = 0.0;
    for (const auto& piece : f.pieces) lhs += std::pow(sobolev_norm(piece, 1), 2) / f.pieces.size();
    double rhs = 0.0;
    for (int k = 0; k < st.spec->dimension(); ++k) rhs += std::pow(st.spec->coordinate_coefficient(k) * p.xi[k], 2);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("kick mode") {
  Setup st(Model::nse, 16, 16);
  NoiseSpec ks = NoiseSpec::defaults(st.basis.size(), 0, 1.0);
  ks.kick_mode = true;
  CHECK(ks.dimension() == ks.modes);
  CHECK(kick_from_coords(ks, st.basis, Eigen::VectorXd::Zero(ks.modes)).is_zero());
  RngStream r1(4), r2(4);
  const SpectralField a = kick_sample(ks, st.basis, r1);
  const SpectralField b = kick_sample(ks, st.basis, r2);
  CHECK(sobolev_norm(a - b, 1) == 0.0);
  double bound = 0.0;
  for (double amp : ks.amplitudes) bound += amp;
  CHECK(sobolev_norm(a, 1) <= bound);
  auto kp = std::make_shared<NoiseSpec>(ks);
  CHECK_THROWS_AS(noise_eval(zero_path(kp), st.basis, 0.1), std::invalid_argument);
}

TEST_CASE("path csv has the documented columns") {
  Setup st(Model::nse, 16, 16, 1);
  RngStream rng(2);
  std::ostringstream os;
  write_path_csv(os, sample_noise_path(st.spec, rng));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "i,level,shift,xi");
  int rows = 0;
  while (std::getline(is, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
    ++rows;
  }
  CHECK(rows == st.spec->dimension());
}
