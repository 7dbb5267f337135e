#include "doctest.h"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "mixforge/right_inverse.hpp"
#include "support.hpp"

using namespace mixforge;
using mixforge::testing::Setup;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, RngStream& rng) {
  Eigen::MatrixXd a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = rng.normal();
  return a;
}

Eigen::VectorXd random_vector(int n, RngStream& rng) {
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("identity operator") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(6, 6);
  const RightInverse R(I, 0.1, 6);
  RngStream rng(1);
  const Eigen::VectorXd f = random_vector(6, rng);
  CHECK(R.defect(f) / f.norm() == doctest::Approx(0.1 / 1.1).epsilon(1e-12));
  CHECK(R.defect(f) / f.norm() == doctest::Approx(0.090909).epsilon(1e-5));
  CHECK((R.apply(f) - f / 1.1).norm() < 1e-14);
  CHECK(R.apply(Eigen::VectorXd::Zero(6)).norm() == 0.0);
  CHECK(R.norm_estimate() == doctest::Approx(1.0 / 1.1).epsilon(1e-10));
}

TEST_CASE("diagonal operator") {
  Eigen::VectorXd d(4);
  d << 2.0, 1.0, 0.5, 0.1;
  const RightInverse R(Eigen::MatrixXd(d.asDiagonal()), 0.01, 4);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(4);
    e[i] = 1.0;
    CHECK(R.defect(e) == doctest::Approx(0.01 / (d[i] * d[i] + 0.01)).epsilon(1e-12));
  }
}

TEST_CASE("rectangular operator against the closed form") {
  RngStream rng(2);
  const Eigen::MatrixXd a = random_matrix(10, 16, rng);
  const double r = 1e-2;
  for (int M : {4, 9, 16}) {
    const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(16, 16).leftCols(M) *
                              Eigen::MatrixXd::Identity(16, 16).topRows(M);
    for (Projection proj : {Projection::restricted, Projection::outer}) {
      const Eigen::MatrixXd inner = proj == Projection::restricted ? Eigen::MatrixXd(a * P * a.transpose())
                                                                   : Eigen::MatrixXd(a * a.transpose());
      const Eigen::MatrixXd closed =
          P * a.transpose() * (inner + r * Eigen::MatrixXd::Identity(10, 10)).inverse();
      const RightInverse R(a, r, M, proj);
      const Eigen::VectorXd f = random_vector(10, rng);
      const Eigen::VectorXd z = R.apply(f);
      CHECK((z - closed * f).norm() < 1e-12 * (closed * f).norm());
      // image in the first M coordinates
      CHECK(z.tail(16 - M).norm() == 0.0);
      CHECK(R.norm_estimate() <= R.source_norm() / r * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("exact inverse limit") {
  RngStream rng(3);
  const Eigen::MatrixXd a = random_matrix(8, 8, rng) + 4.0 * Eigen::MatrixXd::Identity(8, 8);
  const RightInverse R(a, 1e-10, 8);
  const Eigen::VectorXd f = random_vector(8, rng);
  CHECK(R.defect(f) / f.norm() < 1e-8);
}

TEST_CASE("gram of the tangent operator") {
  Setup st(Model::nse, 16, 16, 1);
  RngStream rng(4);
  const BasePoint base =
      make_base_point(st.model, st.basis, random_field(st.model, rng, 1.0), sample_noise_path(st.spec, rng));
  const TangentOperator A = assemble_A(st.model, st.basis, base);
  const Eigen::MatrixXd G = build_gram(A);
  CHECK((G - G.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  CHECK(es.eigenvalues().minCoeff() > -1e-12 * es.eigenvalues().maxCoeff());

  TangentOperator Z = A;
  Z.columns.setZero();
  CHECK(build_gram(Z).norm() == 0.0);
}

TEST_CASE("orthonormal columns give the identity gram") {
  RngStream rng(5);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(6, 6, rng));
  TangentOperator A;
  A.columns = qr.householderQ() * Eigen::MatrixXd::Identity(6, 4);
  A.gram_E = Eigen::VectorXd::Ones(4);
  A.gram_H = Eigen::VectorXd::Ones(6);
  const Eigen::MatrixXd G = build_gram(A);
  CHECK((G * G - G).norm() < 1e-12);
  CHECK(G.trace() == doctest::Approx(4.0));
}

TEST_CASE("calibration sweep") {
  RngStream rng(6);
  Eigen::MatrixXd a = random_matrix(12, 32, rng);
  std::vector<Eigen::VectorXd> tests;
  std::vector<double> norms;
  for (int t = 0; t < 10; ++t) {
    tests.push_back(random_vector(12, rng));
    norms.push_back(tests.back().norm());
  }
  SUBCASE("restricted projection is monotone and meets a tight tolerance") {
    const Calibration c = calibrate_orthonormal(a, tests, norms, 1e-6);
    CHECK(c.monotone);
    CHECK(c.achieved);
    CHECK(c.defect_ratio <= 1e-6);
    CHECK(c.rows.size() == default_r_lattice().size() * default_M_lattice(32).size());
    // the chosen point is the smallest M that works
    for (const auto& row : c.rows)
      if (row.M < c.M) CHECK(row.max_defect_ratio > 1e-6);
  }
  SUBCASE("unreachable tolerance is reported") {
    const Calibration c = calibrate_orthonormal(a, tests, norms, 1e-14, {1.0, 0.1}, {4});
    CHECK_FALSE(c.achieved);
    CHECK(c.defect_ratio == c.best_defect_ratio);
  }
  SUBCASE("loose tolerance is met at the coarsest point") {
    const Calibration c = calibrate_orthonormal(a, tests, norms, 1.0);
    CHECK(c.achieved);
    CHECK(c.M == 4);
    CHECK(c.r == 1.0);
  }
}

TEST_CASE("calibration csv") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  const Calibration c = calibrate_orthonormal(I, {Eigen::VectorXd::Ones(4)}, {2.0}, 0.5, {1.0, 0.1}, {4});
  std::ostringstream os;
  write_calibration_csv(os, c);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "r,M,max_defect_ratio,operator_norm_estimate");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("bad arguments") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(RightInverse(I, 0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(RightInverse(I, 0.1, 4), std::out_of_range);
  const RightInverse R(I, 0.1, 3);
  CHECK_THROWS_AS(R.apply(Eigen::VectorXd::Ones(2)), std::invalid_argument);
}
