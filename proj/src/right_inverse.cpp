#include "mixforge/right_inverse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace mixforge {

Eigen::MatrixXd build_gram(const TangentOperator& A) {
  const Eigen::MatrixXd a = A.orthonormal();
  Eigen::MatrixXd G = a * a.transpose();
  return 0.5 * (G + G.transpose());
}

RightInverse::RightInverse(Eigen::MatrixXd a, double r, int M, Projection proj)
    : a_(std::move(a)), r_(r), M_(M), proj_(proj) {
  if (!(r > 0.0)) throw std::invalid_argument("regularization r must be > 0");
  if (M < 1 || M > a_.cols()) throw std::out_of_range("projection dimension M out of range");
  sqrt_h_ = Eigen::VectorXd::Ones(a_.rows());
  isqrt_e_ = Eigen::VectorXd::Ones(a_.cols());
  k_ = proj_ == Projection::restricted ? M_ : static_cast<int>(a_.cols());
  const auto ak = a_.leftCols(k_);
  Eigen::MatrixXd N = ak.transpose() * ak;
  N.diagonal().array() += r_;
  llt_.compute(N);
  if (llt_.info() != Eigen::Success) throw std::runtime_error("right inverse: factorization failed");
}

RightInverse::RightInverse(const TangentOperator& A, double r, int M, Projection proj)
    : RightInverse(A.orthonormal(), r, M, proj) {
  sqrt_h_ = A.gram_H.cwiseSqrt();
  isqrt_e_ = A.gram_E.cwiseSqrt().cwiseInverse();
}

Eigen::VectorXd RightInverse::apply(const Eigen::VectorXd& f) const {
  if (f.size() != a_.rows()) throw std::invalid_argument("right inverse: state vector has wrong length");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(a_.cols());
  z.head(k_) = llt_.solve(a_.leftCols(k_).transpose() * sqrt_h_.cwiseProduct(f));
  z.tail(z.size() - M_).setZero();
  return isqrt_e_.cwiseProduct(z);
}

double RightInverse::defect(const Eigen::VectorXd& f) const {
  const Eigen::VectorXd z = apply(f).cwiseQuotient(isqrt_e_);
  return (a_ * z - sqrt_h_.cwiseProduct(f)).norm();
}

double RightInverse::norm_estimate(int iterations) const {
  // Orthonormal coordinates on both sides: R~ = P_M (A_k'A_k + r)^-1 A_k'.
  const auto ak = a_.leftCols(k_);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(a_.rows()).normalized();
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd z = llt_.solve(ak.transpose() * x);
    z.tail(z.size() - M_).setZero();
    Eigen::VectorXd y = ak * llt_.solve(z);  // R~' z
    const double n = y.norm();
    if (n == 0.0) return 0.0;
    const double next = std::sqrt(n);
    x = y / n;
    if (std::abs(next - sigma) <= 1e-13 * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

double RightInverse::source_norm() const {
  if (a_.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a_);
  return svd.singularValues()[0];
}

std::vector<double> default_r_lattice() {
  std::vector<double> r;
  for (int e = 0; e <= 8; ++e) r.push_back(std::pow(10.0, -e));
  return r;
}

std::vector<int> default_M_lattice(int full) {
  std::vector<int> M;
  for (int m = 4; m < full; m *= 2) M.push_back(m);
  M.push_back(full);
  return M;
}

namespace {

Calibration sweep(const Eigen::MatrixXd& a, const Eigen::VectorXd& sqrt_h, const TangentOperator* src,
                  const std::vector<Eigen::VectorXd>& tests, const std::vector<double>& v_norms, double eps,
                  std::vector<double> rs, std::vector<int> Ms, Projection proj) {
  if (tests.size() != v_norms.size()) throw std::invalid_argument("calibrate: test set and norms differ in size");
  if (tests.empty()) throw std::invalid_argument("calibrate: empty test set");
  if (rs.empty()) rs = default_r_lattice();
  if (Ms.empty()) Ms = default_M_lattice(static_cast<int>(a.cols()));
  std::sort(rs.begin(), rs.end(), std::greater<>());
  std::sort(Ms.begin(), Ms.end());
  Calibration c;
  c.best_defect_ratio = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> table(Ms.size(), std::vector<double>(rs.size()));
  for (size_t im = 0; im < Ms.size(); ++im)
    for (size_t ir = 0; ir < rs.size(); ++ir) {
      RightInverse R(a, rs[ir], Ms[im], proj);
      double worst = 0.0;
      for (size_t t = 0; t < tests.size(); ++t)
        worst = std::max(worst, R.defect(sqrt_h.cwiseProduct(tests[t])) / v_norms[t]);
      table[im][ir] = worst;
      c.rows.push_back({rs[ir], Ms[im], worst, R.norm_estimate()});
      c.best_defect_ratio = std::min(c.best_defect_ratio, worst);
    }
  const double slack = 1.0 + 1e-9;
  for (size_t im = 0; im < Ms.size(); ++im)
    for (size_t ir = 0; ir < rs.size(); ++ir) {
      if (ir > 0 && table[im][ir] > table[im][ir - 1] * slack) c.monotone = false;
      if (im > 0 && table[im][ir] > table[im - 1][ir] * slack) c.monotone = false;
    }
  for (size_t im = 0; im < Ms.size() && !c.achieved; ++im)
    for (size_t ir = 0; ir < rs.size(); ++ir)
      if (table[im][ir] <= eps) {
        c.achieved = true;
        c.r = rs[ir];
        c.M = Ms[im];
        c.defect_ratio = table[im][ir];
        break;
      }
  if (!c.achieved) {
    // Report the lattice point with the smallest defect.
    for (const auto& row : c.rows)
      if (row.max_defect_ratio == c.best_defect_ratio) {
        c.r = row.r;
        c.M = row.M;
        c.defect_ratio = row.max_defect_ratio;
        break;
      }
  }
  c.inverse = src ? RightInverse(*src, c.r, c.M, proj) : RightInverse(a, c.r, c.M, proj);
  return c;
}

}  // namespace

Calibration calibrate(const TangentOperator& A, const std::vector<Eigen::VectorXd>& tests,
                      const std::vector<double>& v_norms, double eps, std::vector<double> r_lattice,
                      std::vector<int> M_lattice, Projection proj) {
  return sweep(A.orthonormal(), A.gram_H.cwiseSqrt(), &A, tests, v_norms, eps, std::move(r_lattice),
               std::move(M_lattice), proj);
}

Calibration calibrate_orthonormal(const Eigen::MatrixXd& a, const std::vector<Eigen::VectorXd>& tests,
                                  const std::vector<double>& v_norms, double eps, std::vector<double> r_lattice,
                                  std::vector<int> M_lattice, Projection proj) {
  return sweep(a, Eigen::VectorXd::Ones(a.rows()), nullptr, tests, v_norms, eps, std::move(r_lattice),
               std::move(M_lattice), proj);
}

void write_calibration_csv(std::ostream& os, const Calibration& c) {
  os << "r,M,max_defect_ratio,operator_norm_estimate\n";
  os.precision(17);
  for (const auto& row : c.rows) os << row.r << ',' << row.M << ',' << row.max_defect_ratio << ',' << row.operator_norm << '\n';
}

}  // namespace mixforge
