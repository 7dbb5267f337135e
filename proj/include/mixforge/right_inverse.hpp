#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

#include "mixforge/tangent_adjoint.hpp"

namespace mixforge {

/// G = A A* in the H inner product, returned in H-orthonormal coordinates
/// (so that it is symmetric): W_H^1/2 A W_E^-1 A' W_H^1/2.
Eigen::MatrixXd build_gram(const TangentOperator& A);

/// Where P_M enters the regularized inverse.
///  restricted: R = P_M A* (A P_M A* + r)^-1, Tikhonov on the first M noise
///              coordinates (defect non-increasing as r decreases).
///  outer:      R = P_M A* (A A* + r)^-1, truncation after inversion.
/// Both coincide when M is the full noise dimension.
enum class Projection { restricted, outer };

/// Regularized right inverse with image in the first M noise coordinates. All work is done in
/// orthonormal coordinates, where A* is the plain transpose, through
/// A'(A A' + r)^-1 = (A'A + r)^-1 A' so that only a D_E x D_E system is
/// factored. The factorization is kept and reused for every apply.
class RightInverse {
 public:
  RightInverse() = default;
  /// `a` is the operator in orthonormal coordinates (D_H x D_E).
  RightInverse(Eigen::MatrixXd a, double r, int M, Projection proj = Projection::restricted);
  /// Works in the coordinates of a TangentOperator; apply() takes StateCoords
  /// vectors and returns noise coordinates.
  RightInverse(const TangentOperator& A, double r, int M, Projection proj = Projection::restricted);

  double r() const { return r_; }
  int M() const { return M_; }
  Projection projection() const { return proj_; }
  int noise_dim() const { return static_cast<int>(a_.cols()); }
  int state_dim() const { return static_cast<int>(a_.rows()); }

  /// zeta = P_M A*(G + r)^-1 f; entries beyond M are exactly zero.
  Eigen::VectorXd apply(const Eigen::VectorXd& f) const;
  /// ||A R f - f||_H.
  double defect(const Eigen::VectorXd& f) const;
  /// Operator norm H -> E by power iteration on R'R.
  double norm_estimate(int iterations = 200) const;
  /// ||A||, largest singular value in orthonormal coordinates.
  double source_norm() const;

 private:
  Eigen::MatrixXd a_;        // orthonormal-coordinate operator
  Eigen::VectorXd sqrt_h_;   // W_H^1/2 (ones for the plain constructor)
  Eigen::VectorXd isqrt_e_;  // W_E^-1/2
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double r_ = 1.0;
  int M_ = 0;
  Projection proj_ = Projection::restricted;
  int k_ = 0;  // columns entering the factorization
};

/// One (r, M) lattice point of a calibration sweep.
struct CalibrationRow {
  double r = 0.0;
  int M = 0;
  double max_defect_ratio = 0.0;  // max over the test set of defect / ||f||_V
  double operator_norm = 0.0;
};

struct Calibration {
  std::vector<CalibrationRow> rows;
  bool achieved = false;
  double r = 0.0;
  int M = 0;
  double defect_ratio = 0.0;       // at the chosen point (or the best achievable)
  double best_defect_ratio = 0.0;  // minimum over the lattice
  bool monotone = true;            // defect non-increasing along r down and M up
  RightInverse inverse;
};

/// r in {1, 1e-1, ..., 1e-8}, M in {4, 8, 16, ..., full}.
std::vector<double> default_r_lattice();
std::vector<int> default_M_lattice(int full);

/// Sweep the lattice on the test fields (StateCoords vectors, with their V
/// norms) and pick the smallest M, then the largest r, meeting eps.
Calibration calibrate(const TangentOperator& A, const std::vector<Eigen::VectorXd>& tests,
                      const std::vector<double>& v_norms, double eps, std::vector<double> r_lattice = {},
                      std::vector<int> M_lattice = {}, Projection proj = Projection::restricted);

/// Same sweep for an operator already in orthonormal coordinates.
Calibration calibrate_orthonormal(const Eigen::MatrixXd& a, const std::vector<Eigen::VectorXd>& tests,
                                  const std::vector<double>& v_norms, double eps, std::vector<double> r_lattice = {},
                                  std::vector<int> M_lattice = {}, Projection proj = Projection::restricted);

/// r,M,max_defect_ratio,operator_norm_estimate
void write_calibration_csv(std::ostream& os, const Calibration& c);

}  // namespace mixforge
