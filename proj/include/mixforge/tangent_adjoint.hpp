#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

#include "mixforge/haar_noise.hpp"
#include "mixforge/spectral_models.hpp"

namespace mixforge {

/// Base point (u0, eta) with its recorded trajectory and the end state.
struct BasePoint {
  SpectralField u0;
  NoisePath path;
  Trajectory traj;
  SpectralField u1;
};

/// Runs the flow once and keeps the trajectory for tangent and adjoint replay.
BasePoint make_base_point(const FlowModel& model, const SpatialBasis& basis, const SpectralField& u0,
                          const NoisePath& path);

/// v(1) of the linearized flow about the base point, for initial perturbation
/// h and noise-coordinate perturbation dxi (either may be empty).
SpectralField tangent_flow(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           const SpectralField& h, const Eigen::VectorXd& dxi,
                           std::vector<SpectralField>* states = nullptr);

struct AdjointResult {
  std::vector<SpectralField> w;         // w at substep boundaries, w.back() = w1
  std::vector<SpectralField> forcing;   // per-substep forcing sensitivity
  Eigen::VectorXd noise_gradient;       // d<S(u0, eta), w1>_L2 / d xi
};

/// Backward dual flow with terminal value w1; the L2 pairing with any tangent
/// solution started from the same base point is constant in time.
AdjointResult adjoint_flow(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           const SpectralField& w1);

/// Dense matrix of the noise-to-state derivative on the truncated noise
/// basis. Columns act on the xi coordinates (amplitudes included), rows are
/// StateCoords coordinates. Inner products are diagonal: <a, b>_H =
/// a' diag(gram_H) b and <x, y>_E = x' diag(gram_E) y.
struct TangentOperator {
  Model model = Model::nse;
  GridPtr grid;
  int sobolev_m = 1;
  std::shared_ptr<const NoiseSpec> spec;
  SpectralField u0;
  NoisePath path;
  Eigen::MatrixXd columns;
  Eigen::VectorXd gram_E;
  Eigen::VectorXd gram_H;

  int noise_dim() const { return static_cast<int>(columns.cols()); }
  int state_dim() const { return static_cast<int>(columns.rows()); }

  Eigen::VectorXd apply(const Eigen::VectorXd& xi) const { return columns * xi; }
  /// Weighted transpose A* = W_E^-1 A' W_H.
  Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& w) const;
  /// W_H^1/2 A W_E^-1/2, the matrix in orthonormal coordinates.
  Eigen::MatrixXd orthonormal() const;

  /// row,col,value
  void write_csv(std::ostream& os) const;
  /// space,index,weight with space in {E, H}
  void write_gram_csv(std::ostream& os) const;
};

/// How noise coordinates are weighted in E.
enum class NoiseGram { unit, amplitude };

/// Columns for the first `truncation` noise coordinates (all when < 0). The
/// response to each spatial mode forced on one dyadic piece is computed once
/// and the Haar columns are combined from those; the solves run in parallel.
TangentOperator assemble_A(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           int truncation = -1, NoiseGram gram = NoiseGram::unit);

/// Reference assembly: one full tangent solve per column, single thread.
TangentOperator assemble_A_serial(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                                  int truncation = -1, NoiseGram gram = NoiseGram::unit);

struct FdRow {
  double eps = 0.0;
  double remainder = 0.0;  // ||S(base + eps dir) - S(base) - eps DS dir||_H
  double ratio = 0.0;      // remainder / eps^2
};

/// Second-order Taylor remainder table in the direction (h, dxi).
std::vector<FdRow> fd_check(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                            const SpectralField& h, const Eigen::VectorXd& dxi, const std::vector<double>& eps_list);

/// (k1,k2,re,im,component) rows for the retained modes.
void write_field_csv(std::ostream& os, const SpectralField& u);

}  // namespace mixforge
