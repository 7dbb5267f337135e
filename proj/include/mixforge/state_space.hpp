#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mixforge/spectral_field.hpp"

namespace mixforge {

enum class Model { nse, cgl };

std::string to_string(Model m);
Model parse_model(const std::string& s);

inline FieldKind field_kind(Model m) { return m == Model::nse ? FieldKind::velocity2d : FieldKind::complex_scalar; }

/// Label of one spatial noise mode phi_i.
struct SpatialMode {
  int k1;
  int k2;
  int phase;  // nse: 0 = cos, 1 = sin; cgl: 0 = real, 1 = imaginary
};

/// Orthonormal (in H^m) real basis of the truncated state space, ordered by
/// |k|. For the Navier-Stokes model the elements are cos(k.x) k_perp/|k| and
/// sin(k.x) k_perp/|k| over a half-plane of wavevectors; for the
/// Ginzburg-Landau model exp(ik.x) and i exp(ik.x).
class SpatialBasis {
 public:
  SpatialBasis(Model model, GridPtr grid, int sobolev_m, int count);

  int size() const { return static_cast<int>(modes_.size()); }
  const SpectralField& operator[](int i) const { return fields_[i]; }
  const SpatialMode& mode(int i) const { return modes_[i]; }
  Model model() const { return model_; }
  int sobolev_m() const { return m_; }

  /// Largest basis size available on this grid.
  static int capacity(Model model, const Grid& grid);

 private:
  Model model_;
  int m_;
  std::vector<SpatialMode> modes_;
  std::vector<SpectralField> fields_;
};

/// Real coordinates of the truncated state space together with the diagonal
/// weights that encode the H^m inner product: <a, b>_H = sum_i g_i a_i b_i.
/// Navier-Stokes coordinates are (Re a_k, Im a_k) with u_k = a_k k_perp/|k|
/// over the half-plane; Ginzburg-Landau coordinates are (Re u_k, Im u_k).
class StateCoords {
 public:
  StateCoords(Model model, GridPtr grid, int sobolev_m);

  int dim() const { return static_cast<int>(gram_.size()); }
  const Eigen::VectorXd& gram() const { return gram_; }
  Model model() const { return model_; }
  const GridPtr& grid() const { return grid_; }

  Eigen::VectorXd to_vector(const SpectralField& u) const;
  SpectralField from_vector(const Eigen::VectorXd& x) const;

  /// Wavevector behind coordinate j (both Re and Im share it).
  std::pair<int, int> wavevector(int j) const { return {modes_[j / 2].k1, modes_[j / 2].k2}; }

 private:
  Model model_;
  GridPtr grid_;
  std::vector<Mode> modes_;
  Eigen::VectorXd gram_;
};

}  // namespace mixforge

namespace mixforge {

/// Forcing that is constant on each of pieces.size() equal sub-intervals of
/// [0, 1). An empty piece list means zero forcing.
struct Forcing {
  std::vector<SpectralField> pieces;
  bool empty() const { return pieces.empty(); }
};

}  // namespace mixforge
