#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixforge/haar_noise.hpp"
#include "mixforge/spectral_field.hpp"
#include "mixforge/state_space.hpp"

namespace mixforge {

struct FlowConfig {
  Model model = Model::nse;
  double nu = 0.5;       // nse viscosity
  double nu1 = 0.5;      // cgl diffusion
  double nu2 = 0.0;      // cgl dispersion
  double gamma = 0.5;    // cgl damping
  int power_r = 1;       // cgl nonlinearity |u|^(2r) u
  int grid_size = 32;
  int substeps = 32;     // per unit time, power of two
  int sobolev_m = 1;     // state space H^m
  int dealias_radius = -1;  // -1: 2/3 rule
  double blowup_factor = 1e3;
  bool nonlinear = true;  // test hook; false integrates the linear model

  static FlowConfig defaults(Model model);
  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

/// Numerical guard trip inside the time integrator.
class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(int substep, double norm)
      : std::runtime_error("blow-up guard tripped at substep " + std::to_string(substep) + " (norm " +
                           std::to_string(norm) + ")"),
        substep_(substep) {}
  int substep() const { return substep_; }

 private:
  int substep_;
};

/// Base trajectory recorded at substep resolution so that tangent and adjoint
/// solves replay exactly the discrete path the flow took.
struct Trajectory {
  int substeps = 0;
  int first = 0;  // index of the first recorded substep
  /// Per substep: nse stores u1, u2, d1u1, d2u1, d1u2, d2u2 on the grid;
  /// cgl stores, per grid point, Re/Im of the field the nonlinear stage acts
  /// on, the phase factor Re/Im and the linearization weight.
  std::vector<std::vector<double>> states;
};

/// Time-1 flow map of the truncated Navier-Stokes or Ginzburg-Landau model.
/// The linear part is integrated exactly per substep (integrating factor),
/// the forcing is integrated exactly against it, and the nonlinearity is
/// treated explicitly (nse) or by an exact pointwise phase rotation (cgl).
class FlowModel {
 public:
  explicit FlowModel(const FlowConfig& cfg);

  const FlowConfig& config() const { return cfg_; }
  const GridPtr& grid() const { return grid_; }
  Model model() const { return cfg_.model; }
  FieldKind kind() const { return field_kind(cfg_.model); }
  double dt() const { return 1.0 / cfg_.substeps; }
  int substeps() const { return cfg_.substeps; }
  int state_index() const { return cfg_.sobolev_m; }

  SpectralField zero_field() const { return SpectralField(kind(), grid_); }

  /// Integrate substeps [first, last) from u0 with the given forcing. When
  /// `record` is non-null the base trajectory is stored for replay. Throws
  /// BlowUpError when the H^m norm exceeds `guard`.
  SpectralField integrate(const SpectralField& u0, const Forcing& forcing, Trajectory* record = nullptr,
                          int first = 0, int last = -1, double guard = 0.0) const;

  /// Tangent solve along a recorded trajectory: returns v(1) for initial
  /// perturbation h and forcing perturbation xi (either may be empty/zero).
  /// If h is zero and xi vanishes before piece `first_nonzero_piece`, the
  /// solve starts there. `states` receives v at every substep boundary.
  SpectralField tangent(const Trajectory& traj, const SpectralField& h, const Forcing& xi,
                        int first_nonzero_piece = 0, std::vector<SpectralField>* states = nullptr) const;

  /// Discrete adjoint of `tangent`. Returns w at every substep boundary
  /// (size substeps + 1, index n is time n dt) and fills `forcing_sensitivity`
  /// (per substep) so that <v(1), w1> = <h, w(0)> + sum_n <xi_n, s_n>.
  std::vector<SpectralField> adjoint(const Trajectory& traj, const SpectralField& w1,
                                     std::vector<SpectralField>* forcing_sensitivity = nullptr) const;

  /// nse: dealiased Leray-projected (u.grad)u; cgl: dealiased gamma u + i|u|^(2r) u.
  SpectralField nonlinearity(const SpectralField& u) const;

  /// Per-mode linear operator value L_k (nse: nu|k|^2, cgl: (nu1 + i nu2)|k|^2 + gamma).
  cplx linear_symbol(double ksq) const;

  /// sup_x |u(x)| on a grid fine enough to resolve the retained modes.
  double sup_norm(const SpectralField& u) const;

 private:
  void check_field(const SpectralField& u) const;
  int piece_of(int substep, int pieces) const { return substep * pieces / cfg_.substeps; }

  FlowConfig cfg_;
  GridPtr grid_;
  // Per retained mode (same order as grid_->retained()).
  std::vector<cplx> expo_;   // exp(-L dt)
  std::vector<cplx> phi1_;   // (1 - exp(-L dt)) / L
};

/// Leray projection u_k -> u_k - k (k.u_k)/|k|^2, zero mode removed.
SpectralField leray_project(const SpectralField& u);

/// H^m ball guard used by flow_map: factor * (||u0||_m + R_eta).
double blowup_guard(const FlowModel& model, const SpectralField& u0, const NoiseSpec& spec);

/// One step of the random dynamical system u1 = S(u0, eta). In kick mode
/// this is the free time-1 flow followed by the kick.
SpectralField flow_map(const FlowModel& model, const SpatialBasis& basis, const SpectralField& u0,
                       const NoisePath& path, Trajectory* record = nullptr);

struct DissipativityReport {
  double beta = 0.0;           // empirical additive constant of the squared-norm bound (nse)
  double gamma_linear = 0.0;   // contraction factor of the linear-form bound
  double beta_linear = 0.0;    // additive constant of the linear-form bound
  int violations = 0;          // zero-forcing samples violating strict decay
  int samples = 0;
  double max_zero_noise_ratio = 0.0;
};

/// nse: fits beta in ||S(u,eta)||_1^2 <= e^-nu ||u||_1^2 + beta and checks
/// ||S(u,0)||_1 <= e^-nu/2 ||u||_1. cgl: checks ||S(u,0)||_0 <= e^-gamma ||u||_0
/// and fits the additive constant of ||S(u,eta)||_m <= gamma_lin ||u||_m + beta.
DissipativityReport dissipativity_check(const FlowModel& model, const SpatialBasis& basis,
                                        const std::vector<std::pair<SpectralField, NoisePath>>& samples);

/// H(u) = int (1/2 |grad u|^2 + |u|^(2r+2) / (2r+2)) dx for the cgl model.
double hamiltonian_monitor(const FlowModel& model, const SpectralField& u);

/// Random field with independent normal coefficients on 1 <= |k|^2 <= kmax_sq,
/// scaled to the requested H^m norm. Velocity fields are real and
/// divergence-free.
SpectralField random_field(const FlowModel& model, RngStream& rng, double norm, double kmax_sq = 16.0);

}  // namespace mixforge
