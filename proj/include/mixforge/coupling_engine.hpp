#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mixforge/right_inverse.hpp"

namespace mixforge {

/// Parameters of the control map and of the near-branch coupling.
struct ControlParams {
  double r = 1e-4;          // regularization of the right inverse
  int M = 8;                // control lives in the first M noise coordinates
  Projection projection = Projection::restricted;
  NoiseGram gram = NoiseGram::unit;
  double delta = 0.05;      // squeeze radius
  double C_eps = 0.0;       // measured control gain ||Phi||_E / ||u' - u||_H
  double d0 = 0.01;         // near/far threshold
  double clamp_radius = std::numeric_limits<double>::infinity();  // ||Phi||_E cap (cgl)
  int fixed_point_max = 60;
  double fixed_point_tol = 1e-12;
  double jacobian_step = 1e-5;
  int residual_cap = 100000;
};

class FixedPointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResidualCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything the control map needs at one base point (u, eta): the recorded
/// trajectory, the tangent operator and the factored right inverse.
class ControlContext {
 public:
  ControlContext(const FlowModel& model, const SpatialBasis& basis, const ControlParams& params,
                 const SpectralField& u, const NoisePath& eta);

  const FlowModel& model() const { return *model_; }
  const SpatialBasis& basis() const { return *basis_; }
  const ControlParams& params() const { return params_; }
  const BasePoint& base() const { return base_; }
  const TangentOperator& A() const { return A_; }
  const RightInverse& R() const { return R_; }

  /// D_uS(u, eta) h.
  SpectralField du_apply(const SpectralField& h) const;

  /// Phi = -R D_uS (u' - u) in noise coordinates, zero beyond M. Clamped to
  /// params().clamp_radius in E; `clamped` reports whether that fired.
  Eigen::VectorXd phi_raw(const SpectralField& u_prime, bool* clamped = nullptr) const;

 private:
  const FlowModel* model_;
  const SpatialBasis* basis_;
  ControlParams params_;
  BasePoint base_;
  TangentOperator A_;
  RightInverse R_;
};

/// Phi(u, u'; eta). Rejects ||u' - u||_H > delta (the far branch applies there).
Eigen::VectorXd phi_control(const ControlContext& ctx, const SpectralField& u_prime, bool* clamped = nullptr);

struct SqueezeResult {
  NoisePath shifted;
  double ratio = 0.0;   // ||S(u, eta) - S(u', eta + Phi)||_H / ||u - u'||_H, 0 when u = u'
  bool clamped = false;
  SpectralField u1;
  SpectralField u1_prime;
};

SqueezeResult psi_squeeze(const ControlContext& ctx, const SpectralField& u_prime);

/// Product tent density on the first M coordinates.
double product_density(const TentDensity& rho, const Eigen::VectorXd& x);

/// v -> Phi_w(v) on the first M coordinates for a fixed complement w.
using BlockMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct DensityEval {
  double q = 0.0;
  Eigen::VectorXd preimage;  // v with v + Phi_w(v) = x
  double jacobian = 1.0;     // |det (I + D Phi_w)(v)|
  int iterations = 0;
};

/// Density of x = v + Phi_w(v) with v ~ rho^M: rho^M(v) / |det(I + D Phi_w(v))|.
/// The preimage comes from fixed-point iteration (throws FixedPointError after
/// params.fixed_point_max steps), the Jacobian from central differences.
DensityEval pushforward_density(const BlockMap& phi_w, const TentDensity& rho, const Eigen::VectorXd& x,
                                const ControlParams& params, const Eigen::VectorXd* start = nullptr);

/// Same density when the preimage is already known (x = v + Phi_w(v)).
/// phi_v may pass Phi_w(v) if the caller has it.
DensityEval pushforward_density_at(const BlockMap& phi_w, const TentDensity& rho, const Eigen::VectorXd& v,
                                   const ControlParams& params, const Eigen::VectorXd* phi_v = nullptr);

struct MaximalSample {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  bool equal = false;
  int residual_trials = 0;
};

/// Maximal coupling of p and q: x ~ p, y = x with probability min(1, q(x)/p(x)),
/// otherwise y from the residual (q - p)+ by rejection. Throws ResidualCapError
/// when the residual loop exceeds `cap` proposals.
MaximalSample maximal_coupling_sample(const std::function<double(const Eigen::VectorXd&)>& p_density,
                                      const std::function<double(const Eigen::VectorXd&)>& q_density,
                                      const std::function<Eigen::VectorXd(RngStream&)>& p_sampler,
                                      const std::function<Eigen::VectorXd(RngStream&)>& q_sampler, RngStream& rng,
                                      int cap = 100000);

/// Piecewise data of the Kantorovich density. The step values are stored
/// through their gaps to a1 in log form because the gaps span hundreds of
/// orders of magnitude.
struct KantorovichDensity {
  double gamma = 0.0;
  double beta = 0.0;
  double R_star = 0.0;
  double R0 = 0.0;        // beta / (1 - gamma)
  double d0 = 0.0;
  double p = 0.0;
  double p1 = 0.0;
  double a = 0.0;         // (1 + gamma) / 2
  double a1 = 0.0;        // 2.5 d0
  double log_gap2 = 0.0;  // ln(a1 - a2)
  int N0 = 0;
  std::vector<double> values;    // a_1 .. a_N0
  std::vector<double> log_gaps;  // ln(a1 - a_n), n >= 2 (index n - 1); -inf for n = 1

  double a_n(int n) const { return values.at(n - 1); }
  /// f(x): step values on (a^n R0, a^(n-1) R0], affine from a1 at R0 to 3 d0 at R_*.
  double f(double x) const;
};

class InfeasibleError : public std::invalid_argument {
 public:
  InfeasibleError(const std::string& what, double max_gap) : std::invalid_argument(what), max_gap_(max_gap) {}
  double max_gap() const { return max_gap_; }

 private:
  double max_gap_;
};

/// Builds the step table. With a2 unset the gap is a1 - a2 = (d0/10) p1^N0.
KantorovichDensity build_kantorovich_f(double gamma, double beta, double R_star, double d0, double p, double p1,
                                       std::optional<double> a2 = std::nullopt);

/// Relation a_{n-1} > p a_n + (1 - p) a1 for n >= 2, in gap form.
bool kantorovich_relation_holds(const KantorovichDensity& kd);

double f_K_eval(const KantorovichDensity& kd, const SpectralField& x1, const SpectralField& x2, int sobolev_m);
double f_K_value(const KantorovichDensity& kd, double distance, double max_norm);

enum class Branch { far, near };

struct CouplingOutcome {
  SpectralField u1;
  SpectralField u1_prime;
  NoisePath eta;
  NoisePath eta_prime;
  Branch branch = Branch::far;
  bool glued_equal = false;
  double distance_before = 0.0;
  double distance_after = 0.0;
  double squeeze_ratio = 0.0;
  double tv_estimate = 0.0;  // (1 - p/q)+ at the proposal; 0 on the far branch
  bool clamped = false;
  int residual_trials = 0;
};

/// Model, basis, noise law and control parameters; builds control contexts
/// and runs the one-step coupled kernel.
class CouplingEngine {
 public:
  CouplingEngine(const FlowModel& model, const SpatialBasis& basis, std::shared_ptr<const NoiseSpec> spec,
                 const ControlParams& params);

  const FlowModel& model() const { return *model_; }
  const SpatialBasis& basis() const { return *basis_; }
  const NoiseSpec& spec() const { return *spec_; }
  const std::shared_ptr<const NoiseSpec>& spec_ptr() const { return spec_; }
  const ControlParams& params() const { return params_; }
  ControlParams& params() { return params_; }
  const TentDensity& rho() const { return rho_; }

  ControlContext context(const SpectralField& u, const NoisePath& eta) const;

  /// Phi_w on the first M coordinates for fixed (u, u', w).
  BlockMap block_map(const SpectralField& u, const SpectralField& u_prime, const NoisePath& eta) const;

  struct NearProposal {
    NoisePath eta;
    NoisePath zeta2;
    double p = 0.0;  // rho^M at zeta2
    double q = 0.0;  // pushforward density at zeta2
    double accept = 0.0;  // min(1, p/q)
    bool clamped = false;
  };
  /// First stage of the near branch: eta ~ l, zeta2 = Psi(eta) and its
  /// acceptance probability.
  NearProposal near_proposal(const SpectralField& u, const SpectralField& u_prime, RngStream& rng) const;

  CouplingOutcome coupled_step(const SpectralField& u, const SpectralField& u_prime, const KantorovichDensity& kd,
                               RngStream& rng) const;

  double state_norm(const SpectralField& u) const { return sobolev_norm(u, model_->state_index()); }
  double distance(const SpectralField& a, const SpectralField& b) const { return state_norm(a - b); }

 private:
  const FlowModel* model_;
  const SpatialBasis* basis_;
  std::shared_ptr<const NoiseSpec> spec_;
  ControlParams params_;
  TentDensity rho_;
};

/// step,branch,distance_before,distance_after,squeeze_ratio,glued_equal,tv_estimate,clamped
void write_step_csv_header(std::ostream& os);
void write_step_csv_row(std::ostream& os, int step, const CouplingOutcome& o);

/// Outcome of the coupling calibration sweep.
struct CouplingCalibration {
  ControlParams params;
  Calibration inverse;            // (r, M) lattice sweep at the reference base point
  double epsilon = 0.0;
  std::vector<double> delta_tried;
  std::vector<double> squeeze_q99;  // 99th percentile squeeze ratio per delta tried
  double squeeze_pass_fraction = 0.0;
  double C1 = 0.0;                // fitted near-branch failure constant
  std::vector<double> c1_distances;
  std::vector<double> c1_failure;  // failure fraction at each distance
  double gamma_linear = 0.0;
  double beta_linear = 0.0;
  double p_small_set = 0.0;
  bool ok = false;
};

struct CouplingCalibrationConfig {
  double epsilon = 0.5;
  Projection projection = Projection::restricted;
  NoiseGram gram = NoiseGram::unit;
  int test_fields = 20;
  double delta_max = 0.2;
  int delta_halvings = 12;
  int squeeze_samples = 100;
  double squeeze_quantile = 0.99;
  double squeeze_target = 0.5;
  int gain_samples = 100;
  int c1_samples = 100;
  int dissipativity_samples = 40;
  int p_samples = 200;
  int warmup_steps = 10;        // steps from 0 used to generate typical states
  double R_star_factor = 1.25;  // R_* = factor * beta / (1 - gamma)
};

/// States after `steps` noisy steps from 0, used as typical base points.
std::vector<SpectralField> typical_states(const FlowModel& model, const SpatialBasis& basis,
                                          const std::shared_ptr<const NoiseSpec>& spec, int count, int steps,
                                          std::uint64_t seed);

/// Empirical q-quantile (0 <= q <= 1) with linear interpolation.
double quantile(std::vector<double> v, double q);

/// Calibrates epsilon -> (r, M), then delta, C_eps, C1 and d0, plus the
/// dissipativity constants and the small-set probability.
CouplingCalibration calibrate_coupling(const FlowModel& model, const SpatialBasis& basis,
                                       const std::shared_ptr<const NoiseSpec>& spec,
                                       const CouplingCalibrationConfig& cfg, std::uint64_t seed);

/// Empirical P[max(||S(u, eta)||, ||S(u', eta)||) <= a max(||u||, ||u'||)] over
/// pairs in the shell (d0/2, R_*], floored at 0.01.
double estimate_small_set_probability(const FlowModel& model, const SpatialBasis& basis,
                                      const std::shared_ptr<const NoiseSpec>& spec, double gamma, double d0,
                                      double R_star, int samples, std::uint64_t seed);

}  // namespace mixforge
