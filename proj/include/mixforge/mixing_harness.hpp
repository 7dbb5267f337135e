#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "mixforge/coupling_engine.hpp"

namespace mixforge {

struct MixingConfig {
  int pairs = 256;
  int horizon = 40;                       // K
  int lip_functionals = 64;
  int bootstrap = 100;
  std::vector<double> distance_schedule;  // empty: {2 delta, delta, delta/4, d0/2}
  double merge_tol = 1e-12;               // glued pairs this close are merged
  bool zero_noise = false;                // test hook: every coordinate 0
  std::uint64_t seed = 1;
};

struct StepStats {
  int k = 0;
  double mean_fK = 0.0;
  double q10 = 0.0;
  double q90 = 0.0;
  double mean_dist = 0.0;       // mean of ||u_k - u'_k|| ^ d0
  double glued_fraction = 0.0;  // pairs whose last step glued (or merged)
  double lip_lower = 0.0;
  double lip_upper = 0.0;       // (R_*/d0) mean f_K
};

struct DecayFit {
  double kappa = 1.0;
  double lo = 1.0;
  double hi = 1.0;
  int window_begin = 0;
  int window_end = 0;      // exclusive
  bool floored = false;    // non-positive entries were replaced by a floor
  bool non_mixing = false; // kappa >= 1 or the band reaches 1
};

struct MixingReport {
  std::vector<StepStats> steps;       // k = 0 .. K
  Eigen::MatrixXd fK;                 // pairs x (K + 1)
  DecayFit fit;
  double burn_in = 0.0;               // 3 / |ln kappa|
  std::vector<int> glue_time_histogram;  // first step at which each pair merged
  int never_merged = 0;
  int near_steps = 0;
  int far_steps = 0;
  int glued_steps = 0;
  int clamped_steps = 0;
  long residual_trials = 0;
  int ball_exits = 0;                 // states found outside B(R_*)
  bool dominance_ok = true;           // lip_lower <= lip_upper at every step
};

/// Evolve cfg.pairs coupled pairs for cfg.horizon steps. Pair j at step k
/// draws from RngStream(seed, j, k), so the result does not depend on the
/// thread count. With parallel = false the pairs run in order on one thread.
MixingReport run_coupled_ensemble(const CouplingEngine& engine, const KantorovichDensity& kd, const MixingConfig& cfg,
                                  bool parallel = true);

/// Least-squares slope of log(series) over the second half of the positive
/// prefix; kappa = exp(slope). The band is a 95% bootstrap band over rows of
/// `trajectories` (pairs x len, mean over rows = series) when given, else a
/// residual bootstrap.
DecayFit fit_decay_rate(const std::vector<double>& series, const Eigen::MatrixXd* trajectories = nullptr,
                        int resamples = 100, std::uint64_t seed = 7);

/// Max over F random unit directions theta of |mean clip(<theta,a>) - mean clip(<theta,b>)|.
double lip_dual_estimate(const std::vector<SpectralField>& a, const std::vector<SpectralField>& b, int functionals,
                         int sobolev_m, std::uint64_t seed);

struct StationaryConfig {
  int trajectories = 64;
  int samples = 40;          // steps averaged after burn-in
  int burn_in_min = 100;
  double kappa = 0.0;        // <= 0: estimate from synchronous contraction
  double radius = 0.0;       // second initial radius (R_*)
  int bootstrap = 200;
  int shells = 6;
  bool zero_noise = false;
  std::uint64_t seed = 1;
};

struct MomentRow {
  std::string name;
  double mean_a = 0.0, lo_a = 0.0, hi_a = 0.0;  // from radius 0
  double mean_b = 0.0, lo_b = 0.0, hi_b = 0.0;  // from radius R_*
  double diff_lo = 0.0, diff_hi = 0.0;          // bootstrap band of mean_a - mean_b
  bool agree = true;  // the two 95% bands overlap
};

struct StationaryReport {
  std::vector<MomentRow> moments;
  double kappa = 0.0;
  int burn_in = 0;
  double max_norm = 0.0;      // largest post-burn-in ||u||_m
  bool agree = true;
  std::vector<SpectralField> sample;  // final states of both ensembles
};

/// Synchronous-coupling contraction factor: decay of the mean distance of
/// pairs driven by one shared noise path.
double synchronous_contraction(const FlowModel& model, const SpatialBasis& basis,
                               const std::shared_ptr<const NoiseSpec>& spec, double radius, int pairs, int steps,
                               std::uint64_t seed);

StationaryReport estimate_stationary(const FlowModel& model, const SpatialBasis& basis,
                                     const std::shared_ptr<const NoiseSpec>& spec, const StationaryConfig& cfg);

/// k,mean_fK,q10,q90,mean_dist,glued_fraction,lip_lower,lip_upper
void write_mixing_csv(std::ostream& os, const MixingReport& r);
/// key,value lines: kappa, band, burn-in, calibration constants.
void write_mixing_summary(std::ostream& os, const MixingReport& r, const KantorovichDensity& kd,
                          const ControlParams& params);
void write_stationary_csv(std::ostream& os, const StationaryReport& r);

}  // namespace mixforge
