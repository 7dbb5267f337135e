#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "mixforge/rng.hpp"
#include "mixforge/state_space.hpp"

namespace mixforge {

/// Haar system index. Level -1 is the constant scaling function; levels
/// j >= 0 are the wavelets with shifts 0 <= l < 2^j.
struct HaarIndex {
  int level = -1;
  int shift = 0;
  bool operator==(const HaarIndex&) const = default;
};

/// All indices up to max_level, scaling function first, then by level and shift.
std::vector<HaarIndex> haar_indices(int max_level);

/// Number of Haar functions up to max_level: 2^(max_level + 1).
inline int haar_count(int max_level) { return 1 << (max_level + 1); }

/// Value of the orthonormal Haar function at t in [0, 1).
double haar_eval(HaarIndex index, double t);

/// Tent density rho(x) = (1 - s|x|) / (2 - s) on [-1, 1], 0 <= s < 1.
class TentDensity {
 public:
  explicit TentDensity(double slope);
  double slope() const { return s_; }
  double pdf(double x) const;
  double cdf(double x) const;
  /// Exact draw by inverse transform.
  double sample(RngStream& rng) const;

 private:
  double s_;
};

/// Draw one coefficient from the tent law with the given slope.
double sample_coefficient(double density_slope, RngStream& rng);

/// Amplitudes and coefficient law of the Haar-series noise
///   eta(t) = sum_i b_i sum_{j,l} c^i_j xi^i_{jl} h_{jl}(t) phi_i,
/// or, in kick mode, of the impulsive force sum_i b_i xi_i phi_i.
struct NoiseSpec {
  int modes = 8;        // I
  int max_level = 0;    // J
  std::vector<double> amplitudes;                      // b_i, size I
  std::vector<std::vector<double>> time_coefficients;  // c^i_j, I rows of J + 2 (level -1 first)
  double density_slope = 0.5;
  bool kick_mode = false;

  /// b_i = b0 i^-2; c_{-1} = 1 and c_j = 2^-j for wavelet levels.
  static NoiseSpec defaults(int modes, int max_level, double b0, double slope = 0.5);

  void validate() const;
  int haar_functions() const { return kick_mode ? 1 : haar_count(max_level); }
  /// Number of real noise coordinates.
  int dimension() const { return modes * haar_functions(); }
  /// |b_i c^i_j| for a coordinate (coordinates are Haar-major: h * I + i).
  double coordinate_amplitude(int coord) const;
  /// Signed b_i c^i_j of a coordinate.
  double coordinate_coefficient(int coord) const;
  int coordinate_mode(int coord) const { return coord % modes; }
  int coordinate_haar(int coord) const { return coord / modes; }
  /// R_eta = (sum over coordinates of (b_i c^i_j)^2)^(1/2).
  double radius() const;
};

/// One realization of the noise on a unit time block: coordinates xi in
/// [-1, 1], Haar-major (index h * I + i).
struct NoisePath {
  std::shared_ptr<const NoiseSpec> spec;
  Eigen::VectorXd xi;
  std::uint64_t seed = 0;

  double at(int mode, int haar) const { return xi[haar * spec->modes + mode]; }
};

NoisePath zero_path(std::shared_ptr<const NoiseSpec> spec);

/// Every coordinate drawn independently from the tent law.
NoisePath sample_noise_path(std::shared_ptr<const NoiseSpec> spec, RngStream& rng);

/// eta_t as a spectral field.
SpectralField noise_eval(const NoisePath& path, const SpatialBasis& basis, double t);

/// Forcing pieces on the 2^(J+1) dyadic sub-intervals for a coordinate vector
/// (amplitudes b_i c^i_j are applied here). Kick-mode specs are rejected.
Forcing forcing_from_coords(const NoiseSpec& spec, const SpatialBasis& basis, const Eigen::VectorXd& coords);

inline Forcing forcing_from_path(const NoisePath& path, const SpatialBasis& basis) {
  return forcing_from_coords(*path.spec, basis, path.xi);
}

/// Impulsive force sum_j b_j xi_j phi_j for kick mode.
SpectralField kick_from_coords(const NoiseSpec& spec, const SpatialBasis& basis, const Eigen::VectorXd& coords);
SpectralField kick_sample(const NoiseSpec& spec, const SpatialBasis& basis, RngStream& rng);

/// CSV with columns i,level,shift,xi.
void write_path_csv(std::ostream& os, const NoisePath& path);

}  // namespace mixforge
