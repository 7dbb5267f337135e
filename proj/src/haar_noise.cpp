#include "mixforge/haar_noise.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace mixforge {

std::vector<HaarIndex> haar_indices(int max_level) {
  if (max_level < 0) throw std::invalid_argument("haar max level must be >= 0");
  std::vector<HaarIndex> out{{-1, 0}};
  for (int j = 0; j <= max_level; ++j)
    for (int l = 0; l < (1 << j); ++l) out.push_back({j, l});
  return out;
}

double haar_eval(HaarIndex index, double t) {
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("haar_eval: t must lie in [0, 1)");
  if (index.level < -1) throw std::invalid_argument("haar_eval: level must be >= -1");
  if (index.level == -1) {
    if (index.shift != 0) throw std::invalid_argument("haar_eval: scaling function has shift 0");
    return 1.0;
  }
  const int j = index.level;
  const int l = index.shift;
  if (l < 0 || l >= (1 << j)) throw std::invalid_argument("haar_eval: shift out of range");
  const double width = std::ldexp(1.0, -j);
  const double lo = l * width;
  const double mid = (l + 0.5) * width;
  const double hi = (l + 1) * width;
  const double amp = std::sqrt(std::ldexp(1.0, j));
  if (t < lo || t >= hi) return 0.0;
  return t < mid ? amp : -amp;
}

TentDensity::TentDensity(double slope) : s_(slope) {
  if (!(slope >= 0.0 && slope < 1.0)) throw std::invalid_argument("tent density slope must lie in [0, 1)");
}

double TentDensity::pdf(double x) const {
  if (x < -1.0 || x > 1.0) return 0.0;
  return (1.0 - s_ * std::abs(x)) / (2.0 - s_);
}

double TentDensity::cdf(double x) const {
  if (x <= -1.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // mass of [0, |x|]
  const double y = std::abs(x);
  const double half = (y - 0.5 * s_ * y * y) / (2.0 - s_);
  return x >= 0.0 ? 0.5 + half : 0.5 - half;
}

double TentDensity::sample(RngStream& rng) const {
  const double u = rng.uniform();
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  // Invert F(y) = (y - s y^2 / 2) / (1 - s / 2) on [0, 1].
  double y = u;
  if (s_ > 0.0) {
    const double c = u * (1.0 - 0.5 * s_);
    y = 2.0 * c / (1.0 + std::sqrt(1.0 - 2.0 * s_ * c));
  }
  return sign * y;
}

double sample_coefficient(double density_slope, RngStream& rng) { return TentDensity(density_slope).sample(rng); }

NoiseSpec NoiseSpec::defaults(int modes, int max_level, double b0, double slope) {
  NoiseSpec s;
  s.modes = modes;
  s.max_level = max_level;
  s.density_slope = slope;
  for (int i = 1; i <= modes; ++i) {
    s.amplitudes.push_back(b0 / (double(i) * i));
    std::vector<double> row{1.0};
    for (int j = 0; j <= max_level; ++j) row.push_back(std::ldexp(1.0, -j));
    s.time_coefficients.push_back(row);
  }
  return s;
}

void NoiseSpec::validate() const {
  if (modes < 1) throw std::invalid_argument("noise: spatial_mode_count must be >= 1");
  if (max_level < 0) throw std::invalid_argument("noise: haar_level_max must be >= 0");
  if (static_cast<int>(amplitudes.size()) != modes) throw std::invalid_argument("noise: need one amplitude per mode");
  for (double b : amplitudes)
    if (!(b != 0.0) || !std::isfinite(b)) throw std::invalid_argument("noise: amplitudes must be nonzero and finite");
  if (static_cast<int>(time_coefficients.size()) != modes)
    throw std::invalid_argument("noise: need one row of time coefficients per mode");
  for (const auto& row : time_coefficients) {
    if (static_cast<int>(row.size()) != max_level + 2)
      throw std::invalid_argument("noise: time coefficient rows need haar_level_max + 2 entries");
    for (double c : row)
      if (!(c != 0.0) || !std::isfinite(c)) throw std::invalid_argument("noise: time coefficients must be nonzero");
  }
  TentDensity check(density_slope);
  (void)check;
}

double NoiseSpec::coordinate_coefficient(int coord) const {
  const int i = coordinate_mode(coord);
  if (kick_mode) return amplitudes[i];
  const int h = coordinate_haar(coord);
  // h = 0 is the scaling function; h in [2^j, 2^(j+1)) has level j.
  const int level = h == 0 ? -1 : static_cast<int>(std::floor(std::log2(double(h))));
  return amplitudes[i] * time_coefficients[i][level + 1];
}

double NoiseSpec::coordinate_amplitude(int coord) const { return std::abs(coordinate_coefficient(coord)); }

double NoiseSpec::radius() const {
  double acc = 0.0;
  for (int k = 0; k < dimension(); ++k) acc += std::pow(coordinate_amplitude(k), 2);
  return std::sqrt(acc);
}

NoisePath zero_path(std::shared_ptr<const NoiseSpec> spec) {
  spec->validate();
  NoisePath p;
  p.xi = Eigen::VectorXd::Zero(spec->dimension());
  p.spec = std::move(spec);
  return p;
}

NoisePath sample_noise_path(std::shared_ptr<const NoiseSpec> spec, RngStream& rng) {
  spec->validate();
  const TentDensity rho(spec->density_slope);
  NoisePath p;
  p.xi.resize(spec->dimension());
  for (Eigen::Index k = 0; k < p.xi.size(); ++k) p.xi[k] = rho.sample(rng);
  p.spec = std::move(spec);
  return p;
}

namespace {

void check_basis(const NoiseSpec& spec, const SpatialBasis& basis) {
  if (basis.size() < spec.modes) throw std::invalid_argument("spatial basis smaller than the noise mode count");
}

// Signed coefficient b_i c^i_j (coordinate_amplitude drops the sign).
double signed_amplitude(const NoiseSpec& spec, int mode, int level) {
  return spec.amplitudes[mode] * spec.time_coefficients[mode][level + 1];
}

}  // namespace

SpectralField noise_eval(const NoisePath& path, const SpatialBasis& basis, double t) {
  const NoiseSpec& spec = *path.spec;
  if (spec.kick_mode) throw std::invalid_argument("noise_eval: kick-mode noise has no time profile");
  if (!(t >= 0.0 && t < 1.0))
    throw std::domain_error("noise_eval: t must lie in [0, 1); multi-step forcing concatenates unit blocks");
  check_basis(spec, basis);
  const auto idx = haar_indices(spec.max_level);
  SpectralField out(basis[0].kind(), basis[0].grid());
  for (int i = 0; i < spec.modes; ++i) {
    double coef = 0.0;
    for (int h = 0; h < static_cast<int>(idx.size()); ++h)
      coef += signed_amplitude(spec, i, idx[h].level) * path.at(i, h) * haar_eval(idx[h], t);
    if (coef != 0.0) out.axpy(coef, basis[i]);
  }
  return out;
}

Forcing forcing_from_coords(const NoiseSpec& spec, const SpatialBasis& basis, const Eigen::VectorXd& coords) {
  if (spec.kick_mode) throw std::invalid_argument("kick-mode noise does not define a time-dependent forcing");
  if (coords.size() != spec.dimension()) throw std::invalid_argument("noise coordinate vector has wrong length");
  check_basis(spec, basis);
  const auto idx = haar_indices(spec.max_level);
  const int pieces = haar_count(spec.max_level);
  Forcing f;
  for (int q = 0; q < pieces; ++q) {
    const double t = double(q) / pieces;
    SpectralField piece(basis[0].kind(), basis[0].grid());
    for (int i = 0; i < spec.modes; ++i) {
      double coef = 0.0;
      for (int h = 0; h < pieces; ++h) {
        const double x = coords[h * spec.modes + i];
        if (x != 0.0) coef += signed_amplitude(spec, i, idx[h].level) * x * haar_eval(idx[h], t);
      }
      if (coef != 0.0) piece.axpy(coef, basis[i]);
    }
    f.pieces.push_back(std::move(piece));
  }
  return f;
}

SpectralField kick_from_coords(const NoiseSpec& spec, const SpatialBasis& basis, const Eigen::VectorXd& coords) {
  if (!spec.kick_mode) throw std::invalid_argument("kick requested but kick_mode is off");
  if (coords.size() != spec.modes) throw std::invalid_argument("kick coordinate vector has wrong length");
  check_basis(spec, basis);
  SpectralField out(basis[0].kind(), basis[0].grid());
  for (int i = 0; i < spec.modes; ++i)
    if (coords[i] != 0.0) out.axpy(spec.amplitudes[i] * coords[i], basis[i]);
  return out;
}

SpectralField kick_sample(const NoiseSpec& spec, const SpatialBasis& basis, RngStream& rng) {
  if (!spec.kick_mode) throw std::invalid_argument("kick_sample requires kick_mode");
  spec.validate();
  const TentDensity rho(spec.density_slope);
  Eigen::VectorXd xi(spec.modes);
  for (int i = 0; i < spec.modes; ++i) xi[i] = rho.sample(rng);
  return kick_from_coords(spec, basis, xi);
}

void write_path_csv(std::ostream& os, const NoisePath& path) {
  const NoiseSpec& spec = *path.spec;
  os << "i,level,shift,xi\n";
  os.precision(17);
  if (spec.kick_mode) {
    for (int i = 0; i < spec.modes; ++i) os << i + 1 << ",-1,0," << path.xi[i] << "\n";
    return;
  }
  const auto idx = haar_indices(spec.max_level);
  for (int i = 0; i < spec.modes; ++i)
    for (int h = 0; h < static_cast<int>(idx.size()); ++h)
      os << i + 1 << "," << idx[h].level << "," << idx[h].shift << "," << path.at(i, h) << "\n";
}

}  // namespace mixforge
