#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixforge/coupling_engine.hpp"
#include "mixforge/mixing_harness.hpp"

namespace mixforge {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input; the message starts with "line N:".
class ParseError : public ConfigError {
 public:
  ParseError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/// A value outside its allowed range; the message names the key.
class ValidationError : public ConfigError {
 public:
  ValidationError(const std::string& key, const std::string& constraint);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct FlowSection {
  std::string model = "nse";
  double viscosity = 0.5;
  double nu1 = 0.5;
  double nu2 = 0.0;
  double damping = 0.5;
  int power = 1;
  int grid = 32;
  int substeps = 32;
  int sobolev_m = 1;
  int dealias_radius = -1;
  double blowup_factor = 1e3;
  bool operator==(const FlowSection&) const = default;
};

struct NoiseSection {
  int modes = 8;
  int levels = 0;
  double amplitude = 1.0;
  double slope = 0.5;
  bool kick = false;
  bool operator==(const NoiseSection&) const = default;
};

struct InverseSection {
  double epsilon = 0.5;
  std::string projection = "restricted";
  std::string gram = "unit";
  int test_fields = 20;
  bool operator==(const InverseSection&) const = default;
};

struct CouplingSection {
  double delta_max = 0.2;
  int delta_halvings = 12;
  int squeeze_samples = 100;
  double squeeze_quantile = 0.99;
  double squeeze_target = 0.5;
  int gain_samples = 100;
  int c1_samples = 100;
  int dissipativity_samples = 40;
  int p_samples = 200;
  int warmup_steps = 10;
  double r_star_factor = 1.25;
  double p1_ratio = 0.5;
  int fixed_point_max = 60;
  double fixed_point_tol = 1e-12;
  double jacobian_step = 1e-5;
  int residual_cap = 100000;
  bool operator==(const CouplingSection&) const = default;
};

struct MixingSection {
  int pairs = 256;
  int horizon = 40;
  int lip_functionals = 64;
  int bootstrap = 100;
  std::vector<double> distance_schedule;
  double merge_tol = 1e-12;
  bool zero_noise = false;
  bool operator==(const MixingSection&) const = default;
};

struct StationarySection {
  int trajectories = 64;
  int samples = 40;
  int burn_in_min = 100;
  double kappa = 0.0;
  double radius = 0.0;
  int bootstrap = 200;
  int shells = 6;
  bool zero_noise = false;
  bool operator==(const StationarySection&) const = default;
};

struct RunSection {
  int threads = 0;  // 0: OpenMP default
  int steps = 20;
  int fd_directions = 3;
  int verbosity = 0;
  bool operator==(const RunSection&) const = default;
};

struct Config {
  FlowSection flow;
  NoiseSection noise;
  InverseSection inverse;
  CouplingSection coupling;
  MixingSection mixing;
  StationarySection stationary;
  RunSection run;
  bool operator==(const Config&) const = default;

  /// Defaults with the model-dependent entries (sobolev_m, noise modes) filled in.
  static Config defaults(Model model = Model::nse);

  Model model_kind() const { return parse_model(flow.model); }
  FlowConfig flow_config() const;
  NoiseSpec noise_spec() const;
  CouplingCalibrationConfig calibration_config() const;
  MixingConfig mixing_config(std::uint64_t seed) const;
  StationaryConfig stationary_config(std::uint64_t seed) const;
  /// Applies the numerical knobs of [coupling] to calibrated parameters.
  void apply_numerics(ControlParams& p) const;

  /// Throws ValidationError on the first violated constraint.
  void validate() const;
};

Config parse_config(std::istream& in);
Config load_config(const std::string& path);
/// Every key, one per line, grouped by section. parse_config reads it back unchanged.
void emit_config(std::ostream& os, const Config& cfg);

}  // namespace mixforge
