#include "mixforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace mixforge {

ParseError::ParseError(int line, const std::string& what)
    : ConfigError("line " + std::to_string(line) + ": " + what), line_(line) {}

ValidationError::ValidationError(const std::string& key, const std::string& constraint)
    : ConfigError(key + ": " + constraint), key_(key) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

int to_int(const std::string& s) {
  size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  if (v < INT32_MIN || v > INT32_MAX) throw std::out_of_range("integer out of range");
  return static_cast<int>(v);
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<double> to_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list entry");
    out.push_back(to_double(item));
  }
  return out;
}

std::string from_list(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt_double(v[i]);
  return s;
}

struct Entry {
  std::string section;
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <class S, class T>
Entry field(const std::string& sec, const std::string& key, S Config::*s, T S::*m) {
  Entry e{sec, key, {}, {}};
  if constexpr (std::is_same_v<T, double>) {
    e.set = [=](Config& c, const std::string& v) { c.*s.*m = to_double(v); };
    e.get = [=](const Config& c) { return fmt_double(c.*s.*m); };
  } else if constexpr (std::is_same_v<T, int>) {
    e.set = [=](Config& c, const std::string& v) { c.*s.*m = to_int(v); };
    e.get = [=](const Config& c) { return std::to_string(c.*s.*m); };
  } else if constexpr (std::is_same_v<T, bool>) {
    e.set = [=](Config& c, const std::string& v) { c.*s.*m = to_bool(v); };
    e.get = [=](const Config& c) { return std::string(c.*s.*m ? "true" : "false"); };
  } else if constexpr (std::is_same_v<T, std::string>) {
    e.set = [=](Config& c, const std::string& v) { c.*s.*m = v; };
    e.get = [=](const Config& c) { return c.*s.*m; };
  } else {
    e.set = [=](Config& c, const std::string& v) { c.*s.*m = to_list(v); };
    e.get = [=](const Config& c) { return from_list(c.*s.*m); };
  }
  return e;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    using C = Config;
    std::vector<Entry> v;
    v.push_back(field("flow", "model", &C::flow, &FlowSection::model));
    v.push_back(field("flow", "viscosity", &C::flow, &FlowSection::viscosity));
    v.push_back(field("flow", "nu1", &C::flow, &FlowSection::nu1));
    v.push_back(field("flow", "nu2", &C::flow, &FlowSection::nu2));
    v.push_back(field("flow", "damping", &C::flow, &FlowSection::damping));
    v.push_back(field("flow", "power", &C::flow, &FlowSection::power));
    v.push_back(field("flow", "grid", &C::flow, &FlowSection::grid));
    v.push_back(field("flow", "substeps", &C::flow, &FlowSection::substeps));
    v.push_back(field("flow", "sobolev_m", &C::flow, &FlowSection::sobolev_m));
    v.push_back(field("flow", "dealias_radius", &C::flow, &FlowSection::dealias_radius));
    v.push_back(field("flow", "blowup_factor", &C::flow, &FlowSection::blowup_factor));

    v.push_back(field("noise", "modes", &C::noise, &NoiseSection::modes));
    v.push_back(field("noise", "levels", &C::noise, &NoiseSection::levels));
    v.push_back(field("noise", "amplitude", &C::noise, &NoiseSection::amplitude));
    v.push_back(field("noise", "slope", &C::noise, &NoiseSection::slope));
    v.push_back(field("noise", "kick", &C::noise, &NoiseSection::kick));

    v.push_back(field("inverse", "epsilon", &C::inverse, &InverseSection::epsilon));
    v.push_back(field("inverse", "projection", &C::inverse, &InverseSection::projection));
    v.push_back(field("inverse", "gram", &C::inverse, &InverseSection::gram));
    v.push_back(field("inverse", "test_fields", &C::inverse, &InverseSection::test_fields));

    v.push_back(field("coupling", "delta_max", &C::coupling, &CouplingSection::delta_max));
    v.push_back(field("coupling", "delta_halvings", &C::coupling, &CouplingSection::delta_halvings));
    v.push_back(field("coupling", "squeeze_samples", &C::coupling, &CouplingSection::squeeze_samples));
    v.push_back(field("coupling", "squeeze_quantile", &C::coupling, &CouplingSection::squeeze_quantile));
    v.push_back(field("coupling", "squeeze_target", &C::coupling, &CouplingSection::squeeze_target));
    v.push_back(field("coupling", "gain_samples", &C::coupling, &CouplingSection::gain_samples));
    v.push_back(field("coupling", "c1_samples", &C::coupling, &CouplingSection::c1_samples));
    v.push_back(field("coupling", "dissipativity_samples", &C::coupling, &CouplingSection::dissipativity_samples));
    v.push_back(field("coupling", "p_samples", &C::coupling, &CouplingSection::p_samples));
    v.push_back(field("coupling", "warmup_steps", &C::coupling, &CouplingSection::warmup_steps));
    v.push_back(field("coupling", "r_star_factor", &C::coupling, &CouplingSection::r_star_factor));
    v.push_back(field("coupling", "p1_ratio", &C::coupling, &CouplingSection::p1_ratio));
    v.push_back(field("coupling", "fixed_point_max", &C::coupling, &CouplingSection::fixed_point_max));
    v.push_back(field("coupling", "fixed_point_tol", &C::coupling, &CouplingSection::fixed_point_tol));
    v.push_back(field("coupling", "jacobian_step", &C::coupling, &CouplingSection::jacobian_step));
    v.push_back(field("coupling", "residual_cap", &C::coupling, &CouplingSection::residual_cap));

    v.push_back(field("mixing", "pairs", &C::mixing, &MixingSection::pairs));
    v.push_back(field("mixing", "horizon", &C::mixing, &MixingSection::horizon));
    v.push_back(field("mixing", "lip_functionals", &C::mixing, &MixingSection::lip_functionals));
    v.push_back(field("mixing", "bootstrap", &C::mixing, &MixingSection::bootstrap));
    v.push_back(field("mixing", "distance_schedule", &C::mixing, &MixingSection::distance_schedule));
    v.push_back(field("mixing", "merge_tol", &C::mixing, &MixingSection::merge_tol));
    v.push_back(field("mixing", "zero_noise", &C::mixing, &MixingSection::zero_noise));

    v.push_back(field("stationary", "trajectories", &C::stationary, &StationarySection::trajectories));
    v.push_back(field("stationary", "samples", &C::stationary, &StationarySection::samples));
    v.push_back(field("stationary", "burn_in_min", &C::stationary, &StationarySection::burn_in_min));
    v.push_back(field("stationary", "kappa", &C::stationary, &StationarySection::kappa));
    v.push_back(field("stationary", "radius", &C::stationary, &StationarySection::radius));
    v.push_back(field("stationary", "bootstrap", &C::stationary, &StationarySection::bootstrap));
    v.push_back(field("stationary", "shells", &C::stationary, &StationarySection::shells));
    v.push_back(field("stationary", "zero_noise", &C::stationary, &StationarySection::zero_noise));

    v.push_back(field("run", "threads", &C::run, &RunSection::threads));
    v.push_back(field("run", "steps", &C::run, &RunSection::steps));
    v.push_back(field("run", "fd_directions", &C::run, &RunSection::fd_directions));
    v.push_back(field("run", "verbosity", &C::run, &RunSection::verbosity));
    return v;
  }();
  return entries;
}

void require(bool ok, const std::string& key, const std::string& constraint) {
  if (!ok) throw ValidationError(key, constraint);
}

}  // namespace

Config Config::defaults(Model model) {
  Config c;
  c.flow.model = to_string(model);
  c.flow.sobolev_m = model == Model::nse ? 1 : 2;
  c.noise.modes = model == Model::nse ? 8 : 10;
  return c;
}

void Config::validate() const {
  require(flow.model == "nse" || flow.model == "cgl", "flow.model", "must be nse or cgl");
  require(flow.viscosity > 0.0, "flow.viscosity", "must be positive");
  require(flow.nu1 > 0.0, "flow.nu1", "must be positive");
  require(flow.nu2 >= 0.0, "flow.nu2", "must be non-negative");
  require(flow.damping > 0.0, "flow.damping", "must be positive");
  require(flow.power >= 1, "flow.power", "must be a positive integer");
  require(flow.grid >= 8 && flow.grid % 2 == 0, "flow.grid", "must be even and at least 8");
  require(flow.substeps >= 1 && (flow.substeps & (flow.substeps - 1)) == 0, "flow.substeps",
          "must be a power of two");
  require(flow.sobolev_m >= 0, "flow.sobolev_m", "must be non-negative");
  require(flow.model != "cgl" || flow.sobolev_m >= 2, "flow.sobolev_m", "must be at least 2 for cgl");
  require(flow.dealias_radius == -1 || (flow.dealias_radius >= 1 && flow.dealias_radius < flow.grid / 2),
          "flow.dealias_radius", "must be -1 or in [1, grid/2)");
  require(flow.blowup_factor > 0.0, "flow.blowup_factor", "must be positive");

  require(noise.modes >= 1, "noise.modes", "must be at least 1");
  require(noise.levels >= 0 && noise.levels <= 20, "noise.levels", "must lie in [0, 20]");
  require(noise.amplitude > 0.0, "noise.amplitude", "must be positive");
  require(noise.slope > 0.0 && noise.slope < 1.0, "noise.slope", "must lie in (0, 1)");

  require(inverse.epsilon > 0.0 && inverse.epsilon < 1.0, "inverse.epsilon", "must lie in (0, 1)");
  require(inverse.projection == "restricted" || inverse.projection == "outer", "inverse.projection",
          "must be restricted or outer");
  require(inverse.gram == "unit" || inverse.gram == "amplitude", "inverse.gram", "must be unit or amplitude");
  require(inverse.test_fields >= 1, "inverse.test_fields", "must be at least 1");

  require(coupling.delta_max > 0.0, "coupling.delta_max", "must be positive");
  require(coupling.delta_halvings >= 0, "coupling.delta_halvings", "must be non-negative");
  require(coupling.squeeze_samples >= 1, "coupling.squeeze_samples", "must be at least 1");
  require(coupling.squeeze_quantile > 0.0 && coupling.squeeze_quantile <= 1.0, "coupling.squeeze_quantile",
          "must lie in (0, 1]");
  require(coupling.squeeze_target > 0.0 && coupling.squeeze_target < 1.0, "coupling.squeeze_target",
          "must lie in (0, 1)");
  require(coupling.gain_samples >= 1, "coupling.gain_samples", "must be at least 1");
  require(coupling.c1_samples >= 1, "coupling.c1_samples", "must be at least 1");
  require(coupling.dissipativity_samples >= 2, "coupling.dissipativity_samples", "must be at least 2");
  require(coupling.p_samples >= 1, "coupling.p_samples", "must be at least 1");
  require(coupling.warmup_steps >= 0, "coupling.warmup_steps", "must be non-negative");
  require(coupling.r_star_factor >= 1.0, "coupling.r_star_factor", "must be at least 1");
  require(coupling.p1_ratio > 0.0 && coupling.p1_ratio < 1.0, "coupling.p1_ratio", "must lie in (0, 1)");
  require(coupling.fixed_point_max >= 1, "coupling.fixed_point_max", "must be at least 1");
  require(coupling.fixed_point_tol > 0.0, "coupling.fixed_point_tol", "must be positive");
  require(coupling.jacobian_step > 0.0, "coupling.jacobian_step", "must be positive");
  require(coupling.residual_cap >= 1, "coupling.residual_cap", "must be at least 1");

  require(mixing.pairs >= 1, "mixing.pairs", "must be at least 1");
  require(mixing.horizon >= 7, "mixing.horizon", "must be at least 7");
  require(mixing.lip_functionals >= 1, "mixing.lip_functionals", "must be at least 1");
  require(mixing.bootstrap >= 1, "mixing.bootstrap", "must be at least 1");
  for (double d : mixing.distance_schedule) require(d >= 0.0, "mixing.distance_schedule", "entries must be non-negative");
  require(mixing.merge_tol >= 0.0, "mixing.merge_tol", "must be non-negative");

  require(stationary.trajectories >= 2, "stationary.trajectories", "must be at least 2");
  require(stationary.samples >= 1, "stationary.samples", "must be at least 1");
  require(stationary.burn_in_min >= 0, "stationary.burn_in_min", "must be non-negative");
  require(stationary.kappa >= 0.0 && stationary.kappa < 1.0, "stationary.kappa", "must lie in [0, 1)");
  require(stationary.radius >= 0.0, "stationary.radius", "must be non-negative");
  require(stationary.bootstrap >= 1, "stationary.bootstrap", "must be at least 1");
  require(stationary.shells >= 0, "stationary.shells", "must be non-negative");

  require(run.threads >= 0, "run.threads", "must be non-negative");
  require(run.steps >= 1, "run.steps", "must be at least 1");
  require(run.fd_directions >= 1, "run.fd_directions", "must be at least 1");
  require(run.verbosity >= 0, "run.verbosity", "must be non-negative");
}

FlowConfig Config::flow_config() const {
  FlowConfig f = FlowConfig::defaults(model_kind());
  f.nu = flow.viscosity;
  f.nu1 = flow.nu1;
  f.nu2 = flow.nu2;
  f.gamma = flow.damping;
  f.power_r = flow.power;
  f.grid_size = flow.grid;
  f.substeps = flow.substeps;
  f.sobolev_m = flow.sobolev_m;
  f.dealias_radius = flow.dealias_radius;
  f.blowup_factor = flow.blowup_factor;
  return f;
}

NoiseSpec Config::noise_spec() const {
  NoiseSpec s = NoiseSpec::defaults(noise.modes, noise.levels, noise.amplitude, noise.slope);
  s.kick_mode = noise.kick;
  return s;
}

CouplingCalibrationConfig Config::calibration_config() const {
  CouplingCalibrationConfig c;
  c.epsilon = inverse.epsilon;
  c.projection = inverse.projection == "outer" ? Projection::outer : Projection::restricted;
  c.gram = inverse.gram == "amplitude" ? NoiseGram::amplitude : NoiseGram::unit;
  c.test_fields = inverse.test_fields;
  c.delta_max = coupling.delta_max;
  c.delta_halvings = coupling.delta_halvings;
  c.squeeze_samples = coupling.squeeze_samples;
  c.squeeze_quantile = coupling.squeeze_quantile;
  c.squeeze_target = coupling.squeeze_target;
  c.gain_samples = coupling.gain_samples;
  c.c1_samples = coupling.c1_samples;
  c.dissipativity_samples = coupling.dissipativity_samples;
  c.p_samples = coupling.p_samples;
  c.warmup_steps = coupling.warmup_steps;
  c.R_star_factor = coupling.r_star_factor;
  return c;
}

void Config::apply_numerics(ControlParams& p) const {
  p.fixed_point_max = coupling.fixed_point_max;
  p.fixed_point_tol = coupling.fixed_point_tol;
  p.jacobian_step = coupling.jacobian_step;
  p.residual_cap = coupling.residual_cap;
}

MixingConfig Config::mixing_config(std::uint64_t seed) const {
  MixingConfig m;
  m.pairs = mixing.pairs;
  m.horizon = mixing.horizon;
  m.lip_functionals = mixing.lip_functionals;
  m.bootstrap = mixing.bootstrap;
  m.distance_schedule = mixing.distance_schedule;
  m.merge_tol = mixing.merge_tol;
  m.zero_noise = mixing.zero_noise;
  m.seed = seed;
  return m;
}

StationaryConfig Config::stationary_config(std::uint64_t seed) const {
  StationaryConfig s;
  s.trajectories = stationary.trajectories;
  s.samples = stationary.samples;
  s.burn_in_min = stationary.burn_in_min;
  s.kappa = stationary.kappa;
  s.radius = stationary.radius;
  s.bootstrap = stationary.bootstrap;
  s.shells = stationary.shells;
  s.zero_noise = stationary.zero_noise;
  s.seed = seed;
  return s;
}

Config parse_config(std::istream& in) {
  struct Line {
    int number;
    std::string section, key, value;
  };
  std::vector<Line> lines;
  std::set<std::string> sections;
  for (const auto& e : registry()) sections.insert(e.section);

  std::string raw, section;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(number, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ParseError(number, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(number, "expected 'key = value'");
    if (section.empty()) throw ParseError(number, "key outside any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(number, "missing key");
    lines.push_back({number, section, key, trim(line.substr(eq + 1))});
  }

  // The model picks the defaults of the model-dependent keys.
  Model model = Model::nse;
  for (const auto& l : lines)
    if (l.section == "flow" && l.key == "model") {
      if (l.value != "nse" && l.value != "cgl") throw ValidationError("flow.model", "must be nse or cgl");
      model = parse_model(l.value);
    }
  Config cfg = Config::defaults(model);

  std::set<std::string> seen;
  for (const auto& l : lines) {
    const std::string full = l.section + "." + l.key;
    const auto it = std::find_if(registry().begin(), registry().end(),
                                 [&](const Entry& e) { return e.section == l.section && e.key == l.key; });
    if (it == registry().end()) throw ParseError(l.number, "unknown key '" + l.key + "' in [" + l.section + "]");
    if (!seen.insert(full).second) throw ParseError(l.number, "duplicate key '" + full + "'");
    try {
      it->set(cfg, l.value);
    } catch (const std::exception& e) {
      throw ParseError(l.number, "bad value for '" + full + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

void emit_config(std::ostream& os, const Config& cfg) {
  std::string section;
  for (const auto& e : registry()) {
    if (e.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << e.section << "]\n";
      section = e.section;
    }
    os << e.key << " = " << e.get(cfg) << "\n";
  }
}

}  // namespace mixforge
