#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mixforge/config.hpp"

namespace mixforge {

/// Kolmogorov-Smirnov statistic sup |F_n - F| of a sample against a CDF.
double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf);
/// Asymptotic critical value of the one-sample statistic at level alpha.
double ks_critical(int n, double alpha);

/// FNV-1a over the bit patterns of everything fed in.
class Digest {
 public:
  void add(double v);
  void add(std::int64_t v);
  void add(const std::vector<double>& v);
  void add(const SpectralField& u);
  std::uint64_t value() const { return h_; }

 private:
  void bytes(const void* p, size_t n);
  std::uint64_t h_ = 1469598103934665603ULL;
};

struct CheckRow {
  std::string check;
  double value = 0.0;
  std::string relation;  // "<=", ">=", "==", "<"
  double bound = 0.0;
  bool pass = false;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  std::vector<CheckRow> checks;
  double seconds = 0.0;
  std::uint64_t digest = 0;
  std::string note;
  bool pass() const;
};

/// Everything one model needs: flow, basis, noise and (lazily) the coupling
/// calibration with its Kantorovich density.
struct ModelSetup {
  Config cfg;
  std::unique_ptr<FlowModel> model;
  std::unique_ptr<SpatialBasis> basis;
  std::shared_ptr<const NoiseSpec> spec;
  std::optional<CouplingCalibration> cal;
  std::optional<KantorovichDensity> kd;

  explicit ModelSetup(const Config& c);
  const CouplingCalibration& calibration(std::uint64_t seed);
  const KantorovichDensity& density(std::uint64_t seed);
  double R_star(std::uint64_t seed);
};

/// Shared state of one verification run.
class VerifySuite {
 public:
  VerifySuite(const Config& nse, const Config& cgl, std::uint64_t seed);

  ModelSetup& setup(Model m) { return m == Model::nse ? nse_ : cgl_; }
  std::uint64_t seed() const { return seed_; }

  CriterionResult noise();           // 1
  CriterionResult solver();          // 2
  CriterionResult derivatives();     // 3
  CriterionResult right_inverse();   // 4
  CriterionResult squeezing();       // 5
  CriterionResult coupling();        // 6
  CriterionResult kantorovich();     // 7
  CriterionResult mixing();          // 8
  CriterionResult stationarity();    // 9
  /// 10: re-runs every criterion in `first` with a fresh suite and a different
  /// thread count and compares digests.
  CriterionResult determinism(const std::vector<CriterionResult>& first, const std::vector<int>& ids);

  CriterionResult run(int id);
  static std::string name(int id);
  static double budget_seconds(int id);

 private:
  ModelSetup nse_;
  ModelSetup cgl_;
  std::uint64_t seed_;
};

/// criterion,check,value,relation,bound,pass
void write_verify_csv(std::ostream& os, const std::vector<CriterionResult>& results);

}  // namespace mixforge
