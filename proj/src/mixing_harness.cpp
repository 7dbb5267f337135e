#include "mixforge/mixing_harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "mixforge/parallel.hpp"

namespace mixforge {

namespace {

constexpr double kFloor = 1e-300;
constexpr double kAgreeSlack = 1e-14;  // absolute, for bands that collapse to a point

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  return f;
}

double window_slope(const std::vector<double>& series, int b, int e) {
  std::vector<double> x, y;
  for (int k = b; k < e; ++k) {
    x.push_back(k);
    y.push_back(std::log(std::max(series[k], kFloor)));
  }
  return least_squares(x, y).slope;
}

Model model_of(const SpectralField& u) { return u.kind() == FieldKind::velocity2d ? Model::nse : Model::cgl; }

}  // namespace

DecayFit fit_decay_rate(const std::vector<double>& series, const Eigen::MatrixXd* trajectories, int resamples,
                        std::uint64_t seed) {
  const int n = static_cast<int>(series.size());
  if (n < 8) throw std::invalid_argument("fit_decay_rate: need at least 8 entries");
  DecayFit fit;
  // With pair rows, the window also ends once too few pairs are still apart:
  // a handful of survivors carries no rate and a row bootstrap drops them.
  const bool rows = trajectories && trajectories->rows() > 0 && trajectories->cols() == n;
  const int min_rows = rows ? std::max<int>(3, static_cast<int>(trajectories->rows()) / 50) : 0;
  int positive = n;
  for (int k = 0; k < n; ++k) {
    if (!(series[k] > 0.0)) {
      positive = k;
      fit.floored = true;
      break;
    }
    if (rows && ((trajectories->col(k).array() > 0.0).count() < min_rows)) {
      positive = k;
      break;
    }
  }
  const int usable = positive >= 8 ? positive : n;
  fit.window_begin = usable / 2;
  fit.window_end = usable;
  const double slope = window_slope(series, fit.window_begin, fit.window_end);
  fit.kappa = std::exp(slope);

  std::vector<double> boot;
  RngStream rng(seed, 0xb007);
  if (trajectories && trajectories->rows() > 0) {
    const auto& T = *trajectories;
    const int rows = static_cast<int>(T.rows());
    for (int b = 0; b < resamples; ++b) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(T.cols());
      for (int r = 0; r < rows; ++r) mean += T.row(static_cast<int>(rng.next() % rows)).transpose();
      mean /= rows;
      std::vector<double> s(mean.data(), mean.data() + mean.size());
      boot.push_back(std::exp(window_slope(s, fit.window_begin, fit.window_end)));
    }
  } else {
    std::vector<double> x, y;
    for (int k = fit.window_begin; k < fit.window_end; ++k) {
      x.push_back(k);
      y.push_back(std::log(std::max(series[k], kFloor)));
    }
    const LineFit lf = least_squares(x, y);
    std::vector<double> res(x.size());
    for (size_t i = 0; i < x.size(); ++i) res[i] = y[i] - (lf.intercept + lf.slope * x[i]);
    for (int b = 0; b < resamples; ++b) {
      std::vector<double> yb(x.size());
      for (size_t i = 0; i < x.size(); ++i) yb[i] = lf.intercept + lf.slope * x[i] + res[rng.next() % res.size()];
      boot.push_back(std::exp(least_squares(x, yb).slope));
    }
  }
  fit.lo = quantile(boot, 0.025);
  fit.hi = quantile(boot, 0.975);
  fit.lo = std::min(fit.lo, fit.kappa);
  fit.hi = std::max(fit.hi, fit.kappa);
  fit.non_mixing = fit.kappa >= 1.0 - 1e-12 || fit.hi >= 1.0;
  return fit;
}

double lip_dual_estimate(const std::vector<SpectralField>& a, const std::vector<SpectralField>& b, int functionals,
                         int sobolev_m, std::uint64_t seed) {
  if (a.size() != b.size()) throw std::invalid_argument("lip_dual_estimate: ensembles differ in size");
  if (a.empty()) return 0.0;
  const StateCoords coords(model_of(a[0]), a[0].grid(), sobolev_m);
  const Eigen::VectorXd w = coords.gram().cwiseSqrt();
  const int n = static_cast<int>(a.size());
  Eigen::MatrixXd Ya(coords.dim(), n), Yb(coords.dim(), n);
  for (int j = 0; j < n; ++j) {
    Ya.col(j) = w.cwiseProduct(coords.to_vector(a[j]));
    Yb.col(j) = w.cwiseProduct(coords.to_vector(b[j]));
  }
  RngStream rng(seed, 0x11b);
  double best = 0.0;
  for (int f = 0; f < functionals; ++f) {
    Eigen::VectorXd theta(coords.dim());
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.normal();
    theta.normalize();
    const Eigen::ArrayXd ga = (Ya.transpose() * theta).array().max(-1.0).min(1.0);
    const Eigen::ArrayXd gb = (Yb.transpose() * theta).array().max(-1.0).min(1.0);
    best = std::max(best, std::abs(ga.mean() - gb.mean()));
  }
  return best;
}

MixingReport run_coupled_ensemble(const CouplingEngine& engine, const KantorovichDensity& kd, const MixingConfig& cfg,
                                  bool parallel) {
  if (cfg.pairs < 1 || cfg.horizon < 1) throw std::invalid_argument("mixing: pairs and horizon must be >= 1");
  if (!(kd.R_star >= kd.R0)) throw std::invalid_argument("mixing: R_* must be at least beta/(1 - gamma)");
  const FlowModel& model = engine.model();
  const SpatialBasis& basis = engine.basis();
  const int m = model.state_index();
  const ControlParams& par = engine.params();
  std::vector<double> schedule = cfg.distance_schedule;
  if (schedule.empty()) schedule = {2.0 * par.delta, par.delta, 0.25 * par.delta, 0.5 * kd.d0};
  const int P = cfg.pairs;
  const int K = cfg.horizon;

  std::vector<SpectralField> u(P), up(P);
  for (int j = 0; j < P; ++j) {
    RngStream rng(cfg.seed, 0xA11CE000000ULL + j);
    const double d = schedule[j % schedule.size()];
    const double R = rng.uniform(0.0, std::max(0.0, kd.R_star - d));
    u[j] = random_field(model, rng, R);
    up[j] = u[j];
    up[j].axpy(d, random_field(model, rng, 1.0));
  }

  MixingReport rep;
  rep.fK = Eigen::MatrixXd::Zero(P, K + 1);
  rep.glue_time_histogram.assign(K + 1, 0);
  std::vector<char> merged(P, 0), glued(P, 0), near(P, 0), clamped(P, 0);
  std::vector<int> trials(P, 0);
  auto stats = [&](int k) {
    StepStats s;
    s.k = k;
    std::vector<double> f(P), dist(P);
    for (int j = 0; j < P; ++j) {
      const double d = sobolev_norm(u[j] - up[j], m);
      const double R = std::max(sobolev_norm(u[j], m), sobolev_norm(up[j], m));
      if (R > kd.R_star) ++rep.ball_exits;
      f[j] = f_K_value(kd, d, R);
      dist[j] = std::min(d, kd.d0);
      rep.fK(j, k) = f[j];
    }
    s.mean_fK = std::accumulate(f.begin(), f.end(), 0.0) / P;
    s.q10 = quantile(f, 0.1);
    s.q90 = quantile(f, 0.9);
    s.mean_dist = std::accumulate(dist.begin(), dist.end(), 0.0) / P;
    s.glued_fraction = double(std::count(glued.begin(), glued.end(), 1)) / P;
    s.lip_lower = lip_dual_estimate(u, up, cfg.lip_functionals, m, cfg.seed ^ (0x9e37ULL * (k + 1)));
    s.lip_upper = kd.R_star / kd.d0 * s.mean_fK;
    if (s.lip_lower > s.lip_upper) rep.dominance_ok = false;
    rep.steps.push_back(s);
  };
  stats(0);

  for (int k = 1; k <= K; ++k) {
    auto advance = [&](int j) {
      RngStream rng(cfg.seed, j, k);
      glued[j] = near[j] = clamped[j] = 0;
      trials[j] = 0;
      if (cfg.zero_noise) {
        const NoisePath z = zero_path(engine.spec_ptr());
        u[j] = flow_map(model, basis, u[j], z);
        up[j] = flow_map(model, basis, up[j], z);
        return;
      }
      if (merged[j]) {
        u[j] = flow_map(model, basis, u[j], sample_noise_path(engine.spec_ptr(), rng));
        up[j] = u[j];
        glued[j] = near[j] = 1;
        return;
      }
      CouplingOutcome o = engine.coupled_step(u[j], up[j], kd, rng);
      near[j] = o.branch == Branch::near;
      glued[j] = o.glued_equal;
      clamped[j] = o.clamped;
      trials[j] = o.residual_trials;
      u[j] = std::move(o.u1);
      up[j] = std::move(o.u1_prime);
      if (o.glued_equal && o.distance_after <= cfg.merge_tol) {
        up[j] = u[j];
        merged[j] = 1;
      }
    };
    if (parallel) {
      LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
      for (int j = 0; j < P; ++j) guard.run([&] { advance(j); });
      guard.rethrow();
    } else {
      for (int j = 0; j < P; ++j) advance(j);
    }
    for (int j = 0; j < P; ++j) {
      if (near[j]) ++rep.near_steps;
      else ++rep.far_steps;
      rep.glued_steps += glued[j];
      rep.clamped_steps += clamped[j];
      rep.residual_trials += trials[j];
    }
    stats(k);
    for (int j = 0; j < P; ++j)
      if (merged[j] == 1) {
        ++rep.glue_time_histogram[k];
        merged[j] = 2;  // counted
      }
  }
  rep.never_merged = static_cast<int>(std::count(merged.begin(), merged.end(), 0));
  std::vector<double> series;
  for (const auto& s : rep.steps) series.push_back(s.mean_fK);
  rep.fit = fit_decay_rate(series, &rep.fK, cfg.bootstrap, cfg.seed);
  rep.burn_in = rep.fit.kappa < 1.0 ? 3.0 / std::abs(std::log(rep.fit.kappa)) : std::numeric_limits<double>::infinity();
  return rep;
}

double synchronous_contraction(const FlowModel& model, const SpatialBasis& basis,
                               const std::shared_ptr<const NoiseSpec>& spec, double radius, int pairs, int steps,
                               std::uint64_t seed) {
  const int m = model.state_index();
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(pairs, steps + 1);
  LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < pairs; ++j) guard.run([&] {
    RngStream rng(seed, 0x5c0000 + j);
    SpectralField a = random_field(model, rng, radius * rng.uniform());
    SpectralField b = random_field(model, rng, radius * rng.uniform());
    dist(j, 0) = sobolev_norm(a - b, m);
    for (int k = 1; k <= steps; ++k) {
      RngStream r(seed, 0x5c0000 + j, k);
      const NoisePath eta = sample_noise_path(spec, r);
      a = flow_map(model, basis, a, eta);
      b = flow_map(model, basis, b, eta);
      dist(j, k) = sobolev_norm(a - b, m);
    }
  });
  guard.rethrow();
  const Eigen::VectorXd mean = dist.colwise().mean();
  std::vector<double> s(mean.data(), mean.data() + mean.size());
  return fit_decay_rate(s, nullptr, 20, seed).kappa;
}

namespace {

std::vector<std::string> observable_names(int m, int shells) {
  std::vector<std::string> names{"norm0_sq", "norm1_sq"};
  if (m > 1) names.push_back("norm" + std::to_string(m) + "_sq");
  for (int s = 1; s <= shells; ++s) names.push_back("shell_" + std::to_string(s));
  return names;
}

std::vector<double> observables(const SpectralField& u, int m, int shells) {
  std::vector<double> o{std::pow(sobolev_norm(u, 0), 2), std::pow(sobolev_norm(u, 1), 2)};
  if (m > 1) o.push_back(std::pow(sobolev_norm(u, m), 2));
  std::vector<double> sh(shells, 0.0);
  for (const auto& md : u.grid()->retained()) {
    const int s = static_cast<int>(std::lround(std::sqrt(md.ksq)));
    if (s < 1 || s > shells) continue;
    for (int c = 0; c < u.components(); ++c) sh[s - 1] += std::norm(u.comp(c)[md.idx]);
  }
  o.insert(o.end(), sh.begin(), sh.end());
  return o;
}

}  // namespace

StationaryReport estimate_stationary(const FlowModel& model, const SpatialBasis& basis,
                                     const std::shared_ptr<const NoiseSpec>& spec, const StationaryConfig& cfg) {
  if (cfg.trajectories < 2 || cfg.samples < 1) throw std::invalid_argument("stationary: need >= 2 trajectories and >= 1 sample");
  StationaryReport rep;
  const int m = model.state_index();
  rep.kappa = cfg.kappa > 0.0 ? cfg.kappa
                              : synchronous_contraction(model, basis, spec, std::max(cfg.radius, 1.0), 32, 16, cfg.seed);
  const int mix_burn = rep.kappa < 1.0 ? static_cast<int>(std::ceil(3.0 / std::abs(std::log(rep.kappa)))) : cfg.burn_in_min;
  rep.burn_in = std::max(mix_burn, cfg.burn_in_min);
  const auto names = observable_names(m, cfg.shells);
  const int O = static_cast<int>(names.size());
  const int T = cfg.trajectories;
  std::vector<Eigen::MatrixXd> avg(2, Eigen::MatrixXd::Zero(T, O));
  std::vector<double> max_norm(2 * T, 0.0);
  rep.sample.resize(2 * T);
  LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < 2 * T; ++t) guard.run([&] {
    const int e = t / T;
    const int j = t % T;
    RngStream init(cfg.seed, 0x57a7000 + t);
    SpectralField u = e == 0 ? model.zero_field() : random_field(model, init, cfg.radius);
    for (int k = 1; k <= rep.burn_in + cfg.samples; ++k) {
      RngStream rng(cfg.seed, 0x57a7000 + t, k);
      const NoisePath eta = cfg.zero_noise ? zero_path(spec) : sample_noise_path(spec, rng);
      u = flow_map(model, basis, u, eta);
      if (k > rep.burn_in) {
        const auto o = observables(u, m, cfg.shells);
        for (int i = 0; i < O; ++i) avg[e](j, i) += o[i] / cfg.samples;
        max_norm[t] = std::max(max_norm[t], sobolev_norm(u, m));
      }
    }
    rep.sample[t] = std::move(u);
  });
  guard.rethrow();
  rep.max_norm = *std::max_element(max_norm.begin(), max_norm.end());
  RngStream rng(cfg.seed, 0xb0075);
  for (int i = 0; i < O; ++i) {
    MomentRow row;
    row.name = names[i];
    row.mean_a = avg[0].col(i).mean();
    row.mean_b = avg[1].col(i).mean();
    std::vector<double> ba, bb, bd;
    for (int b = 0; b < cfg.bootstrap; ++b) {
      double sa = 0.0, sb = 0.0;
      for (int j = 0; j < T; ++j) {
        sa += avg[0](static_cast<int>(rng.next() % T), i);
        sb += avg[1](static_cast<int>(rng.next() % T), i);
      }
      ba.push_back(sa / T);
      bb.push_back(sb / T);
      bd.push_back((sa - sb) / T);
    }
    row.lo_a = quantile(ba, 0.025);
    row.hi_a = quantile(ba, 0.975);
    row.lo_b = quantile(bb, 0.025);
    row.hi_b = quantile(bb, 0.975);
    row.diff_lo = quantile(bd, 0.025);
    row.diff_hi = quantile(bd, 0.975);
    row.agree = row.lo_a <= row.hi_b + kAgreeSlack && row.lo_b <= row.hi_a + kAgreeSlack;
    if (!row.agree) rep.agree = false;
    rep.moments.push_back(row);
  }
  return rep;
}

void write_mixing_csv(std::ostream& os, const MixingReport& r) {
  os << "k,mean_fK,q10,q90,mean_dist,glued_fraction,lip_lower,lip_upper\n";
  os.precision(17);
  for (const auto& s : r.steps)
    os << s.k << ',' << s.mean_fK << ',' << s.q10 << ',' << s.q90 << ',' << s.mean_dist << ',' << s.glued_fraction
       << ',' << s.lip_lower << ',' << s.lip_upper << '\n';
}

void write_mixing_summary(std::ostream& os, const MixingReport& r, const KantorovichDensity& kd,
                          const ControlParams& params) {
  os.precision(17);
  os << "key,value\n";
  os << "kappa," << r.fit.kappa << "\nkappa_lo," << r.fit.lo << "\nkappa_hi," << r.fit.hi << '\n';
  os << "fit_window_begin," << r.fit.window_begin << "\nfit_window_end," << r.fit.window_end << '\n';
  os << "non_mixing," << (r.fit.non_mixing ? 1 : 0) << "\nfloored," << (r.fit.floored ? 1 : 0) << '\n';
  os << "burn_in," << r.burn_in << '\n';
  os << "near_steps," << r.near_steps << "\nfar_steps," << r.far_steps << "\nglued_steps," << r.glued_steps << '\n';
  os << "clamped_steps," << r.clamped_steps << "\nresidual_trials," << r.residual_trials << '\n';
  os << "never_merged," << r.never_merged << "\nball_exits," << r.ball_exits << '\n';
  os << "dominance_ok," << (r.dominance_ok ? 1 : 0) << '\n';
  os << "gamma," << kd.gamma << "\nbeta," << kd.beta << "\nR0," << kd.R0 << "\nR_star," << kd.R_star << '\n';
  os << "d0," << kd.d0 << "\np," << kd.p << "\np1," << kd.p1 << "\nN0," << kd.N0 << '\n';
  os << "r," << params.r << "\nM," << params.M << "\ndelta," << params.delta << "\nC_eps," << params.C_eps << '\n';
}

void write_stationary_csv(std::ostream& os, const StationaryReport& r) {
  os << "observable,mean_a,lo_a,hi_a,mean_b,lo_b,hi_b,diff_lo,diff_hi,agree\n";
  os.precision(17);
  for (const auto& m : r.moments)
    os << m.name << ',' << m.mean_a << ',' << m.lo_a << ',' << m.hi_a << ',' << m.mean_b << ',' << m.lo_b << ','
       << m.hi_b << ',' << m.diff_lo << ',' << m.diff_hi << ',' << (m.agree ? 1 : 0) << '\n';
}

}  // namespace mixforge
