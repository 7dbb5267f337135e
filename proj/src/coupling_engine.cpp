#include "mixforge/coupling_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "mixforge/parallel.hpp"

namespace mixforge {

// ---------------------------------------------------------------------------
// control map

ControlContext::ControlContext(const FlowModel& model, const SpatialBasis& basis, const ControlParams& params,
                               const SpectralField& u, const NoisePath& eta)
    : model_(&model), basis_(&basis), params_(params) {
  base_ = make_base_point(model, basis, u, eta);
  const int cols = params_.projection == Projection::restricted ? params_.M : -1;
  A_ = assemble_A(model, basis, base_, cols, params_.gram);
  R_ = RightInverse(A_, params_.r, params_.M, params_.projection);
}

SpectralField ControlContext::du_apply(const SpectralField& h) const {
  return tangent_flow(*model_, *basis_, base_, h, Eigen::VectorXd());
}

Eigen::VectorXd ControlContext::phi_raw(const SpectralField& u_prime, bool* clamped) const {
  const StateCoords coords(model_->model(), model_->grid(), model_->state_index());
  const SpectralField f = du_apply(u_prime - base_.u0);
  Eigen::VectorXd z = R_.apply(-coords.to_vector(f));
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(base_.path.spec->dimension());
  phi.head(z.size()) = z;
  const double n = std::sqrt(phi.head(z.size()).cwiseProduct(A_.gram_E).dot(phi.head(z.size())));
  bool hit = false;
  if (n > params_.clamp_radius) {
    phi *= params_.clamp_radius / n;
    hit = true;
  }
  if (clamped) *clamped = hit;
  return phi;
}

Eigen::VectorXd phi_control(const ControlContext& ctx, const SpectralField& u_prime, bool* clamped) {
  const double d = sobolev_norm(u_prime - ctx.base().u0, ctx.model().state_index());
  if (d > ctx.params().delta * (1.0 + 1e-12))
    throw std::domain_error("phi_control: ||u' - u|| exceeds the squeeze radius delta");
  return ctx.phi_raw(u_prime, clamped);
}

SqueezeResult psi_squeeze(const ControlContext& ctx, const SpectralField& u_prime) {
  SqueezeResult s;
  const Eigen::VectorXd phi = phi_control(ctx, u_prime, &s.clamped);
  s.shifted = ctx.base().path;
  s.shifted.xi += phi;
  s.u1 = ctx.base().u1;
  s.u1_prime = flow_map(ctx.model(), ctx.basis(), u_prime, s.shifted);
  const int m = ctx.model().state_index();
  const double d = sobolev_norm(u_prime - ctx.base().u0, m);
  s.ratio = d == 0.0 ? 0.0 : sobolev_norm(s.u1 - s.u1_prime, m) / d;
  return s;
}

// ---------------------------------------------------------------------------
// densities and maximal coupling

double product_density(const TentDensity& rho, const Eigen::VectorXd& x) {
  double p = 1.0;
  for (int i = 0; i < x.size() && p > 0.0; ++i) p *= rho.pdf(x[i]);
  return p;
}

namespace {

// D Phi_w at v by one-sided differences: every evaluation of phi_w assembles
// a tangent operator, so this is M + 1 assemblies counting f0.
Eigen::MatrixXd block_jacobian(const BlockMap& phi_w, const Eigen::VectorXd& v, const Eigen::VectorXd& f0,
                               double h) {
  const int M = static_cast<int>(v.size());
  Eigen::MatrixXd D(M, M);
  for (int j = 0; j < M; ++j) {
    Eigen::VectorXd vp = v;
    vp[j] += h;
    D.col(j) = (phi_w(vp) - f0) / h;
  }
  return D;
}

}  // namespace

DensityEval pushforward_density_at(const BlockMap& phi_w, const TentDensity& rho, const Eigen::VectorXd& v,
                                   const ControlParams& params, const Eigen::VectorXd* phi_v) {
  DensityEval e;
  e.preimage = v;
  const double base = product_density(rho, v);
  if (base == 0.0) return e;
  const int M = static_cast<int>(v.size());
  const Eigen::VectorXd f0 = phi_v ? *phi_v : phi_w(v);
  const Eigen::MatrixXd J = Eigen::MatrixXd::Identity(M, M) + block_jacobian(phi_w, v, f0, params.jacobian_step);
  e.jacobian = std::abs(J.partialPivLu().determinant());
  e.q = base / e.jacobian;
  return e;
}

DensityEval pushforward_density(const BlockMap& phi_w, const TentDensity& rho, const Eigen::VectorXd& x,
                                const ControlParams& params, const Eigen::VectorXd* start) {
  // Solve v + Phi_w(v) = x. Plain iteration while it contracts, then Newton
  // with the Jacobian refreshed whenever a step fails to halve.
  Eigen::VectorXd v = start ? *start : x;
  const int M = static_cast<int>(x.size());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(M, M);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  bool newton = false, keep = false;
  double prev = std::numeric_limits<double>::infinity(), last = prev;
  int stalls = 0, it = 0;
  for (;;) {
    if (it >= params.fixed_point_max) {
      char msg[160];
      std::snprintf(msg, sizeof msg, "pushforward_density: preimage iteration did not converge (last step %.3g%s)",
                    last, newton ? ", newton" : "");
      throw FixedPointError(msg);
    }
    const Eigen::VectorXd f = phi_w(v);
    ++it;
    const Eigen::VectorXd res = v + f - x;
    if (!newton) {
      last = res.lpNorm<Eigen::Infinity>();
      if (!(last > 0.5 * prev && ++stalls >= 2)) {
        v -= res;
        if (last <= params.fixed_point_tol) break;
        prev = std::min(prev, last);
        continue;
      }
      newton = true;
      prev = std::numeric_limits<double>::infinity();
    }
    if (!keep) lu.compute(I + block_jacobian(phi_w, v, f, params.jacobian_step));
    const Eigen::VectorXd dv = lu.solve(res);
    v -= dv;
    last = dv.lpNorm<Eigen::Infinity>();
    if (last <= params.fixed_point_tol) break;
    // Phi_w carries rounding of order eps/r; a stalled step this small is that floor
    if (last > 0.5 * prev && last <= std::sqrt(params.fixed_point_tol)) break;
    // keep the factorization only while it still buys a halving per step
    keep = last <= 0.5 * prev;
    prev = last;
  }
  DensityEval e = pushforward_density_at(phi_w, rho, v, params);
  e.iterations = it;
  return e;
}

MaximalSample maximal_coupling_sample(const std::function<double(const Eigen::VectorXd&)>& p_density,
                                      const std::function<double(const Eigen::VectorXd&)>& q_density,
                                      const std::function<Eigen::VectorXd(RngStream&)>& p_sampler,
                                      const std::function<Eigen::VectorXd(RngStream&)>& q_sampler, RngStream& rng,
                                      int cap) {
  MaximalSample s;
  s.x = p_sampler(rng);
  const double px = p_density(s.x);
  const double qx = q_density(s.x);
  if (rng.uniform() * px <= qx) {
    s.y = s.x;
    s.equal = true;
    return s;
  }
  for (int t = 0; t < cap; ++t) {
    Eigen::VectorXd y = q_sampler(rng);
    ++s.residual_trials;
    const double qy = q_density(y);
    const double py = p_density(y);
    // accept with probability (1 - p/q)+
    if (rng.uniform() * qy >= py) {
      s.y = std::move(y);
      return s;
    }
  }
  throw ResidualCapError("maximal coupling: residual rejection exceeded its cap (TV close to 1)");
}

// ---------------------------------------------------------------------------
// Kantorovich density

double KantorovichDensity::f(double x) const {
  if (x >= R_star) return 3.0 * d0;
  if (x > R0) return a1 + (3.0 * d0 - a1) * (x - R0) / (R_star - R0);
  if (!(x > 0.0)) return values.back();
  const double t = std::log(R0 / x) / std::log(1.0 / a);
  const int n = std::clamp(static_cast<int>(std::floor(t)) + 1, 1, N0);
  return values[n - 1];
}

KantorovichDensity build_kantorovich_f(double gamma, double beta, double R_star, double d0, double p, double p1,
                                       std::optional<double> a2) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("kantorovich: gamma must lie in (0, 1)");
  if (!(beta > 0.0)) throw std::invalid_argument("kantorovich: beta must be > 0");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("kantorovich: p must lie in (0, 1)");
  if (!(p1 > 0.0 && p1 < p)) throw std::invalid_argument("kantorovich: p1 must lie in (0, p)");
  KantorovichDensity kd;
  kd.gamma = gamma;
  kd.beta = beta;
  kd.R0 = beta / (1.0 - gamma);
  kd.R_star = R_star;
  kd.d0 = d0;
  kd.p = p;
  kd.p1 = p1;
  if (!(d0 > 0.0 && d0 < 2.0 * kd.R0)) throw std::invalid_argument("kantorovich: d0 must lie in (0, 2 beta/(1 - gamma))");
  if (!(R_star > kd.R0)) throw std::invalid_argument("kantorovich: R_* must exceed beta/(1 - gamma)");
  kd.a = 0.5 * (1.0 + gamma);
  kd.a1 = 2.5 * d0;
  kd.N0 = static_cast<int>(std::floor((std::log(2.0 * kd.R0) + std::log(1.0 / d0)) / std::log(1.0 / kd.a))) + 1;
  const double lp1 = std::log(p1);
  // Largest admissible gap keeps a_N0 above 2 d0.
  const double log_max_gap = std::log(0.5 * d0) + (kd.N0 - 2) * lp1;
  if (a2) {
    const double gap = kd.a1 - *a2;
    if (!(gap > 0.0)) throw std::invalid_argument("kantorovich: a2 must be below a1 = 2.5 d0");
    kd.log_gap2 = std::log(gap);
  } else {
    kd.log_gap2 = std::log(d0 / 10.0) + kd.N0 * lp1;
  }
  if (kd.N0 >= 2 && !(kd.log_gap2 < log_max_gap))
    throw InfeasibleError("kantorovich: a1 - a2 too large, a_N0 would fall to 2 d0 or below",
                          std::exp(std::min(log_max_gap, 700.0)));
  kd.values.assign(kd.N0, kd.a1);
  kd.log_gaps.assign(kd.N0, -std::numeric_limits<double>::infinity());
  for (int n = 2; n <= kd.N0; ++n) {
    kd.log_gaps[n - 1] = kd.log_gap2 - (n - 2) * lp1;
    kd.values[n - 1] = kd.a1 - std::exp(kd.log_gaps[n - 1]);
  }
  return kd;
}

bool kantorovich_relation_holds(const KantorovichDensity& kd) {
  // a_{n-1} - p a_n - (1 - p) a1 = p g_n - g_{n-1} with g_n = a1 - a_n.
  const double lp = std::log(kd.p);
  for (int n = 2; n <= kd.N0; ++n) {
    const double lhs = lp + kd.log_gaps[n - 1];
    const double rhs = kd.log_gaps[n - 2];
    if (!(lhs > rhs)) return false;
  }
  return true;
}

double f_K_value(const KantorovichDensity& kd, double distance, double max_norm) {
  return distance <= kd.d0 ? distance : kd.f(max_norm);
}

double f_K_eval(const KantorovichDensity& kd, const SpectralField& x1, const SpectralField& x2, int sobolev_m) {
  return f_K_value(kd, sobolev_norm(x1 - x2, sobolev_m), std::max(sobolev_norm(x1, sobolev_m), sobolev_norm(x2, sobolev_m)));
}

// ---------------------------------------------------------------------------
// coupled step

CouplingEngine::CouplingEngine(const FlowModel& model, const SpatialBasis& basis,
                               std::shared_ptr<const NoiseSpec> spec, const ControlParams& params)
    : model_(&model), basis_(&basis), spec_(std::move(spec)), params_(params), rho_(spec_->density_slope) {
  spec_->validate();
  if (spec_->kick_mode) throw std::invalid_argument("coupling engine requires Haar-series noise");
  if (params_.M < 1 || params_.M > spec_->dimension()) throw std::out_of_range("control dimension M out of range");
}

ControlContext CouplingEngine::context(const SpectralField& u, const NoisePath& eta) const {
  return ControlContext(*model_, *basis_, params_, u, eta);
}

BlockMap CouplingEngine::block_map(const SpectralField& u, const SpectralField& u_prime, const NoisePath& eta) const {
  const int M = params_.M;
  return [this, u, u_prime, eta, M](const Eigen::VectorXd& v) {
    NoisePath p = eta;
    p.xi.head(M) = v;
    return Eigen::VectorXd(context(u, p).phi_raw(u_prime).head(M));
  };
}

namespace {

Eigen::VectorXd sample_block(const TentDensity& rho, int M, RngStream& rng) {
  Eigen::VectorXd x(M);
  for (int i = 0; i < M; ++i) x[i] = rho.sample(rng);
  return x;
}

}  // namespace

CouplingEngine::NearProposal CouplingEngine::near_proposal(const SpectralField& u, const SpectralField& u_prime,
                                                           RngStream& rng) const {
  NearProposal np;
  np.eta = sample_noise_path(spec_, rng);
  np.zeta2 = np.eta;
  if (distance(u, u_prime) == 0.0) {
    np.p = np.q = product_density(rho_, np.eta.xi.head(params_.M));
    np.accept = 1.0;
    return np;
  }
  const ControlContext ctx = context(u, np.eta);
  const Eigen::VectorXd phi = phi_control(ctx, u_prime, &np.clamped);
  np.zeta2.xi += phi;
  const int M = params_.M;
  np.p = product_density(rho_, np.zeta2.xi.head(M));
  const Eigen::VectorXd phi_m = phi.head(M);
  const DensityEval q = pushforward_density_at(block_map(u, u_prime, np.eta), rho_, np.eta.xi.head(M), params_, &phi_m);
  np.q = q.q;
  np.accept = np.q > 0.0 ? std::min(1.0, np.p / np.q) : 0.0;
  return np;
}

CouplingOutcome CouplingEngine::coupled_step(const SpectralField& u, const SpectralField& u_prime,
                                             const KantorovichDensity& kd, RngStream& rng) const {
  CouplingOutcome o;
  o.distance_before = distance(u, u_prime);
  if (o.distance_before > kd.d0) {
    o.branch = Branch::far;
    o.eta = sample_noise_path(spec_, rng);
    o.eta_prime = o.eta;
    o.u1 = flow_map(*model_, *basis_, u, o.eta);
    o.u1_prime = flow_map(*model_, *basis_, u_prime, o.eta);
  } else {
    o.branch = Branch::near;
    NearProposal np = near_proposal(u, u_prime, rng);
    o.eta = np.eta;
    o.clamped = np.clamped;
    o.tv_estimate = np.q > 0.0 ? std::max(0.0, 1.0 - np.p / np.q) : 1.0;
    if (rng.uniform() < np.accept) {
      o.glued_equal = true;
      o.eta_prime = np.zeta2;
    } else {
      // Residual of rho^M against the pushforward law, conditional on w.
      const int M = params_.M;
      const BlockMap phi_w = block_map(u, u_prime, np.eta);
      const Eigen::VectorXd shift = np.zeta2.xi.head(M) - np.eta.xi.head(M);
      bool done = false;
      for (int t = 0; t < params_.residual_cap && !done; ++t) {
        const Eigen::VectorXd x = sample_block(rho_, M, rng);
        ++o.residual_trials;
        const double px = product_density(rho_, x);
        const Eigen::VectorXd start = x - shift;
        const double qx = pushforward_density(phi_w, rho_, x, params_, &start).q;
        if (rng.uniform() * px >= qx) {
          o.eta_prime = np.eta;
          o.eta_prime.xi.head(M) = x;
          done = true;
        }
      }
      if (!done) throw ResidualCapError("coupled_step: residual sampling exceeded its cap");
    }
    o.u1 = flow_map(*model_, *basis_, u, o.eta);
    o.u1_prime = flow_map(*model_, *basis_, u_prime, o.eta_prime);
  }
  o.distance_after = distance(o.u1, o.u1_prime);
  o.squeeze_ratio = o.distance_before == 0.0 ? 0.0 : o.distance_after / o.distance_before;
  return o;
}

void write_step_csv_header(std::ostream& os) {
  os << "step,branch,distance_before,distance_after,squeeze_ratio,glued_equal,tv_estimate,clamped\n";
}

void write_step_csv_row(std::ostream& os, int step, const CouplingOutcome& o) {
  os.precision(17);
  os << step << ',' << (o.branch == Branch::far ? "far" : "near") << ',' << o.distance_before << ','
     << o.distance_after << ',' << o.squeeze_ratio << ',' << (o.glued_equal ? 1 : 0) << ',' << o.tv_estimate << ','
     << (o.clamped ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// calibration

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

std::vector<SpectralField> typical_states(const FlowModel& model, const SpatialBasis& basis,
                                          const std::shared_ptr<const NoiseSpec>& spec, int count, int steps,
                                          std::uint64_t seed) {
  std::vector<SpectralField> out(count);
  LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) guard.run([&] {
    RngStream rng(seed, 0x7e1ca1, k);
    SpectralField u = model.zero_field();
    for (int s = 0; s < steps; ++s) u = flow_map(model, basis, u, sample_noise_path(spec, rng));
    out[k] = std::move(u);
  });
  guard.rethrow();
  return out;
}

namespace {

// Low-mode directions, the same family the runs perturb along. White noise
// in H^m sits mostly in fast-decaying modes and underestimates the gain.
SpectralField unit_direction(const FlowModel& model, RngStream& rng) { return random_field(model, rng, 1.0); }

}  // namespace

double estimate_small_set_probability(const FlowModel& model, const SpatialBasis& basis,
                                      const std::shared_ptr<const NoiseSpec>& spec, double gamma, double d0,
                                      double R_star, int samples, std::uint64_t seed) {
  const double a = 0.5 * (1.0 + gamma);
  const int m = model.state_index();
  constexpr int shells = 4;
  const double lo = 0.5 * d0;
  std::vector<int> hits(shells, 0), total(shells, 0);
  std::vector<char> hit(samples, 0);
  std::vector<int> shell_of(samples, 0);
  LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < samples; ++s) guard.run([&] {
    RngStream rng(seed, 0x5a11, s);
    const int sh = s % shells;
    // geometric shells between d0/2 and R_*
    const double r0 = lo * std::pow(R_star / lo, double(sh) / shells);
    const double r1 = lo * std::pow(R_star / lo, double(sh + 1) / shells);
    const double R = rng.uniform(r0, r1);
    SpectralField u = random_field(model, rng, R, 16.0);
    SpectralField up = random_field(model, rng, R * rng.uniform(), 16.0);
    const NoisePath eta = sample_noise_path(spec, rng);
    const double R1 = std::max(sobolev_norm(flow_map(model, basis, u, eta), m),
                               sobolev_norm(flow_map(model, basis, up, eta), m));
    hit[s] = R1 <= a * R;
    shell_of[s] = sh;
  });
  guard.rethrow();
  for (int s = 0; s < samples; ++s) {
    total[shell_of[s]]++;
    hits[shell_of[s]] += hit[s];
  }
  double p = 1.0;
  for (int sh = 0; sh < shells; ++sh)
    if (total[sh] > 0) p = std::min(p, double(hits[sh]) / total[sh]);
  return std::clamp(p, 0.01, 0.99);
}

CouplingCalibration calibrate_coupling(const FlowModel& model, const SpatialBasis& basis,
                                       const std::shared_ptr<const NoiseSpec>& spec,
                                       const CouplingCalibrationConfig& cfg, std::uint64_t seed) {
  CouplingCalibration cal;
  cal.epsilon = cfg.epsilon;
  const int m = model.state_index();
  const StateCoords coords(model.model(), model.grid(), m);
  const int pool_size = std::max({cfg.squeeze_samples, cfg.gain_samples, cfg.dissipativity_samples, 1});
  const std::vector<SpectralField> pool = typical_states(model, basis, spec, pool_size, cfg.warmup_steps, seed);

  // Dissipativity constants from scaled typical states.
  {
    std::vector<std::pair<SpectralField, NoisePath>> samples;
    RngStream rng(seed, 0xd155);
    for (int s = 0; s < cfg.dissipativity_samples; ++s) {
      SpectralField u0 = pool[s % pool.size()];
      u0 *= rng.uniform(0.0, 3.0);
      samples.emplace_back(std::move(u0), sample_noise_path(spec, rng));
    }
    const DissipativityReport rep = dissipativity_check(model, basis, samples);
    cal.gamma_linear = rep.gamma_linear;
    cal.beta_linear = rep.beta_linear;
  }

  // Step 1: (r, M) for the target epsilon at a reference base point.
  RngStream rng(seed, 0xca1b);
  ControlParams params;
  params.projection = cfg.projection;
  params.gram = cfg.gram;
  {
    const NoisePath eta = sample_noise_path(spec, rng);
    const BasePoint base = make_base_point(model, basis, pool[0], eta);
    const TangentOperator A = assemble_A(model, basis, base, -1, params.gram);
    std::vector<Eigen::VectorXd> tests;
    std::vector<double> vnorms;
    for (int t = 0; t < cfg.test_fields; ++t) {
      const SpectralField f = tangent_flow(model, basis, base, unit_direction(model, rng), Eigen::VectorXd());
      tests.push_back(coords.to_vector(f));
      vnorms.push_back(sobolev_norm(f, m + 1));
    }
    cal.inverse = calibrate(A, tests, vnorms, cfg.epsilon, {}, {}, params.projection);
    params.r = cal.inverse.r;
    params.M = cal.inverse.M;
  }

  // Step 2: control gain. Phi is linear in u' - u, so one scale suffices.
  params.delta = std::numeric_limits<double>::infinity();
  {
    std::vector<double> gain(cfg.gain_samples, 0.0);
    const double scale = cfg.delta_max / 10.0;
    LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < cfg.gain_samples; ++s) guard.run([&] {
      RngStream r(seed, 0x6a1, s);
      const SpectralField& u = pool[s % pool.size()];
      const NoisePath eta = sample_noise_path(spec, r);
      SpectralField up = u;
      up.axpy(scale, unit_direction(model, r));
      const ControlContext ctx(model, basis, params, u, eta);
      gain[s] = ctx.phi_raw(up).norm() / scale;
    });
    guard.rethrow();
    params.C_eps = *std::max_element(gain.begin(), gain.end());
  }

  // Step 3: shrink delta until the squeeze passes and C_eps delta <= 1/2.
  double delta = std::min(cfg.delta_max, 0.5 / params.C_eps);
  bool passed = false;
  for (int h = 0; h <= cfg.delta_halvings && !passed; ++h, delta *= 0.5) {
    params.delta = delta;
    if (model.model() == Model::cgl) params.clamp_radius = params.C_eps * delta;
    std::vector<double> ratio(cfg.squeeze_samples, 0.0);
    LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < cfg.squeeze_samples; ++s) guard.run([&] {
      RngStream r(seed, 0x5e0 + h, s);
      const SpectralField& u = pool[s % pool.size()];
      const NoisePath eta = sample_noise_path(spec, r);
      SpectralField up = u;
      up.axpy(delta * (1.0 - r.uniform()), unit_direction(model, r));
      const ControlContext ctx(model, basis, params, u, eta);
      ratio[s] = psi_squeeze(ctx, up).ratio;
    });
    guard.rethrow();
    const double q = quantile(ratio, cfg.squeeze_quantile);
    cal.delta_tried.push_back(delta);
    cal.squeeze_q99.push_back(q);
    if (q <= cfg.squeeze_target) {
      passed = true;
      cal.squeeze_pass_fraction =
          double(std::count_if(ratio.begin(), ratio.end(), [&](double x) { return x <= cfg.squeeze_target; })) /
          ratio.size();
      break;
    }
  }
  delta = params.delta;

  // Step 4: near-branch failure constant at delta/8, delta/4, delta/2.
  const CouplingEngine engine(model, basis, spec, params);
  for (double frac : {0.125, 0.25, 0.5}) {
    const double d = frac * delta;
    std::vector<double> fail(cfg.c1_samples, 0.0);
    LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < cfg.c1_samples; ++s) guard.run([&] {
      RngStream r(seed, 0xc1 + static_cast<std::uint64_t>(frac * 1024), s);
      const SpectralField& u = pool[s % pool.size()];
      SpectralField up = u;
      up.axpy(d, unit_direction(model, r));
      const auto np = engine.near_proposal(u, up, r);
      const SpectralField u1 = flow_map(model, basis, u, np.eta);
      const SpectralField u1p = flow_map(model, basis, up, np.zeta2);
      const bool squeezed = sobolev_norm(u1 - u1p, m) <= 0.5 * d;
      fail[s] = 1.0 - (squeezed ? np.accept : 0.0);
    });
    guard.rethrow();
    cal.c1_distances.push_back(d);
    cal.c1_failure.push_back(std::accumulate(fail.begin(), fail.end(), 0.0) / fail.size());
  }
  for (size_t i = 0; i < cal.c1_distances.size(); ++i)
    cal.C1 = std::max(cal.C1, cal.c1_failure[i] / cal.c1_distances[i]);

  const double two_R0 = 2.0 * cal.beta_linear / (1.0 - cal.gamma_linear);
  params.d0 = std::min({delta, cal.C1 > 0.0 ? 1.0 / (10.0 * cal.C1) : delta, 0.999 * two_R0});
  cal.params = params;

  const double R_star = cfg.R_star_factor * cal.beta_linear / (1.0 - cal.gamma_linear);
  cal.p_small_set = estimate_small_set_probability(model, basis, spec, cal.gamma_linear, params.d0, R_star,
                                                   cfg.p_samples, seed);
  cal.ok = passed && cal.inverse.achieved;
  return cal;
}

}  // namespace mixforge
