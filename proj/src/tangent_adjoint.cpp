#include "mixforge/tangent_adjoint.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "mixforge/parallel.hpp"

namespace mixforge {

namespace {

void check_dxi(const NoiseSpec& spec, const Eigen::VectorXd& dxi) {
  if (dxi.size() != 0 && dxi.size() != spec.dimension())
    throw std::invalid_argument("noise perturbation has wrong length");
}

Eigen::VectorXd make_gram_E(const NoiseSpec& spec, int dim, NoiseGram gram) {
  Eigen::VectorXd g = Eigen::VectorXd::Ones(dim);
  if (gram == NoiseGram::amplitude)
    for (int k = 0; k < dim; ++k) g[k] = std::pow(spec.coordinate_amplitude(k), 2);
  return g;
}

TangentOperator empty_operator(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                               int truncation, NoiseGram gram, int& dim) {
  const NoiseSpec& spec = *base.path.spec;
  if (basis.size() < spec.modes) throw std::invalid_argument("spatial basis smaller than the noise mode count");
  const int full = spec.dimension();
  dim = truncation < 0 ? full : truncation;
  if (dim < 1 || dim > full) throw std::out_of_range("noise truncation out of range");
  const StateCoords coords(model.model(), model.grid(), model.state_index());
  TangentOperator A;
  A.model = model.model();
  A.grid = model.grid();
  A.sobolev_m = model.state_index();
  A.spec = base.path.spec;
  A.u0 = base.u0;
  A.path = base.path;
  A.columns = Eigen::MatrixXd::Zero(coords.dim(), dim);
  A.gram_E = make_gram_E(spec, dim, gram);
  A.gram_H = coords.gram();
  return A;
}

}  // namespace

BasePoint make_base_point(const FlowModel& model, const SpatialBasis& basis, const SpectralField& u0,
                          const NoisePath& path) {
  BasePoint b;
  b.u0 = u0;
  b.path = path;
  b.u1 = flow_map(model, basis, u0, path, &b.traj);
  return b;
}

SpectralField tangent_flow(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           const SpectralField& h, const Eigen::VectorXd& dxi, std::vector<SpectralField>* states) {
  const NoiseSpec& spec = *base.path.spec;
  check_dxi(spec, dxi);
  const bool has_xi = dxi.size() != 0 && dxi.any();
  if (spec.kick_mode) {
    SpectralField v = model.tangent(base.traj, h, Forcing{}, 0, states);
    if (has_xi) v += kick_from_coords(spec, basis, dxi);
    return v;
  }
  Forcing f;
  if (has_xi) f = forcing_from_coords(spec, basis, dxi);
  return model.tangent(base.traj, h, f, 0, states);
}

AdjointResult adjoint_flow(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           const SpectralField& w1) {
  const NoiseSpec& spec = *base.path.spec;
  AdjointResult r;
  r.w = model.adjoint(base.traj, w1, &r.forcing);
  r.noise_gradient = Eigen::VectorXd::Zero(spec.dimension());
  if (spec.kick_mode) {
    for (int i = 0; i < spec.modes; ++i) r.noise_gradient[i] = spec.amplitudes[i] * l2_inner(basis[i], w1);
    return r;
  }
  const int Q = haar_count(spec.max_level);
  const int S = model.substeps();
  const auto idx = haar_indices(spec.max_level);
  // P(i, q): pairing of phi_i with the sensitivity accumulated over piece q.
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(spec.modes, Q);
  for (int n = 0; n < S; ++n)
    for (int i = 0; i < spec.modes; ++i) P(i, n * Q / S) += l2_inner(basis[i], r.forcing[n]);
  for (int k = 0; k < spec.dimension(); ++k) {
    const int i = spec.coordinate_mode(k);
    const HaarIndex hk = idx[spec.coordinate_haar(k)];
    double acc = 0.0;
    for (int q = 0; q < Q; ++q) acc += haar_eval(hk, (q + 0.5) / Q) * P(i, q);
    r.noise_gradient[k] = spec.coordinate_coefficient(k) * acc;
  }
  return r;
}

Eigen::VectorXd TangentOperator::adjoint_apply(const Eigen::VectorXd& w) const {
  return (columns.transpose() * gram_H.cwiseProduct(w)).cwiseQuotient(gram_E);
}

Eigen::MatrixXd TangentOperator::orthonormal() const {
  return gram_H.cwiseSqrt().asDiagonal() * columns * gram_E.cwiseSqrt().cwiseInverse().asDiagonal();
}

void TangentOperator::write_csv(std::ostream& os) const {
  os << "row,col,value\n";
  os.precision(17);
  for (int c = 0; c < columns.cols(); ++c)
    for (int r = 0; r < columns.rows(); ++r)
      if (columns(r, c) != 0.0) os << r << ',' << c << ',' << columns(r, c) << '\n';
}

void TangentOperator::write_gram_csv(std::ostream& os) const {
  os << "space,index,weight\n";
  os.precision(17);
  for (int k = 0; k < gram_E.size(); ++k) os << "E," << k << ',' << gram_E[k] << '\n';
  for (int k = 0; k < gram_H.size(); ++k) os << "H," << k << ',' << gram_H[k] << '\n';
}

TangentOperator assemble_A(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                           int truncation, NoiseGram gram) {
  int dim = 0;
  TangentOperator A = empty_operator(model, basis, base, truncation, gram, dim);
  const NoiseSpec& spec = *base.path.spec;
  const StateCoords coords(model.model(), model.grid(), model.state_index());
  if (spec.kick_mode) {
    for (int k = 0; k < dim; ++k) A.columns.col(k) = coords.to_vector(spec.amplitudes[k] * basis[k]);
    return A;
  }
  const int Q = haar_count(spec.max_level);
  const int modes = std::min(spec.modes, dim);
  const auto idx = haar_indices(spec.max_level);
  const SpectralField zero0 = model.zero_field();
  if (2 * dim <= modes * (Q + 1)) {
    // Few columns (typically scaling functions only): one solve each.
    LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < dim; ++k) guard.run([&] {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(spec.dimension());
      e[k] = 1.0;
      A.columns.col(k) = coords.to_vector(tangent_flow(model, basis, base, zero0, e));
    });
    guard.rethrow();
    return A;
  }
  // Y[i * Q + q] = response to phi_i forced on dyadic piece q only.
  std::vector<Eigen::VectorXd> Y(static_cast<size_t>(modes) * Q);
  const int tasks = modes * Q;
  const SpectralField zero = model.zero_field();
  LoopGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < tasks; ++t) guard.run([&] {
    const int i = t / Q;
    const int q = t % Q;
    Forcing f;
    f.pieces.assign(Q, zero);
    f.pieces[q] = basis[i];
    Y[t] = coords.to_vector(model.tangent(base.traj, zero, f, q));
  });
  guard.rethrow();
  for (int k = 0; k < dim; ++k) {
    const int i = spec.coordinate_mode(k);
    const HaarIndex hk = idx[spec.coordinate_haar(k)];
    const double c = spec.coordinate_coefficient(k);
    for (int q = 0; q < Q; ++q) {
      const double hv = haar_eval(hk, (q + 0.5) / Q);
      if (hv != 0.0) A.columns.col(k) += (c * hv) * Y[static_cast<size_t>(i) * Q + q];
    }
  }
  return A;
}

TangentOperator assemble_A_serial(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                                  int truncation, NoiseGram gram) {
  int dim = 0;
  TangentOperator A = empty_operator(model, basis, base, truncation, gram, dim);
  const NoiseSpec& spec = *base.path.spec;
  const StateCoords coords(model.model(), model.grid(), model.state_index());
  const SpectralField zero = model.zero_field();
  for (int k = 0; k < dim; ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(spec.dimension());
    e[k] = 1.0;
    A.columns.col(k) = coords.to_vector(tangent_flow(model, basis, base, zero, e));
  }
  return A;
}

std::vector<FdRow> fd_check(const FlowModel& model, const SpatialBasis& basis, const BasePoint& base,
                            const SpectralField& h, const Eigen::VectorXd& dxi, const std::vector<double>& eps_list) {
  check_dxi(*base.path.spec, dxi);
  const SpectralField hh = h.empty() ? model.zero_field() : h;
  const SpectralField lin = tangent_flow(model, basis, base, hh, dxi);
  const int m = model.state_index();
  std::vector<FdRow> rows;
  for (double eps : eps_list) {
    SpectralField u = base.u0;
    u.axpy(eps, hh);
    NoisePath p = base.path;
    if (dxi.size() != 0) p.xi += eps * dxi;
    SpectralField diff = flow_map(model, basis, u, p) - base.u1;
    diff.axpy(-eps, lin);
    FdRow r;
    r.eps = eps;
    r.remainder = sobolev_norm(diff, m);
    r.ratio = r.remainder / (eps * eps);
    rows.push_back(r);
  }
  return rows;
}

void write_field_csv(std::ostream& os, const SpectralField& u) {
  const bool vel = u.kind() == FieldKind::velocity2d;
  os << (vel ? "k1,k2,re,im,component\n" : "k1,k2,re,im\n");
  os.precision(17);
  for (int c = 0; c < u.components(); ++c)
    for (const auto& m : u.grid()->retained()) {
      const cplx z = u.comp(c)[m.idx];
      os << m.k1 << ',' << m.k2 << ',' << z.real() << ',' << z.imag();
      if (vel) os << ',' << c;
      os << '\n';
    }
}

}  // namespace mixforge
