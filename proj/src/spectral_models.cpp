#include "mixforge/spectral_models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace mixforge {

namespace {

constexpr cplx kI(0.0, 1.0);

bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

// Scratch buffers for one integrator invocation; never shared between calls.
struct Scratch {
  explicit Scratch(const Grid& g)
      : n2(g.size()), in(n2), out(n2), spec_a(n2), spec_b(n2), tmp_a(n2), tmp_b(n2), tmp_c(n2), tmp_d(n2) {
    for (auto& r : real) r.assign(n2, 0.0);
  }
  int n2;
  std::vector<cplx> in, out;            // transform staging (in is zero outside retained on inverse)
  std::vector<cplx> spec_a, spec_b;     // spectral temporaries
  std::vector<cplx> tmp_a, tmp_b, tmp_c, tmp_d;
  std::array<std::vector<double>, 8> real;
};

// f + i g = synthesis of F + i G; F and G are spectra of real fields.
void inverse_pair(const Grid& g, const cplx* F, const cplx* G, Scratch& s, double* f, double* gout) {
  for (const auto& m : g.retained()) s.in[m.idx] = F[m.idx] + kI * G[m.idx];
  g.inverse(s.in.data(), s.out.data());
  for (int x = 0; x < s.n2; ++x) {
    f[x] = s.out[x].real();
    gout[x] = s.out[x].imag();
  }
}

// Spectra (on retained modes) of two real grid functions from one transform.
void forward_pair(const Grid& g, const double* f, const double* gin, Scratch& s, cplx* F, cplx* G) {
  for (int x = 0; x < s.n2; ++x) s.in[x] = cplx(f[x], gin[x]);
  g.forward(s.in.data(), s.out.data());
  for (const auto& m : g.retained()) {
    const cplx z = s.out[m.idx];
    const cplx zc = std::conj(s.out[m.conj_idx]);
    F[m.idx] = 0.5 * (z + zc);
    G[m.idx] = -0.5 * kI * (z - zc);
  }
  // Restore the inverse staging invariant: zero outside retained modes.
  std::fill(s.in.begin(), s.in.end(), cplx{});
}

void leray_inplace(const Grid& g, cplx* a1, cplx* a2) {
  for (const auto& m : g.retained()) {
    if (m.ksq == 0.0) {
      a1[m.idx] = 0.0;
      a2[m.idx] = 0.0;
      continue;
    }
    const cplx kd = (double(m.k1) * a1[m.idx] + double(m.k2) * a2[m.idx]) / m.ksq;
    a1[m.idx] -= double(m.k1) * kd;
    a2[m.idx] -= double(m.k2) * kd;
  }
}

// out = Leray( div S ) with S symmetric given by its three spectra.
void divergence_sym(const Grid& g, const cplx* s11, const cplx* s12, const cplx* s22, cplx* out1, cplx* out2) {
  for (const auto& m : g.retained()) {
    out1[m.idx] = kI * (double(m.k1) * s11[m.idx] + double(m.k2) * s12[m.idx]);
    out2[m.idx] = kI * (double(m.k1) * s12[m.idx] + double(m.k2) * s22[m.idx]);
  }
  leray_inplace(g, out1, out2);
}

}  // namespace

FlowConfig FlowConfig::defaults(Model model) {
  FlowConfig c;
  c.model = model;
  c.sobolev_m = model == Model::nse ? 1 : 2;
  return c;
}

void FlowConfig::validate() const {
  if (model == Model::nse && !(nu > 0.0)) throw std::invalid_argument("viscosity must be > 0");
  if (model == Model::cgl) {
    if (!(nu1 > 0.0)) throw std::invalid_argument("nu1 must be > 0");
    if (!(nu2 >= 0.0)) throw std::invalid_argument("nu2 must be >= 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
    if (power_r < 1) throw std::invalid_argument("power_r must be a positive integer");
    // needs m > d/2 + 1 with d = 2
    if (sobolev_m < 2) throw std::invalid_argument("sobolev_m must be >= 2 for cgl");
  }
  if (grid_size < 8 || grid_size % 2 != 0) throw std::invalid_argument("grid_size must be even and >= 8");
  if (!is_power_of_two(substeps)) throw std::invalid_argument("substeps must be a power of two");
  if (sobolev_m < 0) throw std::invalid_argument("sobolev_m must be >= 0");
  if (!(blowup_factor > 0.0)) throw std::invalid_argument("blowup_factor must be > 0");
}

FlowModel::FlowModel(const FlowConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  grid_ = Grid::make(cfg_.grid_size, cfg_.dealias_radius);
  const double h = dt();
  for (const auto& m : grid_->retained()) {
    const cplx L = linear_symbol(m.ksq);
    const cplx e = std::exp(-L * h);
    expo_.push_back(e);
    phi1_.push_back(std::abs(L) < 1e-14 ? cplx(h) : (1.0 - e) / L);
  }
}

cplx FlowModel::linear_symbol(double ksq) const {
  if (cfg_.model == Model::nse) return cfg_.nu * ksq;
  return cplx(cfg_.nu1, cfg_.nu2) * ksq + cfg_.gamma;
}

void FlowModel::check_field(const SpectralField& u) const {
  if (u.kind() != kind()) throw std::invalid_argument("field kind does not match the model");
  if (u.grid() != grid_) throw std::invalid_argument("field lives on a different grid");
}

SpectralField FlowModel::integrate(const SpectralField& u0, const Forcing& forcing, Trajectory* record, int first,
                                   int last, double guard) const {
  check_field(u0);
  if (last < 0) last = cfg_.substeps;
  if (first < 0 || first > last || last > cfg_.substeps) throw std::invalid_argument("bad substep range");
  const int pieces = static_cast<int>(forcing.pieces.size());
  if (pieces > 0 && (cfg_.substeps % pieces != 0))
    throw std::invalid_argument("substeps must be a multiple of the number of Haar pieces");
  const Grid& g = *grid_;
  const auto& ret = g.retained();
  const int n2 = g.size();
  Scratch s(g);
  SpectralField u = u0;
  u.truncate();
  if (record) {
    record->substeps = cfg_.substeps;
    record->first = first;
    record->states.assign(last - first, {});
  }
  std::vector<double> weights;
  if (guard > 0.0)
    for (const auto& m : ret) weights.push_back(std::pow(1.0 + m.ksq, cfg_.sobolev_m));

  for (int n = first; n < last; ++n) {
    const SpectralField* f = pieces > 0 ? &forcing.pieces[piece_of(n, pieces)] : nullptr;
    if (cfg_.model == Model::nse) {
      cplx* u1 = u.comp(0).data();
      cplx* u2 = u.comp(1).data();
      cplx* b1 = s.spec_a.data();
      cplx* b2 = s.spec_b.data();
      if (cfg_.nonlinear) {
        double* p1 = s.real[0].data();
        double* p2 = s.real[1].data();
        inverse_pair(g, u1, u2, s, p1, p2);
        if (record) {
          auto& st = record->states[n - first];
          st.resize(6 * static_cast<size_t>(n2));
          std::copy(p1, p1 + n2, st.begin());
          std::copy(p2, p2 + n2, st.begin() + n2);
          for (const auto& m : ret) {
            s.tmp_a[m.idx] = kI * double(m.k1) * u1[m.idx];
            s.tmp_b[m.idx] = kI * double(m.k2) * u1[m.idx];
            s.tmp_c[m.idx] = kI * double(m.k1) * u2[m.idx];
            s.tmp_d[m.idx] = kI * double(m.k2) * u2[m.idx];
          }
          inverse_pair(g, s.tmp_a.data(), s.tmp_b.data(), s, st.data() + 2 * n2, st.data() + 3 * n2);
          inverse_pair(g, s.tmp_c.data(), s.tmp_d.data(), s, st.data() + 4 * n2, st.data() + 5 * n2);
        }
        double* q11 = s.real[2].data();
        double* q12 = s.real[3].data();
        double* q22 = s.real[4].data();
        double* zero = s.real[5].data();
        for (int x = 0; x < n2; ++x) {
          q11[x] = p1[x] * p1[x];
          q12[x] = p1[x] * p2[x];
          q22[x] = p2[x] * p2[x];
        }
        forward_pair(g, q11, q12, s, s.tmp_a.data(), s.tmp_b.data());
        forward_pair(g, q22, zero, s, s.tmp_c.data(), s.tmp_d.data());
        divergence_sym(g, s.tmp_a.data(), s.tmp_b.data(), s.tmp_c.data(), b1, b2);
      } else {
        if (record) record->states[n - first].clear();
        for (const auto& m : ret) b1[m.idx] = b2[m.idx] = 0.0;
      }
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        cplx r1 = -b1[i], r2 = -b2[i];
        if (f) {
          r1 += f->comp(0)[i];
          r2 += f->comp(1)[i];
        }
        u1[i] = expo_[r] * u1[i] + phi1_[r] * r1;
        u2[i] = expo_[r] * u2[i] + phi1_[r] * r2;
      }
    } else {
      cplx* uh = u.comp(0).data();
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        uh[i] = expo_[r] * uh[i] + (f ? phi1_[r] * f->comp(0)[i] : cplx{});
      }
      if (cfg_.nonlinear) {
        for (const auto& m : ret) s.in[m.idx] = uh[m.idx];
        g.inverse(s.in.data(), s.out.data());
        const int r = cfg_.power_r;
        const double h = dt();
        std::vector<double>* st = record ? &record->states[n - first] : nullptr;
        if (st) st->resize(5 * static_cast<size_t>(n2));
        for (int x = 0; x < n2; ++x) {
          const cplx y = s.out[x];
          const double ay2 = std::norm(y);
          const double theta = h * (r == 1 ? ay2 : std::pow(ay2, r));
          const cplx rot = std::polar(1.0, -theta);
          if (st) {
            // y, e^{-i theta} and the weight of Re(conj(y) z) in the linearization
            double* q = st->data() + 5 * x;
            q[0] = y.real();
            q[1] = y.imag();
            q[2] = rot.real();
            q[3] = rot.imag();
            q[4] = 2.0 * h * (r == 1 ? 1.0 : r * std::pow(ay2, r - 1));
          }
          s.out[x] = y * rot;
        }
        g.forward(s.out.data(), s.tmp_a.data());
        for (const auto& m : ret) uh[m.idx] = s.tmp_a[m.idx];
      } else if (record) {
        record->states[n - first].clear();
      }
    }
    if (guard > 0.0) {
      double acc = 0.0;
      for (size_t r = 0; r < ret.size(); ++r)
        for (int c = 0; c < u.components(); ++c) acc += weights[r] * std::norm(u.comp(c)[ret[r].idx]);
      const double nrm = std::sqrt(acc);
      if (!(nrm <= guard)) throw BlowUpError(n, nrm);
    }
  }
  return u;
}

SpectralField FlowModel::tangent(const Trajectory& traj, const SpectralField& h, const Forcing& xi,
                                 int first_nonzero_piece, std::vector<SpectralField>* states) const {
  if (traj.substeps != cfg_.substeps || traj.first != 0 || static_cast<int>(traj.states.size()) != cfg_.substeps)
    throw std::invalid_argument("tangent: trajectory schedule does not match the flow configuration");
  const Grid& g = *grid_;
  const auto& ret = g.retained();
  const int n2 = g.size();
  const int pieces = static_cast<int>(xi.pieces.size());
  if (pieces > 0 && cfg_.substeps % pieces != 0) throw std::invalid_argument("tangent: forcing pieces misaligned");
  Scratch s(g);
  SpectralField v = h.empty() ? zero_field() : h;
  check_field(v);
  v.truncate();
  int start = 0;
  if (pieces > 0 && first_nonzero_piece > 0 && v.is_zero()) start = first_nonzero_piece * cfg_.substeps / pieces;
  if (states) {
    states->assign(start + 1, v);
    states->reserve(cfg_.substeps + 1);
  }

  for (int n = start; n < cfg_.substeps; ++n) {
    const SpectralField* f = pieces > 0 ? &xi.pieces[piece_of(n, pieces)] : nullptr;
    const auto& st = traj.states[n];
    if (cfg_.model == Model::nse) {
      cplx* v1 = v.comp(0).data();
      cplx* v2 = v.comp(1).data();
      cplx* b1 = s.spec_a.data();
      cplx* b2 = s.spec_b.data();
      if (cfg_.nonlinear) {
        const double* p1 = st.data();
        const double* p2 = st.data() + n2;
        double* w1 = s.real[0].data();
        double* w2 = s.real[1].data();
        inverse_pair(g, v1, v2, s, w1, w2);
        double* q11 = s.real[2].data();
        double* q12 = s.real[3].data();
        double* q22 = s.real[4].data();
        for (int x = 0; x < n2; ++x) {
          q11[x] = 2.0 * p1[x] * w1[x];
          q12[x] = p1[x] * w2[x] + p2[x] * w1[x];
          q22[x] = 2.0 * p2[x] * w2[x];
        }
        forward_pair(g, q11, q12, s, s.tmp_a.data(), s.tmp_b.data());
        forward_pair(g, q22, s.real[5].data(), s, s.tmp_c.data(), s.tmp_d.data());
        divergence_sym(g, s.tmp_a.data(), s.tmp_b.data(), s.tmp_c.data(), b1, b2);
      } else {
        for (const auto& m : ret) b1[m.idx] = b2[m.idx] = 0.0;
      }
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        cplx r1 = -b1[i], r2 = -b2[i];
        if (f) {
          r1 += f->comp(0)[i];
          r2 += f->comp(1)[i];
        }
        v1[i] = expo_[r] * v1[i] + phi1_[r] * r1;
        v2[i] = expo_[r] * v2[i] + phi1_[r] * r2;
      }
    } else {
      cplx* vh = v.comp(0).data();
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        vh[i] = expo_[r] * vh[i] + (f ? phi1_[r] * f->comp(0)[i] : cplx{});
      }
      if (cfg_.nonlinear) {
        for (const auto& m : ret) s.in[m.idx] = vh[m.idx];
        g.inverse(s.in.data(), s.out.data());
        for (int x = 0; x < n2; ++x) {
          const double* q = st.data() + 5 * x;
          const cplx y(q[0], q[1]);
          const cplx z = s.out[x];
          const double re = q[0] * z.real() + q[1] * z.imag();
          s.out[x] = cplx(q[2], q[3]) * (z - kI * (q[4] * re) * y);
        }
        g.forward(s.out.data(), s.tmp_a.data());
        for (const auto& m : ret) vh[m.idx] = s.tmp_a[m.idx];
      }
    }
    if (states) states->push_back(v);
  }
  return v;
}

std::vector<SpectralField> FlowModel::adjoint(const Trajectory& traj, const SpectralField& w1,
                                              std::vector<SpectralField>* forcing_sensitivity) const {
  if (traj.substeps != cfg_.substeps || traj.first != 0 || static_cast<int>(traj.states.size()) != cfg_.substeps)
    throw std::invalid_argument("adjoint: trajectory schedule does not match the flow configuration");
  check_field(w1);
  const Grid& g = *grid_;
  const auto& ret = g.retained();
  const int n2 = g.size();
  const int S = cfg_.substeps;
  Scratch s(g);
  std::vector<SpectralField> w(S + 1);
  w[S] = w1;
  w[S].truncate();
  if (forcing_sensitivity) forcing_sensitivity->assign(S, SpectralField{});

  for (int n = S - 1; n >= 0; --n) {
    const auto& st = traj.states[n];
    const SpectralField& wn1 = w[n + 1];
    SpectralField wn = zero_field();
    if (cfg_.model == Model::nse) {
      // a = phi1 w^{n+1};  w^n = E w^{n+1} - L_u^* a
      SpectralField a = zero_field();
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        a.comp(0)[i] = phi1_[r] * wn1.comp(0)[i];
        a.comp(1)[i] = phi1_[r] * wn1.comp(1)[i];
      }
      cplx* l1 = s.spec_a.data();
      cplx* l2 = s.spec_b.data();
      if (cfg_.nonlinear) {
        const double* p1 = st.data();
        const double* p2 = st.data() + n2;
        const double* d1u1 = st.data() + 2 * n2;
        const double* d2u1 = st.data() + 3 * n2;
        const double* d1u2 = st.data() + 4 * n2;
        const double* d2u2 = st.data() + 5 * n2;
        double* a1 = s.real[0].data();
        double* a2 = s.real[1].data();
        inverse_pair(g, a.comp(0).data(), a.comp(1).data(), s, a1, a2);
        double* t11 = s.real[2].data();
        double* t21 = s.real[3].data();
        double* t12 = s.real[4].data();
        double* t22 = s.real[5].data();
        double* g1 = s.real[6].data();
        double* g2 = s.real[7].data();
        for (int x = 0; x < n2; ++x) {
          t11[x] = p1[x] * a1[x];
          t21[x] = p2[x] * a1[x];
          t12[x] = p1[x] * a2[x];
          t22[x] = p2[x] * a2[x];
          g1[x] = d1u1[x] * a1[x] + d1u2[x] * a2[x];
          g2[x] = d2u1[x] * a1[x] + d2u2[x] * a2[x];
        }
        std::vector<cplx>& T11 = s.tmp_a;
        std::vector<cplx>& T21 = s.tmp_b;
        std::vector<cplx>& T12 = s.tmp_c;
        std::vector<cplx>& T22 = s.tmp_d;
        forward_pair(g, t11, t21, s, T11.data(), T21.data());
        forward_pair(g, t12, t22, s, T12.data(), T22.data());
        std::vector<cplx> G1(n2), G2(n2);
        forward_pair(g, g1, g2, s, G1.data(), G2.data());
        for (const auto& m : ret) {
          const int i = m.idx;
          l1[i] = -kI * (double(m.k1) * T11[i] + double(m.k2) * T21[i]) + G1[i];
          l2[i] = -kI * (double(m.k1) * T12[i] + double(m.k2) * T22[i]) + G2[i];
        }
        leray_inplace(g, l1, l2);
      } else {
        for (const auto& m : ret) l1[m.idx] = l2[m.idx] = 0.0;
      }
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        wn.comp(0)[i] = expo_[r] * wn1.comp(0)[i] - l1[i];
        wn.comp(1)[i] = expo_[r] * wn1.comp(1)[i] - l2[i];
      }
      if (forcing_sensitivity) (*forcing_sensitivity)[n] = std::move(a);
    } else {
      SpectralField b = zero_field();
      if (cfg_.nonlinear) {
        for (const auto& m : ret) s.in[m.idx] = wn1.comp(0)[m.idx];
        g.inverse(s.in.data(), s.out.data());
        for (int x = 0; x < n2; ++x) {
          const double* q = st.data() + 5 * x;
          const cplx y(q[0], q[1]);
          const cplx wp = cplx(q[2], -q[3]) * s.out[x];
          s.out[x] = wp - q[4] * (q[0] * wp.imag() - q[1] * wp.real()) * y;
        }
        g.forward(s.out.data(), s.tmp_a.data());
        for (const auto& m : ret) b.comp(0)[m.idx] = s.tmp_a[m.idx];
      } else {
        b = wn1;
      }
      SpectralField sens = zero_field();
      for (size_t r = 0; r < ret.size(); ++r) {
        const int i = ret[r].idx;
        wn.comp(0)[i] = std::conj(expo_[r]) * b.comp(0)[i];
        sens.comp(0)[i] = std::conj(phi1_[r]) * b.comp(0)[i];
      }
      if (forcing_sensitivity) (*forcing_sensitivity)[n] = std::move(sens);
    }
    w[n] = std::move(wn);
  }
  return w;
}

namespace {

// Copy retained coefficients of u onto a (finer) grid with the same kmax.
SpectralField regrid(const SpectralField& u, const GridPtr& target) {
  SpectralField out(u.kind(), target);
  for (const auto& m : u.grid()->retained())
    for (int c = 0; c < u.components(); ++c) out.comp(c)[target->index(m.k1, m.k2)] = u.comp(c)[m.idx];
  return out;
}

GridPtr quadrature_grid(const Grid& g, int degree) {
  int n = degree * g.kmax() + 2;
  if (n % 2) ++n;
  n = std::max(n, g.n());
  return Grid::make(n, g.kmax());
}

}  // namespace

SpectralField FlowModel::nonlinearity(const SpectralField& u) const {
  check_field(u);
  const Grid& g = *grid_;
  if (cfg_.model == Model::nse) {
    Scratch s(g);
    SpectralField out = zero_field();
    double* p1 = s.real[0].data();
    double* p2 = s.real[1].data();
    inverse_pair(g, u.comp(0).data(), u.comp(1).data(), s, p1, p2);
    double* q11 = s.real[2].data();
    double* q12 = s.real[3].data();
    double* q22 = s.real[4].data();
    for (int x = 0; x < g.size(); ++x) {
      q11[x] = p1[x] * p1[x];
      q12[x] = p1[x] * p2[x];
      q22[x] = p2[x] * p2[x];
    }
    forward_pair(g, q11, q12, s, s.tmp_a.data(), s.tmp_b.data());
    forward_pair(g, q22, s.real[5].data(), s, s.tmp_c.data(), s.tmp_d.data());
    divergence_sym(g, s.tmp_a.data(), s.tmp_b.data(), s.tmp_c.data(), out.comp(0).data(), out.comp(1).data());
    return out;
  }
  // Products of degree 2r+1 are resolved exactly on the padded grid.
  const GridPtr fine = quadrature_grid(g, 2 * cfg_.power_r + 2);
  SpectralField uf = regrid(u, fine);
  std::vector<cplx> phys(fine->size()), spec(fine->size());
  fine->inverse(uf.comp(0).data(), phys.data());
  for (auto& z : phys) z = cfg_.gamma * z + kI * std::pow(std::norm(z), cfg_.power_r) * z;
  fine->forward(phys.data(), spec.data());
  SpectralField out = zero_field();
  for (const auto& m : g.retained()) out.comp(0)[m.idx] = spec[fine->index(m.k1, m.k2)];
  return out;
}

double FlowModel::sup_norm(const SpectralField& u) const {
  check_field(u);
  const GridPtr fine = quadrature_grid(*grid_, 2);
  SpectralField uf = regrid(u, fine);
  const int n2 = fine->size();
  std::vector<std::vector<cplx>> phys(u.components(), std::vector<cplx>(n2));
  for (int c = 0; c < u.components(); ++c) fine->inverse(uf.comp(c).data(), phys[c].data());
  double best = 0.0;
  for (int x = 0; x < n2; ++x) {
    double a = 0.0;
    for (int c = 0; c < u.components(); ++c) a += u.kind() == FieldKind::velocity2d ? std::pow(phys[c][x].real(), 2) : std::norm(phys[c][x]);
    best = std::max(best, std::sqrt(a));
  }
  return best;
}

SpectralField leray_project(const SpectralField& u) {
  if (u.kind() != FieldKind::velocity2d) throw std::invalid_argument("leray_project requires a velocity field");
  SpectralField out = u;
  leray_inplace(*u.grid(), out.comp(0).data(), out.comp(1).data());
  return out;
}

double blowup_guard(const FlowModel& model, const SpectralField& u0, const NoiseSpec& spec) {
  return model.config().blowup_factor * (sobolev_norm(u0, model.state_index()) + spec.radius() + 1.0);
}

SpectralField flow_map(const FlowModel& model, const SpatialBasis& basis, const SpectralField& u0,
                       const NoisePath& path, Trajectory* record) {
  const NoiseSpec& spec = *path.spec;
  const double guard = blowup_guard(model, u0, spec);
  if (spec.kick_mode) {
    SpectralField u = model.integrate(u0, Forcing{}, record, 0, -1, guard);
    u += kick_from_coords(spec, basis, path.xi);
    return u;
  }
  return model.integrate(u0, forcing_from_path(path, basis), record, 0, -1, guard);
}

DissipativityReport dissipativity_check(const FlowModel& model, const SpatialBasis& basis,
                                        const std::vector<std::pair<SpectralField, NoisePath>>& samples) {
  DissipativityReport rep;
  const FlowConfig& cfg = model.config();
  const int m = model.state_index();
  rep.samples = static_cast<int>(samples.size());
  if (cfg.model == Model::nse) {
    const double decay = std::exp(-cfg.nu);
    rep.gamma_linear = std::exp(-0.5 * cfg.nu);
    for (const auto& [u0, path] : samples) {
      const double n0 = sobolev_norm(u0, m);
      const SpectralField u1 = flow_map(model, basis, u0, path);
      rep.beta = std::max(rep.beta, std::pow(sobolev_norm(u1, m), 2) - decay * n0 * n0);
      if (n0 > 0.0) {
        const SpectralField z = model.integrate(u0, Forcing{});
        const double ratio = sobolev_norm(z, m) / n0;
        rep.max_zero_noise_ratio = std::max(rep.max_zero_noise_ratio, ratio);
        if (ratio > rep.gamma_linear * (1.0 + 1e-12)) ++rep.violations;
      }
    }
    rep.beta_linear = std::sqrt(rep.beta);
  } else {
    const double l2_decay = std::exp(-cfg.gamma);
    rep.gamma_linear = std::exp(-0.5 * cfg.gamma);
    for (const auto& [u0, path] : samples) {
      const double n0 = sobolev_norm(u0, m);
      const SpectralField u1 = flow_map(model, basis, u0, path);
      rep.beta_linear = std::max(rep.beta_linear, sobolev_norm(u1, m) - rep.gamma_linear * n0);
      const double l0 = sobolev_norm(u0, 0);
      if (l0 > 0.0) {
        const SpectralField z = model.integrate(u0, Forcing{});
        const double ratio = sobolev_norm(z, 0) / l0;
        rep.max_zero_noise_ratio = std::max(rep.max_zero_noise_ratio, ratio);
        if (ratio > l2_decay * (1.0 + 1e-12)) ++rep.violations;
      }
    }
    rep.beta = rep.beta_linear * rep.beta_linear;
  }
  return rep;
}

double hamiltonian_monitor(const FlowModel& model, const SpectralField& u) {
  if (model.model() != Model::cgl) throw std::invalid_argument("hamiltonian_monitor requires the cgl model");
  const double area = 4.0 * M_PI * M_PI;
  const int r = model.config().power_r;
  double grad = 0.0;
  for (const auto& m : u.grid()->retained()) grad += m.ksq * std::norm(u.comp(0)[m.idx]);
  const GridPtr fine = quadrature_grid(*u.grid(), 2 * r + 2);
  SpectralField uf = regrid(u, fine);
  std::vector<cplx> phys(fine->size());
  fine->inverse(uf.comp(0).data(), phys.data());
  double pot = 0.0;
  for (const auto& z : phys) pot += std::pow(std::norm(z), r + 1);
  pot /= fine->size();
  return area * (0.5 * grad + pot / (2.0 * r + 2.0));
}

SpectralField random_field(const FlowModel& model, RngStream& rng, double norm, double kmax_sq) {
  const StateCoords coords(model.model(), model.grid(), model.state_index());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(coords.dim());
  for (int j = 0; j < coords.dim(); ++j) {
    const auto [k1, k2] = coords.wavevector(j);
    const double ksq = double(k1 * k1 + k2 * k2);
    if (ksq > kmax_sq) continue;
    if (model.model() == Model::nse && ksq < 1.0) continue;
    x[j] = rng.normal() / std::sqrt(coords.gram()[j]);
  }
  SpectralField u = coords.from_vector(x);
  const double cur = sobolev_norm(u, model.state_index());
  if (cur > 0.0) u *= norm / cur;
  return u;
}

}  // namespace mixforge
