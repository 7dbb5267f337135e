#include "mixforge/state_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace mixforge {

std::string to_string(Model m) { return m == Model::nse ? "nse" : "cgl"; }

Model parse_model(const std::string& s) {
  if (s == "nse") return Model::nse;
  if (s == "cgl") return Model::cgl;
  throw std::invalid_argument("unknown model '" + s + "' (expected nse or cgl)");
}

namespace {

bool upper_half(int k1, int k2) { return k2 > 0 || (k2 == 0 && k1 > 0); }

// Retained modes used as coordinates, ordered by |k|^2 then (k2, k1).
std::vector<Mode> coordinate_modes(Model model, const Grid& grid) {
  std::vector<Mode> out;
  for (const auto& m : grid.retained()) {
    if (model == Model::nse && !upper_half(m.k1, m.k2)) continue;
    out.push_back(m);
  }
  std::sort(out.begin(), out.end(), [](const Mode& a, const Mode& b) {
    if (a.ksq != b.ksq) return a.ksq < b.ksq;
    if (a.k2 != b.k2) return a.k2 < b.k2;
    return a.k1 < b.k1;
  });
  return out;
}

std::array<double, 2> perp_unit(int k1, int k2) {
  const double n = std::sqrt(double(k1 * k1 + k2 * k2));
  return {-k2 / n, k1 / n};
}

}  // namespace

int SpatialBasis::capacity(Model model, const Grid& grid) {
  return 2 * static_cast<int>(coordinate_modes(model, grid).size());
}

SpatialBasis::SpatialBasis(Model model, GridPtr grid, int sobolev_m, int count) : model_(model), m_(sobolev_m) {
  const auto modes = coordinate_modes(model, *grid);
  if (count < 1 || count > 2 * static_cast<int>(modes.size()))
    throw std::invalid_argument("spatial basis size out of range for this grid");
  const cplx I(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const Mode& md = modes[i / 2];
    const int phase = i % 2;
    const double w = std::pow(1.0 + md.ksq, sobolev_m);
    SpectralField f(field_kind(model), grid);
    if (model == Model::nse) {
      const auto e = perp_unit(md.k1, md.k2);
      const double a = 1.0 / std::sqrt(2.0 * w);
      const cplx ck = phase == 0 ? cplx(a) : -I * a;
      for (int c = 0; c < 2; ++c) {
        f.comp(c)[md.idx] = ck * e[c];
        f.comp(c)[md.conj_idx] = std::conj(ck) * e[c];
      }
    } else {
      f.comp(0)[md.idx] = (phase == 0 ? cplx(1.0) : I) / std::sqrt(w);
    }
    modes_.push_back({md.k1, md.k2, phase});
    fields_.push_back(std::move(f));
  }
}

StateCoords::StateCoords(Model model, GridPtr grid, int sobolev_m)
    : model_(model), grid_(std::move(grid)), modes_(coordinate_modes(model, *grid_)) {
  gram_.resize(2 * static_cast<Eigen::Index>(modes_.size()));
  for (size_t j = 0; j < modes_.size(); ++j) {
    double w = std::pow(1.0 + modes_[j].ksq, sobolev_m);
    if (model == Model::nse) w *= 2.0;
    gram_[2 * j] = w;
    gram_[2 * j + 1] = w;
  }
}

Eigen::VectorXd StateCoords::to_vector(const SpectralField& u) const {
  if (u.kind() != field_kind(model_)) throw std::invalid_argument("field kind does not match coordinates");
  Eigen::VectorXd x(dim());
  for (size_t j = 0; j < modes_.size(); ++j) {
    const Mode& md = modes_[j];
    cplx a;
    if (model_ == Model::nse) {
      const auto e = perp_unit(md.k1, md.k2);
      a = e[0] * u.comp(0)[md.idx] + e[1] * u.comp(1)[md.idx];
    } else {
      a = u.comp(0)[md.idx];
    }
    x[2 * j] = a.real();
    x[2 * j + 1] = a.imag();
  }
  return x;
}

SpectralField StateCoords::from_vector(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("coordinate vector has wrong length");
  SpectralField u(field_kind(model_), grid_);
  for (size_t j = 0; j < modes_.size(); ++j) {
    const Mode& md = modes_[j];
    const cplx a(x[2 * j], x[2 * j + 1]);
    if (model_ == Model::nse) {
      const auto e = perp_unit(md.k1, md.k2);
      for (int c = 0; c < 2; ++c) {
        u.comp(c)[md.idx] = a * e[c];
        u.comp(c)[md.conj_idx] = std::conj(a) * e[c];
      }
    } else {
      u.comp(0)[md.idx] = a;
    }
  }
  return u;
}

}  // namespace mixforge
