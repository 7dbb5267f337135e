#include "mixforge/spectral_field.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

namespace mixforge {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

std::shared_ptr<const Grid> Grid::make(int n, int kmax) {
  if (n < 4 || n % 2 != 0) throw std::invalid_argument("grid size must be even and >= 4");
  if (kmax < 0) kmax = (n - 1) / 3;
  if (kmax > n / 2 - 1) throw std::invalid_argument("dealias radius must be below n/2");
  return std::shared_ptr<const Grid>(new Grid(n, kmax));
}

Grid::Grid(int n, int kmax) : n_(n), kmax_(kmax), mask_(static_cast<size_t>(n) * n, 0) {
  for (int i1 = 0; i1 < n; ++i1) {
    for (int i2 = 0; i2 < n; ++i2) {
      const int k1 = wavenumber(i1);
      const int k2 = wavenumber(i2);
      if (std::abs(k1) <= kmax && std::abs(k2) <= kmax) {
        const int idx = i1 * n + i2;
        retained_.push_back({idx, k1, k2, double(k1 * k1 + k2 * k2), index(-k1, -k2)});
        mask_[idx] = 1;
      }
    }
  }
  std::vector<cplx> a(size()), b(size());
  auto* pa = reinterpret_cast<fftw_complex*>(a.data());
  auto* pb = reinterpret_cast<fftw_complex*>(b.data());
  std::lock_guard<std::mutex> lock(planner_mutex());
  plan_fwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plan_bwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
}

Grid::~Grid() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_bwd_));
}

int Grid::index(int k1, int k2) const {
  const int i1 = ((k1 % n_) + n_) % n_;
  const int i2 = ((k2 % n_) + n_) % n_;
  return i1 * n_ + i2;
}

bool Grid::is_retained(int k1, int k2) const { return std::abs(k1) <= kmax_ && std::abs(k2) <= kmax_; }

void Grid::inverse(const cplx* spec, cplx* phys) const {
  fftw_execute_dft(static_cast<fftw_plan>(plan_bwd_),
                   reinterpret_cast<fftw_complex*>(const_cast<cplx*>(spec)),
                   reinterpret_cast<fftw_complex*>(phys));
}

void Grid::forward(const cplx* phys, cplx* spec) const {
  fftw_execute_dft(static_cast<fftw_plan>(plan_fwd_),
                   reinterpret_cast<fftw_complex*>(const_cast<cplx*>(phys)),
                   reinterpret_cast<fftw_complex*>(spec));
  const double scale = 1.0 / size();
  for (int i = 0; i < size(); ++i) spec[i] *= scale;
}

SpectralField::SpectralField(FieldKind kind, GridPtr grid)
    : kind_(kind), grid_(std::move(grid)), data_(static_cast<size_t>(components()) * grid_->size()) {}

void SpectralField::set_zero() { std::fill(data_.begin(), data_.end(), cplx{}); }

bool SpectralField::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](const cplx& z) { return z == cplx{}; });
}

void SpectralField::truncate() {
  const auto& mask = grid_->retained_mask();
  for (int c = 0; c < components(); ++c) {
    auto v = comp(c);
    for (size_t i = 0; i < v.size(); ++i)
      if (!mask[i]) v[i] = 0.0;
  }
}

namespace {
void check_compatible(const SpectralField& a, const SpectralField& b) {
  if (a.kind() != b.kind() || a.grid() != b.grid())
    throw std::invalid_argument("spectral fields differ in kind or grid");
}
}  // namespace

SpectralField& SpectralField::operator+=(const SpectralField& o) {
  check_compatible(*this, o);
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

SpectralField& SpectralField::operator-=(const SpectralField& o) {
  check_compatible(*this, o);
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

SpectralField& SpectralField::operator*=(double s) {
  for (auto& z : data_) z *= s;
  return *this;
}

void SpectralField::axpy(double a, const SpectralField& x) {
  check_compatible(*this, x);
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
}

double SpectralField::max_abs() const {
  double m = 0.0;
  for (const auto& z : data_) m = std::max(m, std::abs(z));
  return m;
}

SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
SpectralField operator*(double s, SpectralField a) { return a *= s; }

double sobolev_inner(const SpectralField& a, const SpectralField& b, int s) {
  check_compatible(a, b);
  double acc = 0.0;
  for (const auto& m : a.grid()->retained()) {
    const double w = s == 0 ? 1.0 : std::pow(1.0 + m.ksq, s);
    double t = 0.0;
    for (int c = 0; c < a.components(); ++c) t += std::real(std::conj(a.comp(c)[m.idx]) * b.comp(c)[m.idx]);
    acc += w * t;
  }
  return acc;
}

double l2_inner(const SpectralField& a, const SpectralField& b) { return sobolev_inner(a, b, 0); }

double sobolev_norm(const SpectralField& u, int s) {
  double acc = 0.0;
  for (const auto& m : u.grid()->retained()) {
    const double w = s == 0 ? 1.0 : std::pow(1.0 + m.ksq, s);
    for (int c = 0; c < u.components(); ++c) acc += w * std::norm(u.comp(c)[m.idx]);
  }
  return std::sqrt(acc);
}

double divergence_max(const SpectralField& u) {
  if (u.kind() != FieldKind::velocity2d) throw std::invalid_argument("divergence of a non-velocity field");
  double m = 0.0;
  for (const auto& md : u.grid()->retained())
    m = std::max(m, std::abs(double(md.k1) * u.comp(0)[md.idx] + double(md.k2) * u.comp(1)[md.idx]));
  return m;
}

}  // namespace mixforge
