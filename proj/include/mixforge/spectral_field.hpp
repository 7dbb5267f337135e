#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace mixforge {

using cplx = std::complex<double>;

/// A retained Fourier mode of the truncated grid.
struct Mode {
  int idx;       // flat index into the N x N coefficient array
  int k1;
  int k2;
  double ksq;    // |k|^2
  int conj_idx;  // flat index of -k
};

/// Periodic N x N grid on the 2pi-torus with a square dealiasing truncation
/// |k_1|, |k_2| <= kmax. Owns the FFT plans; transforms are safe to call
/// concurrently from several threads.
class Grid {
 public:
  /// kmax < 0 selects the 2/3 rule: the largest kmax with 3 kmax < n.
  static std::shared_ptr<const Grid> make(int n, int kmax = -1);

  ~Grid();
  Grid(const Grid&) = delete;
  Grid& operator=(const Grid&) = delete;

  int n() const { return n_; }
  int kmax() const { return kmax_; }
  int size() const { return n_ * n_; }
  int wavenumber(int i) const { return i <= n_ / 2 ? i : i - n_; }
  int index(int k1, int k2) const;
  bool is_retained(int k1, int k2) const;

  /// Retained modes including k = 0, ordered by flat index.
  const std::vector<Mode>& retained() const { return retained_; }
  /// Mask over the flat index: true where the mode is retained.
  const std::vector<char>& retained_mask() const { return mask_; }

  /// Synthesis u(x_j) = sum_k c_k exp(i k.x_j), no scaling.
  void inverse(const cplx* spec, cplx* phys) const;
  /// Analysis c_k = N^-2 sum_j u(x_j) exp(-i k.x_j).
  void forward(const cplx* phys, cplx* spec) const;

 private:
  Grid(int n, int kmax);
  int n_;
  int kmax_;
  std::vector<Mode> retained_;
  std::vector<char> mask_;
  void* plan_fwd_ = nullptr;
  void* plan_bwd_ = nullptr;
};

using GridPtr = std::shared_ptr<const Grid>;

enum class FieldKind { velocity2d, complex_scalar };

/// Fourier-coefficient representation of a field on the 2-torus. Velocity
/// fields carry two components, complex scalars one. Coefficients outside
/// the retained set are kept at exactly zero by every operation here.
class SpectralField {
 public:
  SpectralField() = default;
  SpectralField(FieldKind kind, GridPtr grid);

  FieldKind kind() const { return kind_; }
  const GridPtr& grid() const { return grid_; }
  int components() const { return kind_ == FieldKind::velocity2d ? 2 : 1; }
  bool empty() const { return !grid_; }

  std::span<cplx> comp(int c) { return {data_.data() + static_cast<size_t>(c) * grid_->size(), static_cast<size_t>(grid_->size())}; }
  std::span<const cplx> comp(int c) const {
    return {data_.data() + static_cast<size_t>(c) * grid_->size(), static_cast<size_t>(grid_->size())};
  }
  cplx& at(int c, int k1, int k2) { return comp(c)[grid_->index(k1, k2)]; }
  const cplx& at(int c, int k1, int k2) const { return comp(c)[grid_->index(k1, k2)]; }

  std::vector<cplx>& data() { return data_; }
  const std::vector<cplx>& data() const { return data_; }

  void set_zero();
  bool is_zero() const;
  /// Zero every coefficient outside the retained set.
  void truncate();

  SpectralField& operator+=(const SpectralField& o);
  SpectralField& operator-=(const SpectralField& o);
  SpectralField& operator*=(double s);
  /// this += a * x
  void axpy(double a, const SpectralField& x);

  double max_abs() const;

 private:
  FieldKind kind_ = FieldKind::velocity2d;
  GridPtr grid_;
  std::vector<cplx> data_;
};

SpectralField operator+(SpectralField a, const SpectralField& b);
SpectralField operator-(SpectralField a, const SpectralField& b);
SpectralField operator*(double s, SpectralField a);

/// Real L2 pairing Re sum_k conj(a_k) b_k over all components; equals
/// (2pi)^-2 times the integral of a.b over the torus.
double l2_inner(const SpectralField& a, const SpectralField& b);

/// Sobolev pairing with weights (1 + |k|^2)^s.
double sobolev_inner(const SpectralField& a, const SpectralField& b, int s);

/// (sum_k (1 + |k|^2)^s |u_k|^2)^(1/2), both components for velocity fields.
double sobolev_norm(const SpectralField& u, int s);

/// max_k |k . u_k| for velocity fields.
double divergence_max(const SpectralField& u);

}  // namespace mixforge
