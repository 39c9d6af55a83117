#pragma once

// Ornstein-Uhlenbeck semigroup in its Hermite eigenbasis.
//
// Generator L = (sigma^2/2) Laplacian - b x . grad on R^d, invariant density
// phi(x) = (b/(pi sigma^2))^{d/2} exp(-b|x|^2/sigma^2) and orthonormal
// eigenfunctions phi_p(x) = H_p(sqrt(b) x / sigma) / sqrt(p! 2^{|p|}),
// P_t phi_p = e^{-b|p|t} phi_p.
//
// Coefficients are stored for the tensor index set {p : p_k <= M for all k}.

#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "superou/error.hpp"
#include "superou/mechanism.hpp"

namespace superou {

class Philox;

struct OUParams {
  double sigma = 1.0;
  double b = 1.0;
  int d = 1;

  /// Throws DomainError unless sigma > 0, b > 0 and 1 <= d <= 3.
  void validate() const;
  /// Per-axis variance sigma^2 / (2b) of the invariant law.
  double stationary_variance() const { return sigma * sigma / (2.0 * b); }
};

struct MultiIndex {
  std::vector<int> p;

  MultiIndex() = default;
  MultiIndex(std::initializer_list<int> v) : p(v) {}
  explicit MultiIndex(std::vector<int> v) : p(std::move(v)) {}

  int dim() const { return static_cast<int>(p.size()); }
  int order() const;
  bool operator==(const MultiIndex&) const = default;
};

/// Invariant density phi at x.
double phi_density(const OUParams& params, std::span<const double> x);

/// Physicists' Hermite polynomial H_n(u).
double hermite_H(int n, double u);
/// Product of H_{p_k}(x_k) over axes.
double hermite_H(const MultiIndex& p, std::span<const double> x);

/// Normalized eigenfunction phi_p at x.
double phi_p(const OUParams& params, const MultiIndex& p, std::span<const double> x);

/// phi_0(u), ..., phi_M(u) in the scaled variable u = sqrt(b) x / sigma, written
/// to out[0..M] through the orthonormal three-term recurrence.
void phi_row(int M, double u, double* out);

class HermiteCoeffs {
 public:
  HermiteCoeffs() = default;
  HermiteCoeffs(int d, int max_order);

  /// Coefficient vector of value * phi_p.
  static HermiteCoeffs basis(int d, int max_order, const MultiIndex& p, cplx value = 1.0);

  int dim() const { return d_; }
  int max_order() const { return M_; }
  std::size_t size() const { return c_.size(); }

  cplx& operator[](std::size_t flat) { return c_[flat]; }
  const cplx& operator[](std::size_t flat) const { return c_[flat]; }
  cplx& at(const MultiIndex& p);
  cplx at(const MultiIndex& p) const;

  /// |p| for a flat position.
  int order_at(std::size_t flat) const { return order_[flat]; }
  MultiIndex index_at(std::size_t flat) const;
  std::size_t flat_index(const MultiIndex& p) const;

  std::vector<cplx>& data() { return c_; }
  const std::vector<cplx>& data() const { return c_; }

  double max_abs() const;
  bool is_zero() const { return max_abs() == 0.0; }

  HermiteCoeffs& operator+=(const HermiteCoeffs& o);
  HermiteCoeffs& operator-=(const HermiteCoeffs& o);
  HermiteCoeffs& operator*=(cplx s);
  friend HermiteCoeffs operator+(HermiteCoeffs a, const HermiteCoeffs& b) { return a += b; }
  friend HermiteCoeffs operator-(HermiteCoeffs a, const HermiteCoeffs& b) { return a -= b; }
  friend HermiteCoeffs operator*(cplx s, HermiteCoeffs a) { return a *= s; }

  /// Same coefficients embedded in (or truncated to) another order.
  HermiteCoeffs resized(int max_order) const;

 private:
  int d_ = 0;
  int M_ = -1;
  std::vector<cplx> c_;
  std::vector<int> order_;
};

/// Tensor Gauss-Hermite grid with weights summing to one against phi.
class QuadratureGrid {
 public:
  QuadratureGrid(const OUParams& params, int nodes_per_axis);

  const OUParams& params() const { return params_; }
  int dim() const { return params_.d; }
  int nodes_per_axis() const { return n_; }
  std::size_t size() const { return weights_.size(); }

  /// Coordinates of node j (length d).
  std::span<const double> node(std::size_t j) const { return {coords_.data() + j * params_.d, static_cast<std::size_t>(params_.d)}; }
  double weight(std::size_t j) const { return weights_[j]; }
  const std::vector<double>& weights() const { return weights_; }

  const std::vector<double>& axis_nodes() const { return x1_; }
  const std::vector<double>& axis_weights() const { return w1_; }

 private:
  OUParams params_;
  int n_;
  std::vector<double> x1_, w1_;
  std::vector<double> coords_;
  std::vector<double> weights_;
};

/// A quadrature grid together with the nodal <-> coefficient transforms at a
/// fixed order M. Immutable after construction.
class SpectralSpace {
 public:
  /// nodes_per_axis <= 0 selects max(2M + 2, 24).
  SpectralSpace(const OUParams& params, int max_order, int nodes_per_axis = 0);

  const OUParams& params() const { return grid_.params(); }
  const QuadratureGrid& grid() const { return grid_; }
  int max_order() const { return M_; }
  int dim() const { return grid_.dim(); }
  std::size_t num_nodes() const { return grid_.size(); }
  std::size_t num_coeffs() const;

  HermiteCoeffs to_coeffs(const std::vector<cplx>& nodal) const;
  std::vector<cplx> to_nodal(const HermiteCoeffs& c) const;

  /// Sum of c_p phi_p(x) at an arbitrary point.
  cplx evaluate(const HermiteCoeffs& c, std::span<const double> x) const;

 private:
  std::vector<cplx> apply_axes(const std::vector<cplx>& in, bool forward) const;

  QuadratureGrid grid_;
  int M_;
  // analysis[p * nq + j] = w_j phi_p(x_j); synthesis[j * (M+1) + p] = phi_p(x_j)
  std::vector<double> analysis_, synthesis_;
};

enum class GridTag { CharExponent, LaplaceExponent, Generic };

struct GridFunction {
  std::shared_ptr<const SpectralSpace> space;
  std::vector<cplx> values;
  GridTag tag = GridTag::Generic;

  HermiteCoeffs coeffs() const { return space->to_coeffs(values); }
  cplx evaluate(std::span<const double> x) const { return space->evaluate(coeffs(), x); }
  double sup_abs() const;
};

/// <f, phi_p>_phi by Gauss-Hermite quadrature (nodes_per_axis <= 0 picks
/// max(2M + 2, 24)). Warns when the energy in the outermost shell exceeds 1e-6
/// of the total.
HermiteCoeffs project(const OUParams& params, const std::function<cplx(std::span<const double>)>& f,
                      int max_order, Diagnostics* diag = nullptr, int nodes_per_axis = 0);

/// Marker returned by order_kappa for the zero function.
inline constexpr int kOrderInfinite = std::numeric_limits<int>::max();

/// Lowest |p| carrying a coefficient above 1e-12 max|c|.
int order_kappa(const HermiteCoeffs& c);

/// P_t: multiply coefficient p by e^{-b |p| t}.
HermiteCoeffs pt_apply(const OUParams& params, const HermiteCoeffs& c, double t);
/// P^alpha_t = e^{alpha t} P_t.
HermiteCoeffs palpha_apply(const OUParams& params, double alpha, const HermiteCoeffs& c, double t);

/// | |p| b - alpha beta~ | with values below 1e-9 max(1, alpha beta~) snapped to 0.
double spectral_gap(const OUParams& params, const BranchingMechanism& mech, int order);

/// T_t: multiply coefficient p by e^{-| |p| b - alpha beta~ | t}.
HermiteCoeffs Tt_apply(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t);

enum class Regime { Cs, Cc, Cl, Mixed };
std::string to_string(Regime r);

struct RegimeSplit {
  Regime cls = Regime::Mixed;
  HermiteCoeffs small, critical, large;  // |p|b above, equal to, below alpha beta~
};

/// Throws DomainError on the zero function.
RegimeSplit regime_classify(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c);

/// Exact OU transition from x over dt (in place on a d-vector).
void ou_transition_sample(const OUParams& params, std::span<double> x, double dt, Philox& rng);

}  // namespace superou
