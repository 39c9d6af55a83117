#pragma once

// Complex FKPP integral equation for the characteristic exponent,
//   W_t = P^a_t W_0 + int_0^t P^a_{t-s} psi0(-W_s) ds,
// with W_0 = i f for U_t f and W_0 = -f for the Laplace exponent V_t f = -W_t.
//
// March: macro-steps of size dt. Within a step the variation-of-constants
// form is discretized by 4-stage Gauss-Legendre collocation in exponential
// form (P^a applied exactly per Hermite mode, the nonlinear term interpolated
// through the stages) and the stage equations are solved by Picard iteration.
// Nodes default to M + 1 per axis, so the nodal and coefficient forms are
// related by exact interpolation.

#include <array>
#include <memory>
#include <utility>
#include <vector>

#include "superou/error.hpp"
#include "superou/mechanism.hpp"
#include "superou/ou_spectral.hpp"

namespace superou {

struct FkppOptions {
  double steps_per_unit = 32.0;  // used when steps <= 0
  double tol = 1e-10;            // Picard: coefficient sup-difference, relative to max(1, max|c|)
  int max_iter = 50;
  int max_halvings = 4;
  int nodes = 0;                 // Gauss-Hermite nodes per axis, 0 = M + 1
};

class FkppSolution {
 public:
  const std::shared_ptr<const SpectralSpace>& space() const { return space_; }
  double horizon() const { return t_; }
  double step() const { return dt_; }
  int steps() const { return static_cast<int>(states_.size()) - 1; }
  /// Number of times dt was halved after a Picard divergence.
  int halvings() const { return halvings_; }
  /// Largest Re W over all nodes at all step boundaries and stages.
  double max_real_part() const { return max_re_; }
  /// Largest Picard iteration count over the steps.
  int max_iterations() const { return max_iter_; }

  /// W at time s in [0, t] (collocation dense output inside a step).
  HermiteCoeffs at(double s) const;
  HermiteCoeffs final_coeffs() const { return states_.back(); }
  GridFunction final_grid(GridTag tag) const;

 private:
  friend FkppSolution solve_exponent(const OUParams&, const BranchingMechanism&, const HermiteCoeffs&, double, int,
                                     const FkppOptions&);
  std::shared_ptr<const SpectralSpace> space_;
  OUParams params_;
  double alpha_ = 0.0;
  double t_ = 0.0, dt_ = 0.0;
  std::vector<HermiteCoeffs> states_;                  // W at k dt
  std::vector<std::array<HermiteCoeffs, 4>> stage_f_;  // psi0(-W) at the stages of each step
  int halvings_ = 0;
  int max_iter_ = 0;
  double max_re_ = 0.0;
};

/// General march from coefficients w0 of W_0 (order w0.max_order()). steps <= 0
/// selects ceil(steps_per_unit t). Throws NumericalDivergence when Picard still
/// diverges after max_halvings halvings of dt.
FkppSolution solve_exponent(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& w0, double t,
                            int steps = 0, const FkppOptions& opt = {});

/// U_t f as nodal values (tag CharExponent). Warns through diag when
/// Re U > 1e-9 somewhere.
GridFunction solve_U(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                     int steps = 0, Diagnostics* diag = nullptr, const FkppOptions& opt = {});

/// V_t f for f >= 0 (tag LaplaceExponent); negative undershoot above -1e-12 is
/// clipped to 0, anything larger is reported.
GridFunction solve_V(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                     int steps = 0, Diagnostics* diag = nullptr, const FkppOptions& opt = {});

/// Weighted atoms (x_i, w_i) of an initial measure.
struct WeightedPoint {
  std::vector<double> x;
  double w = 1.0;
};

/// exp(sum_i w_i U_t(theta f)(x_i)); warns when an atom lies outside the node hull.
cplx exact_char_fn(const OUParams& params, const BranchingMechanism& mech, const std::vector<WeightedPoint>& mu,
                   const HermiteCoeffs& c, double theta, double t, int steps = 0, Diagnostics* diag = nullptr,
                   const FkppOptions& opt = {});

/// exp(sum_i w_i U(x_i)) for an already solved exponent.
cplx char_fn_from(const FkppSolution& sol, const std::vector<WeightedPoint>& mu, Diagnostics* diag = nullptr);

struct ZDecomposition {
  std::vector<cplx> lhs, rhs;  // nodal U_t - i P^a_t f and Z'_t + Z''_t
  double gap = 0.0;
};

/// U_t f - i P^a_t f against int_0^t P^a_{t-s}(eta (-U_s)^{1+beta} + psi1(-U_s)) ds
/// recomputed from the dense output with 8-point Gauss-Legendre per step.
ZDecomposition z_decomposition_check(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                     double t = 1.0, int steps = 0, const FkppOptions& opt = {});

}  // namespace superou
