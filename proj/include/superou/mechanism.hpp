#pragma once

// Branching mechanism psi(z) = -alpha z + rho z^2 + eta z^{1+beta}
// (pure stable Levy tail plus an optional quadratic perturbation), evaluated
// on the closed right half-plane.

#include <complex>
#include <functional>

namespace superou {

using cplx = std::complex<double>;

enum class LevyTail { PureStable, StablePlusQuadratic };

/// Principal-branch z^{1+beta} on Re z >= 0 with 0^{1+beta} = 0.
/// Throws DomainError for Re z < 0.
cplx cpow_one_plus_beta(cplx z, double beta);

class BranchingMechanism {
 public:
  /// Throws DomainError unless alpha > 0, eta > 0, 0 < beta < 1, rho >= 0.
  BranchingMechanism(double alpha, double rho, double eta, double beta);

  static BranchingMechanism pure_stable(double alpha, double eta, double beta) {
    return {alpha, 0.0, eta, beta};
  }

  double alpha() const { return alpha_; }
  double rho() const { return rho_; }
  double eta() const { return eta_; }
  double beta() const { return beta_; }
  /// beta / (1 + beta)
  double beta_tilde() const { return beta_ / (1.0 + beta_); }
  LevyTail tail() const { return rho_ == 0.0 ? LevyTail::PureStable : LevyTail::StablePlusQuadratic; }
  bool is_pure_stable() const { return tail() == LevyTail::PureStable; }

  cplx psi(cplx z) const;
  /// psi + alpha z
  cplx psi0(cplx z) const;
  /// psi minus its stable part -alpha z + eta z^{1+beta}
  cplx psi1(cplx z) const;
  cplx dpsi(cplx z) const;

  double psi(double z) const { return psi(cplx(z, 0.0)).real(); }
  double dpsi(double z) const { return dpsi(cplx(z, 0.0)).real(); }

 private:
  double alpha_;
  double rho_;
  double eta_;
  double beta_;
};

struct GreysConditionResult {
  bool holds = false;
  double z_star = 0.0;        // psi > 0 on (z_star, inf)
  double tail_integral = 0.0; // integral of 1/psi over (z_star, inf)
  bool converged = false;
};

/// Grey's condition for an arbitrary real mechanism given as a callable.
/// `scale` sets the initial bracket for the search of z_star.
GreysConditionResult greys_condition_check(const std::function<double(double)>& psi,
                                           double scale = 1.0);
GreysConditionResult greys_condition_check(const BranchingMechanism& m);

/// Largest root of psi by bracketing and bisection (relative tolerance 1e-12).
/// Throws NumericalDivergence if no sign change is found below `bracket_limit`.
double largest_root(const BranchingMechanism& m, double bracket_limit = 1e12);

/// (alpha / eta)^{1/beta}; the largest root when the tail is pure stable.
double largest_root_closed_form(const BranchingMechanism& m);

}  // namespace superou
