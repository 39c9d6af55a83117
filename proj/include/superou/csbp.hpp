#pragma once

// Total-mass continuous-state branching process Y with branching mechanism psi.
// E_x exp(-lambda Y_t) = exp(-x v_t(lambda)), v solves dv/dt = -psi(v), v_0 = lambda.

#include <cstdint>
#include <memory>
#include <vector>


#include "superou/mechanism.hpp"
#include "superou/pchip.hpp"

namespace superou {

class Philox;

struct CSBPState {
  double mass = 0.0;
  double time = 0.0;
};

/// Closed form for the pure stable mechanism, ODE integration otherwise.
double v_t(const BranchingMechanism& m, double lambda, double t);
/// Dormand-Prince integration of dv/dt = -psi(v) (relative tolerance rtol).
double v_t_ode(const BranchingMechanism& m, double lambda, double t, double rtol = 1e-12);

/// lim_{lambda -> inf} v_t(lambda); P_x(Y_t = 0) = exp(-x vbar_t).
double vbar_t(const BranchingMechanism& m, double t);
/// vbar_t from int_{vbar_t}^inf dz / psi(z) = t by bisection (any mechanism).
double vbar_t_numeric(const BranchingMechanism& m, double t);

/// exp(-x vbar).
double extinction_prob(const BranchingMechanism& m, double x);

// Law of the normalized family mass zeta of the pure stable CSBP transition:
// P(zeta > x) = G(x) with int_0^inf e^{-ux} G(x) dx = (1 + u^beta)^{-1/beta} and
// E zeta = 1. Over a step dt, Y_dt = s * (zeta_1 + ... + zeta_N) with
// N ~ Poisson(x vbar_dt) and s = ((eta/alpha)(e^{alpha beta dt} - 1))^{1/beta}.
class FamilyMassTable {
 public:
  /// beta in (0, 1]; beta = 1 gives the unit exponential law.
  explicit FamilyMassTable(double beta, int points = 4096);

  /// Process-wide cached table for beta (thread safe).
  static std::shared_ptr<const FamilyMassTable> shared(double beta);

  double beta() const { return beta_; }
  double x_lo() const { return x_lo_; }
  double x_hi() const { return x_hi_; }

  /// G(x) from the Prabhakar series, the fixed Talbot contour, or the large-x
  /// expansion (long double internally).
  double tail_exact(double x) const;
  /// G(x) from the table, with the small- and large-x asymptotics outside it.
  double tail(double x) const;
  /// G^{-1}(g) for g in (0, 1].
  double inverse_tail(double g) const;
  /// One draw of zeta.
  double sample(Philox& rng) const;

  /// E[zeta; zeta <= tau] and E[zeta; zeta > tau].
  double lower_mean(double tau) const;
  double upper_mean(double tau) const;
  /// E[zeta^2; zeta <= tau].
  double lower_second_moment(double tau) const;

  /// Sum of a Poisson(lambda) number of independent zetas. Exact for
  /// lambda <= exact_limit; otherwise the `jumps` largest terms are exact
  /// (LePage order statistics) and the rest is replaced by a normal variable
  /// with matching mean and variance, clipped at zero.
  double sum_poisson(double lambda, Philox& rng, int jumps = 32, double exact_limit = 64.0) const;

  /// Largest increase of log G between consecutive table points (0 when the
  /// recovered tail is monotone).
  double monotonicity_defect() const { return defect_; }

 private:
  // G(x) and H(x) = 1 - G(x), the latter accurate for small x.
  void tail_pair(long double x, long double& G, long double& H) const;
  long double talbot(long double x) const;
  bool asymptotic(long double x, long double& out) const;
  long double upper_mean_asymptotic(long double x) const;

  double beta_;
  double x_lo_, x_hi_;
  double small_c_;  // 1 - G(x) ~ small_c x^beta
  double large_c_;  // G(x) ~ large_c x^{-1-beta}
  double defect_ = 0.0;
  // inverse: log x on a uniform grid in w = log(-log G)
  double w0_, dw_;
  std::vector<double> inv_logx_;
  Pchip log_tail_, log_lower_mean_, log_upper_mean_, log_lower_m2_;
  double lower_m2_hi_ = 0.0;
  double y_first_ = 0.0, y_last_ = 0.0;  // -log G at x_lo and x_hi
};

/// Exact one-step transition of the pure stable CSBP (throws DomainError for
/// other mechanisms).
double transition_sample(const BranchingMechanism& m, double x, double dt, Philox& rng,
                         const FamilyMassTable* table = nullptr);

/// Y_t from Y_0 = x by a chain of exact transitions with steps <= max_dt
/// (default 0.25 / alpha).
double transition_chain(const BranchingMechanism& m, double x, double t, Philox& rng,
                        const FamilyMassTable* table = nullptr, double max_dt = 0.0);

struct SmallValueEstimate {
  double p_hat = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of P_x(0 < e^{-alpha t} Y_t <= k); replicate r uses the
/// stream (seed, r).
SmallValueEstimate small_value_probability(const BranchingMechanism& m, double x, double t, double k, int n_rep,
                                           std::uint64_t seed);

}  // namespace superou
