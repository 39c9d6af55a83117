#pragma once

// Branching Ornstein-Uhlenbeck particle systems.
//
// ParticleCloud + OffspringLaw: N_scale particles per unit mass, each carrying
// mass 1/N_scale, branching at rate q = eta (1+beta) N^beta with offspring pgf
//   g(s) = s + m (s - 1) + c (1 - s)^{1+beta},  c = 1/(1+beta), m = alpha / q,
// so that q N [g(1 - z/N) - (1 - z/N)] = -alpha z + eta z^{1+beta} for every N.
// A quadratic part rho z^2 is carried by a separate critical binary channel at
// rate 2 rho N.
//
// GridSuperprocess: a mass field on a uniform 1-d lattice, advanced by Strang
// splitting of the OU mean semigroup (Gaussian lattice kernel) and independent
// exact CSBP transitions at every lattice point. Used where the particle count
// of the system above would be astronomically large.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "superou/csbp.hpp"
#include "superou/error.hpp"
#include "superou/mechanism.hpp"
#include "superou/ou_spectral.hpp"
#include "superou/rng.hpp"

namespace superou {

class OffspringLaw {
 public:
  /// Throws DomainError unless the tail is pure stable (+ optional quadratic),
  /// N_scale >= (2 alpha / eta)^{1/beta} (so m <= c/2) and K_max >= 1e4.
  static OffspringLaw build(const BranchingMechanism& mech, double n_scale, std::int64_t k_max = 1000000);
  /// Every event leaves the particle in place (p_1 = 1) at the given rate.
  static OffspringLaw degenerate(double rate);

  double n_scale() const { return n_; }
  double c() const { return c_; }
  double m() const { return m_; }
  double beta() const { return beta_; }
  std::int64_t k_max() const { return k_max_; }
  /// Total event rate per particle (stable + binary channels).
  double branch_rate() const { return q_stable_ + q_binary_; }
  double stable_rate() const { return q_stable_; }
  double binary_rate() const { return q_binary_; }

  /// p_k of the stable channel for k <= K_max (the lumped tail is separate).
  double pmf(std::int64_t k) const;
  /// |binom(1+beta, k)| for 2 <= k <= K_max.
  double tail_coefficient(std::int64_t k) const;
  /// Probability c sum_{k > K_max} a_k moved into the lumped atoms.
  double truncation_mass() const { return r0_; }
  /// The two integer atoms carrying the lumped tail (mean preserved).
  std::int64_t lump_low() const { return lump_k_; }
  double lump_low_prob() const { return lump_p_lo_; }
  double lump_high_prob() const { return lump_p_hi_; }
  /// Mean offspring of the stable channel including the lumped atoms.
  double mean() const { return mean_; }
  /// | sum_{k<=K} a_k + analytic tail - beta |.
  double identity_defect() const { return identity_defect_; }

  /// Offspring number for one event of the stable channel.
  std::int64_t sample_stable(Philox& rng) const;
  /// Offspring number for one event (channel chosen by rate).
  std::int64_t sample(Philox& rng) const;

 private:
  double n_ = 1.0, c_ = 0.5, m_ = 0.0, beta_ = 1.0;
  std::int64_t k_max_ = 1;
  double q_stable_ = 0.0, q_binary_ = 0.0;
  double p0_ = 0.0, p1_ = 1.0;
  std::shared_ptr<const std::vector<double>> a_;    // a_k for k = 2..K
  std::shared_ptr<const std::vector<double>> cdf_;  // P(k <= 2 + j | k >= 2, not lumped) * (1 - p0 - p1 - r0)
  double r0_ = 0.0;
  std::int64_t lump_k_ = 0;
  double lump_p_lo_ = 0.0, lump_p_hi_ = 0.0;
  double mean_ = 1.0;
  double identity_defect_ = 0.0;
};

struct ParticleCloud {
  OUParams params;
  std::vector<double> positions;  // count * d, row major
  std::vector<double> updated;    // per particle: time of its stored position
  double mass_per_particle = 1.0;
  double time = 0.0;
  Philox rng{0, 0};
  bool pop_cap_hit = false;
  std::uint64_t events = 0;

  std::size_t count() const { return updated.size(); }
  bool extinct() const { return updated.empty(); }
  double mass() const { return mass_per_particle * static_cast<double>(count()); }
  std::span<const double> position(std::size_t i) const {
    return {positions.data() + i * params.d, static_cast<std::size_t>(params.d)};
  }
};

/// round(N w_i) particles at every atom x_i, all synchronized at time 0.
ParticleCloud make_cloud(const OUParams& params, const std::vector<std::pair<std::vector<double>, double>>& atoms,
                         double n_scale, std::uint64_t seed, std::uint64_t stream);

/// Moves every particle to cloud.time by exact OU transitions.
void synchronize(ParticleCloud& cloud);

/// Event-driven evolution to t_target, finishing with every particle
/// synchronized. When the population would exceed pop_cap the run stops at the
/// event time with pop_cap_hit set; returns false in that case.
bool step_to(ParticleCloud& cloud, double t_target, const OffspringLaw& law, std::size_t pop_cap = 10000000);

/// mass_per_particle * sum_i f(x_i) for a Hermite expansion (cloud must be synchronized).
double functional(const ParticleCloud& cloud, const HermiteCoeffs& c);
double functional(const ParticleCloud& cloud, const std::function<double(std::span<const double>)>& f);

/// H_t^p = e^{-(alpha - |p| b) t} X_t(phi_p); warns unless alpha beta~ > |p| b.
double martingale_Hp(const ParticleCloud& cloud, const MultiIndex& p, const BranchingMechanism& mech,
                     Diagnostics* diag = nullptr);

/// Regime-normalized statistic from the raw pieces:
/// Cs: X_t(f) / |X_t|^{1/(1+beta)}, Cc: X_t(f) / (t |X_t|)^{1/(1+beta)},
/// Cl: (X_t(f) - centering) / |X_t|^{1/(1+beta)}. Throws ExtinctError on zero mass.
double normalized_statistic(Regime regime, double xf, double mass, double t, double beta, double centering = 0.0);

/// sum_p <f, phi_p> e^{(alpha - |p| b) t} H^p_inf over the nonzero coefficients of c;
/// h_inf evaluates H^p_inf for a multi-index.
double large_rate_centering(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                            const std::function<double(const MultiIndex&)>& h_inf);

/// normalized_statistic on a cloud; Cl needs h_inf (H^p at the later horizon).
double clt_statistic(const ParticleCloud& cloud, Regime regime, const HermiteCoeffs& c, const BranchingMechanism& mech,
                     const std::function<double(const MultiIndex&)>& h_inf = {});

/// (X_{t+1}(f) - X_t(P^alpha_1 f)) / |X_t|^{1/(1+beta)}.
double unit_interval_statistic(const ParticleCloud& at_t, const ParticleCloud& at_t1, const HermiteCoeffs& c,
                               const BranchingMechanism& mech);

struct GridEngineOptions {
  double half_width = 0.0;  // lattice on [-L, L]; 0 picks 8 stationary standard deviations
  double spacing = 0.05;
  double dt = 1.0 / 32.0;
};

class GridSuperprocess {
 public:
  /// d = 1 and a pure stable tail only.
  GridSuperprocess(const OUParams& params, const BranchingMechanism& mech, const GridEngineOptions& opt = {});

  /// Mass w at every atom x, deposited on the two nearest lattice points with
  /// the first moment preserved.
  void reset(const std::vector<std::pair<double, double>>& atoms);
  /// Strang steps of at most dt up to t_target (branching switched off by
  /// branching = false, leaving the deterministic OU mean flow).
  void step_to(double t_target, Philox& rng, bool branching = true);

  double time() const { return time_; }
  double mass() const;
  bool extinct() const { return mass() == 0.0; }
  double functional(const HermiteCoeffs& c) const;
  double martingale_Hp(int p) const;
  const std::vector<double>& lattice() const { return x_; }
  const std::vector<double>& masses() const { return w_; }
  /// Mass lost through the lattice edges so far.
  double edge_loss() const { return edge_loss_; }

 private:
  void transport(double tau);
  void branch(double tau, Philox& rng);

  OUParams params_;
  BranchingMechanism mech_;
  GridEngineOptions opt_;
  std::shared_ptr<const FamilyMassTable> table_;
  std::vector<double> x_, w_, scratch_;
  // cached lattice kernel for the current half step
  double kernel_tau_ = -1.0;
  std::vector<int> k_lo_;
  std::vector<std::vector<double>> k_w_;
  double time_ = 0.0;
  double edge_loss_ = 0.0;
};

}  // namespace superou
