#include "superou/csbp.hpp"

#include <algorithm>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

#include "superou/error.hpp"
#include "superou/quadrature.hpp"
#include "superou/rng.hpp"

namespace superou {

double v_t(const BranchingMechanism& m, double lambda, double t) {
  if (lambda < 0.0 || t < 0.0) throw DomainError("v_t: lambda and t must be >= 0");
  if (lambda == 0.0 || t == 0.0) return lambda;
  if (!m.is_pure_stable()) return v_t_ode(m, lambda, t);
  const double ab = m.alpha() * m.beta();
  const double a = std::exp(-ab * t);
  const double base = a * std::pow(lambda, -m.beta()) + (m.eta() / m.alpha()) * -std::expm1(-ab * t);
  return std::pow(base, -1.0 / m.beta());
}

double v_t_ode(const BranchingMechanism& m, double lambda, double t, double rtol) {
  if (lambda < 0.0 || t < 0.0) throw DomainError("v_t_ode: lambda and t must be >= 0");
  if (lambda == 0.0 || t == 0.0) return lambda;
  namespace odeint = boost::numeric::odeint;
  using state = std::array<double, 1>;
  auto rhs = [&m](const state& v, state& dv, double) { dv[0] = -m.psi(std::max(v[0], 0.0)); };
  state v{lambda};
  auto stepper = odeint::make_controlled(rtol * 1e-3 * lambda, rtol, odeint::runge_kutta_dopri5<state>());
  // Decay from large lambda is fast initially; start with a step on that scale.
  const double dt0 = std::min(t, 0.01 / std::max(1.0, std::fabs(m.dpsi(lambda))));
  odeint::integrate_adaptive(stepper, rhs, v, 0.0, t, dt0);
  return v[0];
}

double vbar_t(const BranchingMechanism& m, double t) {
  if (!(t > 0.0)) throw DomainError("vbar_t: t must be > 0");
  if (!m.is_pure_stable()) return vbar_t_numeric(m, t);
  const double ab = m.alpha() * m.beta();
  return std::pow((m.eta() / m.alpha()) * -std::expm1(-ab * t), -1.0 / m.beta());
}

double vbar_t_numeric(const BranchingMechanism& m, double t) {
  if (!(t > 0.0)) throw DomainError("vbar_t_numeric: t must be > 0");
  if (!greys_condition_check(m).holds) throw DomainError("vbar_t_numeric: Grey's condition fails");
  const double vb = largest_root(m);
  boost::math::quadrature::exp_sinh<double> es;
  // int_v^inf dz/psi(z) with z = v e^s, integrand 1 / (psi(z) / z)
  auto tail = [&](double v) {
    return es.integrate(
        [&](double s) {
          const double z = v * std::exp(s);
          if (!std::isfinite(z)) return 0.0;
          return 1.0 / (-m.alpha() + m.rho() * z + m.eta() * std::pow(z, m.beta()));
        },
        0.0, std::numeric_limits<double>::infinity(), 1e-13);
  };
  double lo = vb * (1.0 + 1e-9), hi = 2.0 * vb;
  while (tail(hi) > t) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw NumericalDivergence("vbar_t_numeric: no bracket");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = std::sqrt(lo * hi);
    (tail(mid) > t ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double extinction_prob(const BranchingMechanism& m, double x) {
  if (x < 0.0) throw DomainError("extinction_prob: negative mass");
  return std::exp(-x * largest_root(m));
}

// ---------------------------------------------------------------------------
// Family mass table

namespace {

using ldc = std::complex<long double>;
constexpr long double kPiL = std::numbers::pi_v<long double>;
constexpr int kTalbotTerms = 32;

}  // namespace

void FamilyMassTable::tail_pair(long double x, long double& G, long double& H) const {
  const long double b = beta_;
  if (x <= 0.0L) {
    G = 1.0L;
    H = 0.0L;
    return;
  }
  if (beta_ >= 1.0) {
    G = std::exp(-x);
    H = -std::expm1(-x);
    return;
  }
  const long double xb = std::pow(x, b);
  if (xb <= 1.0L) {
    // G(x) = sum_k (1/b)_k (-x^b)^k / (k! Gamma(bk + 1))
    long double poch = 1.0L, kfact = 1.0L, pw = 1.0L, h = 0.0L;
    for (int k = 1; k < 400; ++k) {
      poch *= (1.0L / b + k - 1);
      kfact *= k;
      pw *= -xb;
      const long double term = poch * pw / (kfact * std::tgamma(b * k + 1.0L));
      h -= term;
      if (std::fabs(term) < 1e-22L * std::fabs(h)) break;
    }
    H = h;
    G = 1.0L - h;
    return;
  }
  long double g;
  if (!asymptotic(x, g)) g = talbot(x);
  G = g;
  H = 1.0L - g;
}

bool FamilyMassTable::asymptotic(long double x, long double& out) const {
  if (beta_ >= 1.0) return false;
  // G(x) ~ sum_k binom(-1/b, k) x^{-bk-1} / Gamma(-bk), 1/Gamma(-a) = -Gamma(1+a) sin(pi a)/pi
  const long double b = beta_;
  long double sum = 0.0L, prev = std::numeric_limits<long double>::infinity();
  long double binom = 1.0L;
  for (int k = 1; k < 200; ++k) {
    binom *= -(1.0L / b + k - 1) / k;
    const long double a = b * k;
    if (std::fabs(a - std::round(a)) < 1e-12L) continue;  // 1/Gamma(-a) vanishes
    const long double rg = -std::tgamma(1.0L + a) * std::sin(kPiL * a) / kPiL;
    const long double term = binom * std::pow(x, -a - 1.0L) * rg;
    const long double mag = std::fabs(term);
    if (mag > prev) return false;
    sum += term;
    prev = mag;
    if (mag < 1e-17L * std::fabs(sum)) {
      out = sum;
      return true;
    }
  }
  return false;
}

// E[zeta; zeta > x] = x G(x) + int_x^inf G from the large-x expansion of G.
long double FamilyMassTable::upper_mean_asymptotic(long double x) const {
  if (beta_ >= 1.0) return std::exp(-x) * (1.0L + x);
  const long double b = beta_;
  long double sum = 0.0L, binom = 1.0L;
  for (int k = 1; k < 200; ++k) {
    binom *= -(1.0L / b + k - 1) / k;
    const long double a = b * k;
    if (std::fabs(a - std::round(a)) < 1e-12L) continue;
    const long double rg = -std::tgamma(1.0L + a) * std::sin(kPiL * a) / kPiL;
    const long double term = binom * rg * std::pow(x, -a) * (1.0L + 1.0L / a);
    sum += term;
    if (std::fabs(term) < 1e-17L * std::fabs(sum)) break;
  }
  return sum;
}

// Fixed Talbot contour inversion of (1 + u^b)^{-1/b}.
long double FamilyMassTable::talbot(long double x) const {
  const long double b = beta_;
  const int M = kTalbotTerms;
  const long double r = 2.0L * M / (5.0L * x);
  auto F = [b](ldc s) { return std::pow(1.0L + std::pow(s, b), -1.0L / b); };
  long double sum = 0.5L * std::exp(r * x) * std::pow(1.0L + std::pow(r, b), -1.0L / b);
  for (int k = 1; k < M; ++k) {
    const long double th = k * kPiL / M;
    const long double cot = std::cos(th) / std::sin(th);
    const ldc S(r * th * cot, r * th);
    const long double sig = th + (th * cot - 1.0L) * cot;
    sum += (std::exp(x * S) * F(S) * ldc(1.0L, sig)).real();
  }
  return r / M * sum;
}

double FamilyMassTable::tail_exact(double x) const {
  long double G, H;
  tail_pair(x, G, H);
  return static_cast<double>(G);
}

FamilyMassTable::FamilyMassTable(double beta, int points) : beta_(beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("FamilyMassTable: beta must lie in (0, 1]");
  if (points < 64) throw DomainError("FamilyMassTable: too few points");
  small_c_ = 1.0 / (beta * std::tgamma(1.0 + beta));
  large_c_ = beta < 1.0 ? 1.0 / std::tgamma(1.0 - beta) : 0.0;
  x_lo_ = std::pow(1e-8 / small_c_, 1.0 / beta);
  x_hi_ = beta < 1.0 ? std::pow(1e-12 / large_c_, -1.0 / (1.0 + beta)) : -std::log(1e-12);

  const int n = points;
  const double t0 = std::log(x_lo_), t1 = std::log(x_hi_);
  const double hstep = (t1 - t0) / (n - 1);
  std::vector<double> t(n), logG(n);
  std::vector<long double> G(n), H(n);
  for (int i = 0; i < n; ++i) {
    t[i] = t0 + hstep * i;
    tail_pair(std::exp(static_cast<long double>(t[i])), G[i], H[i]);
    logG[i] = static_cast<double>(std::log(G[i]));
  }
  for (int i = 1; i < n; ++i) defect_ = std::max(defect_, logG[i] - logG[i - 1]);

  // Interval integrals of G, H, xG, xH on [x_i, x_{i+1}] in the variable log x.
  const Rule1D gl = gauss_legendre(6);
  std::vector<long double> intG(n - 1), intH(n - 1), intxH(n - 1), intxG(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    long double sg = 0, sh = 0, sxh = 0, sxg = 0;
    for (std::size_t j = 0; j < gl.nodes.size(); ++j) {
      const long double s = t[i] + 0.5L * hstep * (gl.nodes[j] + 1.0L);
      const long double x = std::exp(s);
      long double g, h;
      tail_pair(x, g, h);
      const long double w = 0.5L * hstep * gl.weights[j] * x;
      sg += w * g;
      sh += w * h;
      sxh += w * x * h;
      sxg += w * x * g;
    }
    intG[i] = sg;
    intH[i] = sh;
    intxH[i] = sxh;
    intxG[i] = sxg;
  }
  const auto xl = [&](int i) { return std::exp(static_cast<long double>(t[i])); };

  // E[zeta; zeta <= x] = x H(x) - int_0^x H, E[zeta^2; zeta <= x] = x^2 H(x) - 2 int_0^x y H(y) dy.
  // Per interval the increments int x dF and int x^2 dF are formed from H while
  // H < G and from G beyond, which avoids cancelling large terms.
  std::vector<double> lm(n), lm2(n), um(n);
  std::vector<long double> d1(n - 1);
  long double L1 = small_c_ * beta * std::pow(static_cast<long double>(x_lo_), 1.0L + beta) / (1.0L + beta);
  long double M2 = small_c_ * beta * std::pow(static_cast<long double>(x_lo_), 2.0L + beta) / (2.0L + beta);
  lm[0] = static_cast<double>(std::log(L1));
  lm2[0] = static_cast<double>(std::log(M2));
  for (int i = 0; i + 1 < n; ++i) {
    const long double a = xl(i), c = xl(i + 1);
    const bool low = H[i + 1] < G[i + 1];
    d1[i] = low ? c * H[i + 1] - a * H[i] - intH[i] : a * G[i] - c * G[i + 1] + intG[i];
    const long double d2 = low ? c * c * H[i + 1] - a * a * H[i] - 2.0L * intxH[i]
                               : a * a * G[i] - c * c * G[i + 1] + 2.0L * intxG[i];
    L1 += d1[i];
    M2 += d2;
    lm[i + 1] = static_cast<double>(std::log(L1));
    lm2[i + 1] = static_cast<double>(std::log(M2));
  }
  lower_m2_hi_ = static_cast<double>(M2);
  // E[zeta; zeta > x] = x G(x) + int_x^inf G
  long double U1 = upper_mean_asymptotic(x_hi_);
  um[n - 1] = static_cast<double>(std::log(U1));
  for (int i = n - 2; i >= 0; --i) {
    U1 += d1[i];
    um[i] = static_cast<double>(std::log(U1));
  }

  // Inverse table: log x against w = log(-log G) on a uniform grid.
  std::vector<double> w(n), tx(n);
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    const double wi = std::log(static_cast<double>(-std::log(G[i])));
    if (kept > 0 && !(wi > w[kept - 1])) continue;  // drop non-monotone points
    w[kept] = wi;
    tx[kept] = t[i];
    ++kept;
  }
  w.resize(kept);
  tx.resize(kept);
  y_first_ = std::exp(w.front());
  y_last_ = std::exp(w.back());
  w0_ = w.front();
  const int ninv = 4 * n;
  dw_ = (w.back() - w.front()) / (ninv - 1);
  {
    const Pchip inv(w, tx);
    inv_logx_.resize(ninv);
    for (int k = 0; k < ninv; ++k) inv_logx_[k] = inv(std::min(w0_ + dw_ * k, w.back()));
  }

  log_tail_ = Pchip(t, std::move(logG));
  log_lower_mean_ = Pchip(t, std::move(lm));
  log_lower_m2_ = Pchip(t, std::move(lm2));
  log_upper_mean_ = Pchip(std::move(t), std::move(um));
}

std::shared_ptr<const FamilyMassTable> FamilyMassTable::shared(double beta) {
  static std::mutex mu;
  static std::map<double, std::shared_ptr<const FamilyMassTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[beta];
  if (!slot) slot = std::make_shared<const FamilyMassTable>(beta);
  return slot;
}

double FamilyMassTable::tail(double x) const {
  if (x <= 0.0) return 1.0;
  if (x < x_lo_) return 1.0 - small_c_ * std::pow(x, beta_);
  if (x > x_hi_) return tail_exact(x);
  return std::exp(log_tail_(std::log(x)));
}

double FamilyMassTable::inverse_tail(double g) const {
  if (!(g > 0.0)) return std::numeric_limits<double>::infinity();
  if (g >= 1.0) return 0.0;
  const double y = -std::log(g);
  if (y <= y_first_) return std::pow(-std::expm1(-y) / small_c_, 1.0 / beta_);
  if (y >= y_last_) return beta_ < 1.0 ? std::pow(g / large_c_, -1.0 / (1.0 + beta_)) : y;
  const double pos = (std::log(y) - w0_) / dw_;
  const std::size_t k = std::min(static_cast<std::size_t>(pos), inv_logx_.size() - 2);
  const double fr = pos - static_cast<double>(k);
  // Catmull-Rom on the uniform grid, one-sided at the ends
  const std::size_t last = inv_logx_.size() - 1;
  const double p0 = inv_logx_[k == 0 ? 0 : k - 1], p1 = inv_logx_[k], p2 = inv_logx_[k + 1];
  const double p3 = inv_logx_[std::min(k + 2, last)];
  const double m1 = k == 0 ? p2 - p1 : 0.5 * (p2 - p0);
  const double m2 = k + 1 == last ? p2 - p1 : 0.5 * (p3 - p1);
  const double f2 = fr * fr, f3 = f2 * fr;
  return std::exp((2 * f3 - 3 * f2 + 1) * p1 + (f3 - 2 * f2 + fr) * m1 + (-2 * f3 + 3 * f2) * p2 + (f3 - f2) * m2);
}

double FamilyMassTable::sample(Philox& rng) const { return inverse_tail(rng.uniform()); }

double FamilyMassTable::lower_mean(double tau) const {
  if (tau <= 0.0) return 0.0;
  if (tau < x_lo_) return small_c_ * beta_ * std::pow(tau, 1.0 + beta_) / (1.0 + beta_);
  if (tau > x_hi_) return 1.0 - upper_mean(tau);
  return std::exp(log_lower_mean_(std::log(tau)));
}

double FamilyMassTable::upper_mean(double tau) const {
  if (tau <= 0.0) return 1.0;
  if (tau < x_lo_) return 1.0 - lower_mean(tau);
  if (tau > x_hi_) {
    return static_cast<double>(upper_mean_asymptotic(tau));
  }
  return std::exp(log_upper_mean_(std::log(tau)));
}

double FamilyMassTable::lower_second_moment(double tau) const {
  if (tau <= 0.0) return 0.0;
  if (tau < x_lo_) return small_c_ * beta_ * std::pow(tau, 2.0 + beta_) / (2.0 + beta_);
  if (tau > x_hi_) {
    if (beta_ >= 1.0) return 2.0 - std::exp(-tau) * (tau * tau + 2.0 * tau + 2.0);
    return lower_m2_hi_ + large_c_ * (1.0 + beta_) * (std::pow(tau, 1.0 - beta_) - std::pow(x_hi_, 1.0 - beta_)) / (1.0 - beta_);
  }
  return std::exp(log_lower_m2_(std::log(tau)));
}

double FamilyMassTable::sum_poisson(double lambda, Philox& rng, int jumps, double exact_limit) const {
  if (!(lambda > 0.0)) return 0.0;
  if (lambda <= exact_limit) {
    const std::uint64_t n = rng.poisson(lambda);
    double s = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) s += sample(rng);
    return s;
  }
  // Points Gamma_1 < Gamma_2 < ... of a unit Poisson process on [0, lambda]
  // map to the jumps in decreasing order, zeta_(j) = G^{-1}(Gamma_j / lambda).
  double gamma = 0.0, s = 0.0, tau = 0.0;
  for (int j = 0; j < jumps; ++j) {
    gamma += rng.exponential();
    if (gamma >= lambda) return s;
    tau = inverse_tail(gamma / lambda);
    s += tau;
  }
  const double mean = lambda * lower_mean(tau);
  const double var = lambda * lower_second_moment(tau);
  return s + std::max(0.0, mean + std::sqrt(var) * rng.normal());
}

double transition_sample(const BranchingMechanism& m, double x, double dt, Philox& rng, const FamilyMassTable* table) {
  if (!m.is_pure_stable()) throw DomainError("transition_sample: only the pure stable mechanism is supported");
  if (x < 0.0) throw DomainError("transition_sample: negative mass");
  if (!(dt > 0.0)) throw DomainError("transition_sample: dt must be > 0");
  if (x == 0.0) return 0.0;
  std::shared_ptr<const FamilyMassTable> own;
  if (!table) {
    own = FamilyMassTable::shared(m.beta());
    table = own.get();
  }
  const double ab = m.alpha() * m.beta();
  const double c = m.eta() / m.alpha();
  const double vbar = std::pow(c * -std::expm1(-ab * dt), -1.0 / m.beta());
  const double s = std::pow(c * std::expm1(ab * dt), 1.0 / m.beta());
  return s * table->sum_poisson(x * vbar, rng);
}

double transition_chain(const BranchingMechanism& m, double x, double t, Philox& rng, const FamilyMassTable* table,
                        double max_dt) {
  if (t < 0.0) throw DomainError("transition_chain: negative time");
  if (!(max_dt > 0.0)) max_dt = 0.25 / m.alpha();
  const int steps = std::max(1, static_cast<int>(std::ceil(t / max_dt - 1e-12)));
  const double dt = t / steps;
  for (int k = 0; k < steps && x > 0.0 && t > 0.0; ++k) x = transition_sample(m, x, dt, rng, table);
  return x;
}

SmallValueEstimate small_value_probability(const BranchingMechanism& m, double x, double t, double k, int n_rep,
                                           std::uint64_t seed) {
  if (!(k > 0.0)) throw DomainError("small_value_probability: k must be > 0");
  if (n_rep < 1) throw DomainError("small_value_probability: n_rep must be >= 1");
  const auto table = FamilyMassTable::shared(m.beta());
  std::int64_t hits = 0;
  const double scale = std::exp(-m.alpha() * t);
  for (int r = 0; r < n_rep; ++r) {
    Philox rng(seed, static_cast<std::uint64_t>(r));
    const double w = scale * transition_chain(m, x, t, rng, table.get());
    if (w > 0.0 && w <= k) ++hits;
  }
  SmallValueEstimate out;
  out.p_hat = static_cast<double>(hits) / n_rep;
  out.std_error = std::sqrt(std::max(out.p_hat * (1.0 - out.p_hat), 1.0 / n_rep) / n_rep);
  return out;
}

}  // namespace superou
