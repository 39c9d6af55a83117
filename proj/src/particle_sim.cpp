#include "superou/particle_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace superou {

OffspringLaw OffspringLaw::build(const BranchingMechanism& mech, double n_scale, std::int64_t k_max) {
  const double beta = mech.beta(), alpha = mech.alpha(), eta = mech.eta();
  if (!(eta > 0.0)) throw DomainError("OffspringLaw: eta must be > 0");
  if (k_max < 10000) throw DomainError("OffspringLaw: K_max must be >= 1e4");
  const double n_min = std::pow(2.0 * alpha / eta, 1.0 / beta);
  if (!(n_scale >= n_min * (1.0 - 1e-12)))
    throw DomainError("OffspringLaw: N_scale below (2 alpha / eta)^{1/beta}; p_0 would be too small or negative");

  OffspringLaw law;
  law.n_ = n_scale;
  law.beta_ = beta;
  law.c_ = 1.0 / (1.0 + beta);
  law.q_stable_ = eta * (1.0 + beta) * std::pow(n_scale, beta);
  law.q_binary_ = 2.0 * mech.rho() * n_scale;
  law.m_ = alpha / law.q_stable_;
  law.p0_ = law.c_ - law.m_;
  law.p1_ = 1.0 + law.m_ - law.c_ * (1.0 + beta);
  if (law.p0_ < 0.0) throw DomainError("OffspringLaw: negative p_0");
  law.k_max_ = k_max;

  // a_k = |binom(1+beta, k)|; a_{k+1} = a_k (k - 1 - beta) / (k + 1)
  auto a = std::make_shared<std::vector<double>>(k_max - 1);
  auto cdf = std::make_shared<std::vector<double>>(k_max - 1);
  long double ak = 0.5L * (1.0L + beta) * beta, sum = 0.0L, ksum = 0.0L;
  for (std::int64_t k = 2; k <= k_max; ++k) {
    (*a)[k - 2] = static_cast<double>(ak);
    sum += ak;
    ksum += k * ak;
    (*cdf)[k - 2] = static_cast<double>(law.c_ * sum);
    ak *= (k - 1.0L - beta) / (k + 1.0L);
  }
  // closed tails: sum_{k>K} a_k = a_{K+1} (K+1) / (1+beta),
  // sum_{k>K} k a_k = a_{K+1} (K+1) K / beta, with ak now a_{K+1}
  long double tail = 0.0L, ktail = 0.0L;
  if (beta < 1.0) {
    tail = ak * (k_max + 1.0L) / (1.0L + beta);
    ktail = ak * (k_max + 1.0L) * k_max / beta;
  }
  law.identity_defect_ = static_cast<double>(std::fabs(sum + tail - beta));
  law.r0_ = static_cast<double>(law.c_ * tail);
  if (law.r0_ > 0.0) {
    const long double kstar = ktail / tail;  // = K (1+beta) / beta
    law.lump_k_ = static_cast<std::int64_t>(std::floor(kstar));
    const double frac = static_cast<double>(kstar - law.lump_k_);
    law.lump_p_hi_ = law.r0_ * frac;
    law.lump_p_lo_ = law.r0_ - law.lump_p_hi_;
  }
  law.mean_ = static_cast<double>(law.p1_ + law.c_ * (ksum + ktail));
  law.a_ = std::move(a);
  law.cdf_ = std::move(cdf);
  return law;
}

OffspringLaw OffspringLaw::degenerate(double rate) {
  OffspringLaw law;
  law.q_stable_ = rate;
  law.p0_ = 0.0;
  law.p1_ = 1.0;
  law.c_ = 0.0;
  law.a_ = std::make_shared<std::vector<double>>();
  law.cdf_ = std::make_shared<std::vector<double>>();
  return law;
}

double OffspringLaw::tail_coefficient(std::int64_t k) const {
  if (k < 2 || k > k_max_ || a_->empty()) return 0.0;
  return (*a_)[k - 2];
}

double OffspringLaw::pmf(std::int64_t k) const {
  if (k == 0) return p0_;
  if (k == 1) return p1_;
  return c_ * tail_coefficient(k);
}

std::int64_t OffspringLaw::sample_stable(Philox& rng) const {
  double u = rng.uniform();
  if (u < p0_) return 0;
  u -= p0_;
  if (u < p1_ || cdf_->empty()) return 1;
  u -= p1_;
  if (u < cdf_->back()) {
    const auto it = std::upper_bound(cdf_->begin(), cdf_->end(), u);
    return 2 + static_cast<std::int64_t>(it - cdf_->begin());
  }
  u -= cdf_->back();
  return u < lump_p_lo_ ? lump_k_ : lump_k_ + 1;
}

std::int64_t OffspringLaw::sample(Philox& rng) const {
  if (q_binary_ > 0.0 && rng.uniform() * branch_rate() < q_binary_) return rng.uniform() < 0.5 ? 0 : 2;
  return sample_stable(rng);
}

ParticleCloud make_cloud(const OUParams& params, const std::vector<std::pair<std::vector<double>, double>>& atoms,
                         double n_scale, std::uint64_t seed, std::uint64_t stream) {
  params.validate();
  if (!(n_scale > 0.0)) throw DomainError("make_cloud: N_scale must be > 0");
  ParticleCloud cloud;
  cloud.params = params;
  cloud.mass_per_particle = 1.0 / n_scale;
  cloud.rng = Philox(seed, stream);
  for (const auto& [x, w] : atoms) {
    if (static_cast<int>(x.size()) != params.d) throw DomainError("make_cloud: atom dimension mismatch");
    if (w < 0.0) throw DomainError("make_cloud: negative atom weight");
    const auto n = static_cast<std::size_t>(std::llround(w * n_scale));
    for (std::size_t i = 0; i < n; ++i) {
      cloud.positions.insert(cloud.positions.end(), x.begin(), x.end());
      cloud.updated.push_back(0.0);
    }
  }
  return cloud;
}

namespace {

void sync_one(ParticleCloud& cloud, std::size_t i) {
  const double dt = cloud.time - cloud.updated[i];
  if (dt > 0.0) {
    ou_transition_sample(cloud.params, {cloud.positions.data() + i * cloud.params.d,
                                        static_cast<std::size_t>(cloud.params.d)},
                         dt, cloud.rng);
  }
  cloud.updated[i] = cloud.time;
}

}  // namespace

void synchronize(ParticleCloud& cloud) {
  for (std::size_t i = 0; i < cloud.count(); ++i) sync_one(cloud, i);
}

bool step_to(ParticleCloud& cloud, double t_target, const OffspringLaw& law, std::size_t pop_cap) {
  if (t_target < cloud.time) throw DomainError("step_to: target time is in the past");
  const std::size_t d = static_cast<std::size_t>(cloud.params.d);
  const double rate = law.branch_rate();
  while (!cloud.extinct()) {
    const double total = rate * static_cast<double>(cloud.count());
    if (!(total > 0.0)) break;
    const double tau = cloud.rng.exponential() / total;
    if (cloud.time + tau >= t_target) break;
    cloud.time += tau;
    ++cloud.events;
    const auto i = std::min(cloud.count() - 1,
                            static_cast<std::size_t>(cloud.rng.uniform() * static_cast<double>(cloud.count())));
    const std::int64_t k = law.sample(cloud.rng);
    if (k == 1) continue;
    if (k == 0) {
      const std::size_t last = cloud.count() - 1;
      if (i != last) {
        std::copy_n(cloud.positions.begin() + last * d, d, cloud.positions.begin() + i * d);
        cloud.updated[i] = cloud.updated[last];
      }
      cloud.positions.resize(last * d);
      cloud.updated.pop_back();
      continue;
    }
    if (cloud.count() + static_cast<std::size_t>(k - 1) > pop_cap) {
      cloud.pop_cap_hit = true;
      synchronize(cloud);
      return false;
    }
    sync_one(cloud, i);
    const std::vector<double> x(cloud.positions.begin() + i * d, cloud.positions.begin() + (i + 1) * d);
    cloud.positions.reserve(cloud.positions.size() + (k - 1) * d);
    for (std::int64_t j = 1; j < k; ++j) {
      cloud.positions.insert(cloud.positions.end(), x.begin(), x.end());
      cloud.updated.push_back(cloud.time);
    }
  }
  cloud.time = t_target;
  synchronize(cloud);
  return true;
}

namespace {

// sum_p c_p phi_p(x) with per-axis rows of the orthonormal recurrence
double eval_hermite(const OUParams& params, const HermiteCoeffs& c, std::span<const double> x,
                    std::vector<double>& rows) {
  const int M = c.max_order(), d = params.d;
  const double s = std::sqrt(params.b) / params.sigma;
  rows.resize(static_cast<std::size_t>(d) * (M + 1));
  for (int k = 0; k < d; ++k) phi_row(M, s * x[k], rows.data() + k * (M + 1));
  double v = 0.0;
  for (std::size_t f = 0; f < c.size(); ++f) {
    const double cf = c[f].real();
    if (cf == 0.0) continue;
    std::size_t r = f;
    double prod = cf;
    for (int k = 0; k < d; ++k) {
      prod *= rows[k * (M + 1) + r % (M + 1)];
      r /= (M + 1);
    }
    v += prod;
  }
  return v;
}

}  // namespace

double functional(const ParticleCloud& cloud, const HermiteCoeffs& c) {
  if (c.dim() != cloud.params.d) throw DomainError("functional: dimension mismatch");
  std::vector<double> rows;
  double s = 0.0;
  for (std::size_t i = 0; i < cloud.count(); ++i) s += eval_hermite(cloud.params, c, cloud.position(i), rows);
  return cloud.mass_per_particle * s;
}

double functional(const ParticleCloud& cloud, const std::function<double(std::span<const double>)>& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < cloud.count(); ++i) s += f(cloud.position(i));
  return cloud.mass_per_particle * s;
}

double martingale_Hp(const ParticleCloud& cloud, const MultiIndex& p, const BranchingMechanism& mech,
                     Diagnostics* diag) {
  const double rate = mech.alpha() - p.order() * cloud.params.b;
  warn_if(diag, !(mech.alpha() * mech.beta_tilde() > p.order() * cloud.params.b),
          "martingale_Hp: alpha beta~ <= |p| b, no L^{1+gamma} limit");
  int M = 0;
  for (int v : p.p) M = std::max(M, v);
  const HermiteCoeffs c = HermiteCoeffs::basis(cloud.params.d, M, p);
  return std::exp(-rate * cloud.time) * functional(cloud, c);
}

double normalized_statistic(Regime regime, double xf, double mass, double t, double beta, double centering) {
  if (!(mass > 0.0)) throw ExtinctError("normalized_statistic: extinct configuration");
  const double e = 1.0 / (1.0 + beta);
  switch (regime) {
    case Regime::Cs:
      return xf / std::pow(mass, e);
    case Regime::Cc:
      return xf / std::pow(t * mass, e);
    case Regime::Cl:
      return (xf - centering) / std::pow(mass, e);
    default:
      throw DomainError("normalized_statistic: mixed regime has no single normalization");
  }
}

double large_rate_centering(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                            const std::function<double(const MultiIndex&)>& h_inf) {
  double s = 0.0;
  for (std::size_t f = 0; f < c.size(); ++f) {
    const double cf = c[f].real();
    if (cf == 0.0) continue;
    const MultiIndex p = c.index_at(f);
    s += cf * std::exp((mech.alpha() - p.order() * params.b) * t) * h_inf(p);
  }
  return s;
}

double clt_statistic(const ParticleCloud& cloud, Regime regime, const HermiteCoeffs& c, const BranchingMechanism& mech,
                     const std::function<double(const MultiIndex&)>& h_inf) {
  if (cloud.extinct()) throw ExtinctError("clt_statistic: extinct cloud");
  double centering = 0.0;
  if (regime == Regime::Cl) {
    if (!h_inf) throw DomainError("clt_statistic: Cl needs H^p_inf estimates");
    centering = large_rate_centering(cloud.params, mech, c, cloud.time, h_inf);
  }
  return normalized_statistic(regime, functional(cloud, c), cloud.mass(), cloud.time, mech.beta(), centering);
}

double unit_interval_statistic(const ParticleCloud& at_t, const ParticleCloud& at_t1, const HermiteCoeffs& c,
                               const BranchingMechanism& mech) {
  if (at_t.extinct()) throw ExtinctError("unit_interval_statistic: extinct at t");
  const HermiteCoeffs p1 = palpha_apply(at_t.params, mech.alpha(), c, 1.0);
  const double num = functional(at_t1, c) - functional(at_t, p1);
  return num / std::pow(at_t.mass(), 1.0 / (1.0 + mech.beta()));
}

GridSuperprocess::GridSuperprocess(const OUParams& params, const BranchingMechanism& mech,
                                   const GridEngineOptions& opt)
    : params_(params), mech_(mech), opt_(opt) {
  params.validate();
  if (params.d != 1) throw DomainError("GridSuperprocess: d = 1 only");
  if (!mech.is_pure_stable()) throw DomainError("GridSuperprocess: pure stable tail only");
  if (!(opt.spacing > 0.0) || !(opt.dt > 0.0)) throw DomainError("GridSuperprocess: spacing and dt must be > 0");
  // lattice Gaussian moments are exact up to exp(-2 pi^2 v / h^2)
  const double v = params.stationary_variance() * -std::expm1(-params.b * opt.dt);
  if (v < 2.0 * opt.spacing * opt.spacing)
    throw DomainError("GridSuperprocess: spacing too coarse for the half-step variance");
  const double L = opt.half_width > 0.0 ? opt.half_width : 8.0 * std::sqrt(params.stationary_variance());
  const int half = static_cast<int>(std::ceil(L / opt.spacing));
  x_.resize(2 * half + 1);
  for (int j = -half; j <= half; ++j) x_[j + half] = j * opt.spacing;
  w_.assign(x_.size(), 0.0);
  scratch_.assign(x_.size(), 0.0);
  table_ = FamilyMassTable::shared(mech.beta());
}

void GridSuperprocess::reset(const std::vector<std::pair<double, double>>& atoms) {
  std::fill(w_.begin(), w_.end(), 0.0);
  time_ = 0.0;
  edge_loss_ = 0.0;
  const double h = opt_.spacing, x0 = x_.front();
  for (const auto& [x, w] : atoms) {
    const double u = (x - x0) / h;
    if (u < 0.0 || u > static_cast<double>(x_.size() - 1)) throw DomainError("GridSuperprocess: atom outside lattice");
    const auto j = std::min(x_.size() - 2, static_cast<std::size_t>(std::floor(u)));
    const double fr = u - static_cast<double>(j);
    w_[j] += w * (1.0 - fr);
    w_[j + 1] += w * fr;
  }
}

void GridSuperprocess::transport(double tau) {
  const double h = opt_.spacing, x0 = x_.front();
  const int n = static_cast<int>(x_.size());
  if (tau != kernel_tau_) {
    const double decay = std::exp(-params_.b * tau);
    const double v = params_.stationary_variance() * -std::expm1(-2.0 * params_.b * tau);
    const double reach = 9.0 * std::sqrt(v);
    k_lo_.assign(n, 0);
    k_w_.assign(n, {});
    for (int j = 0; j < n; ++j) {
      const double mu = x_[j] * decay;
      const int lo = static_cast<int>(std::floor((mu - reach - x0) / h));
      const int hi = static_cast<int>(std::ceil((mu + reach - x0) / h));
      double z = 0.0;
      std::vector<double> w(hi - lo + 1);
      for (int k = lo; k <= hi; ++k) {
        const double dx = x0 + k * h - mu;
        w[k - lo] = std::exp(-0.5 * dx * dx / v);
        z += w[k - lo];
      }
      // normalize over the full lattice so mass beyond the edges is lost, not folded back
      for (double& e : w) e /= z;
      k_lo_[j] = lo;
      k_w_[j] = std::move(w);
    }
    kernel_tau_ = tau;
  }
  std::fill(scratch_.begin(), scratch_.end(), 0.0);
  for (int j = 0; j < n; ++j) {
    const double m = w_[j];
    if (m == 0.0) continue;
    const auto& w = k_w_[j];
    for (std::size_t r = 0; r < w.size(); ++r) {
      const int k = k_lo_[j] + static_cast<int>(r);
      if (k < 0 || k >= n)
        edge_loss_ += m * w[r];
      else
        scratch_[k] += m * w[r];
    }
  }
  w_.swap(scratch_);
}

void GridSuperprocess::branch(double tau, Philox& rng) {
  for (double& m : w_)
    if (m > 0.0) m = transition_sample(mech_, m, tau, rng, table_.get());
}

void GridSuperprocess::step_to(double t_target, Philox& rng, bool branching) {
  if (t_target < time_) throw DomainError("GridSuperprocess::step_to: target time is in the past");
  const int steps = static_cast<int>(std::ceil((t_target - time_) / opt_.dt - 1e-9));
  if (steps <= 0) return;
  const double dt = (t_target - time_) / steps;
  for (int s = 0; s < steps; ++s) {
    transport(0.5 * dt);
    if (branching) {
      branch(dt, rng);
    } else {
      const double g = std::exp(mech_.alpha() * dt);
      for (double& m : w_) m *= g;
    }
    transport(0.5 * dt);
  }
  time_ = t_target;
}

double GridSuperprocess::mass() const {
  double s = 0.0;
  for (double m : w_) s += m;
  return s;
}

double GridSuperprocess::functional(const HermiteCoeffs& c) const {
  if (c.dim() != 1) throw DomainError("GridSuperprocess::functional: d = 1 only");
  const int M = c.max_order();
  const double sc = std::sqrt(params_.b) / params_.sigma;
  std::vector<double> row(M + 1);
  double s = 0.0;
  for (std::size_t j = 0; j < x_.size(); ++j) {
    if (w_[j] == 0.0) continue;
    phi_row(M, sc * x_[j], row.data());
    double v = 0.0;
    for (int p = 0; p <= M; ++p) v += c[p].real() * row[p];
    s += w_[j] * v;
  }
  return s;
}

double GridSuperprocess::martingale_Hp(int p) const {
  const double rate = mech_.alpha() - p * params_.b;
  return std::exp(-rate * time_) * functional(HermiteCoeffs::basis(1, p, {p}));
}

}  // namespace superou
