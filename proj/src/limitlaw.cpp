#include "superou/limitlaw.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "superou/quadrature.hpp"
#include "superou/rng.hpp"

namespace superou {

namespace {

constexpr double kPi = std::numbers::pi;

int nodes_for(const LimitOptions& opt, int M) { return opt.nodes > 0 ? opt.nodes : std::max(2 * M + 2, 128); }

void require_real(const HermiteCoeffs& c, const char* who) {
  double im = 0.0;
  for (const auto& v : c.data()) im = std::max(im, std::fabs(v.imag()));
  if (im > 1e-14 * std::max(1.0, c.max_abs())) throw DomainError(std::string(who) + ": test function must be real");
}

// Nodal real values of the expansion c.
std::vector<double> nodal_real(const SpectralSpace& sp, const HermiteCoeffs& c) {
  const auto v = sp.to_nodal(c);
  std::vector<double> r(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) r[j] = v[j].real();
  return r;
}

// <F(g), phi> for a real expansion g. In one dimension the line is cut at the
// sign changes of g and each piece gets 16-point Gauss-Legendre panels, so the
// kink of |g|^{1+beta} at a zero costs nothing; tensor Gauss-Hermite otherwise.
class PhiIntegral {
 public:
  PhiIntegral(const OUParams& params, int M, int nodes)
      : params_(params), M_(M), gl_(gauss_legendre(16)), ra_(M + 1), rb_(M + 1) {
    if (params.d > 1) space_ = std::make_unique<SpectralSpace>(params, M, nodes);
    // phi_{p+1} = ra_p u phi_p - rb_p phi_{p-1}
    for (int p = 1; p <= M; ++p) {
      ra_[p] = std::sqrt(2.0 / (p + 1.0));
      rb_[p] = std::sqrt(p / (p + 1.0));
    }
  }

  template <class F>
  auto operator()(const HermiteCoeffs& g, F&& fn) const {
    using R = decltype(fn(0.0));
    R acc{};
    if (space_) {
      const auto r = nodal_real(*space_, g);
      for (std::size_t j = 0; j < r.size(); ++j) acc += space_->grid().weight(j) * fn(r[j]);
      return acc;
    }
    std::vector<double> c(M_ + 1);
    for (int p = 0; p <= M_; ++p) c[p] = g[p].real();
    auto eval = [&](double u) {
      double prev = 1.0, cur = std::numbers::sqrt2 * u, v = c[0];
      if (M_ == 0) return v;
      v += c[1] * cur;
      for (int p = 1; p < M_; ++p) {
        const double next = ra_[p] * u * cur - rb_[p] * prev;
        prev = cur;
        cur = next;
        v += c[p + 1] * cur;
      }
      return v;
    };
    constexpr double U = 9.0;
    constexpr int K = 256;
    std::vector<double> cuts{-U};
    double ua = -U, ga = eval(ua);
    for (int k = 1; k <= K; ++k) {
      const double ub = -U + 2.0 * U * k / K, gb = eval(ub);
      if ((ga < 0.0 && gb > 0.0) || (ga > 0.0 && gb < 0.0)) {
        double lo = ua, hi = ub, glo = ga;
        for (int it = 0; it < 60 && hi - lo > 1e-15; ++it) {
          const double mid = 0.5 * (lo + hi), gm = eval(mid);
          if ((gm < 0.0) == (glo < 0.0)) {
            lo = mid;
            glo = gm;
          } else {
            hi = mid;
          }
        }
        cuts.push_back(0.5 * (lo + hi));
      }
      ua = ub;
      ga = gb;
    }
    cuts.push_back(U);
    const double inv_sqrt_pi = 1.0 / std::sqrt(kPi);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double a = cuts[i], b = cuts[i + 1];
      const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / 0.75)));
      const double h = (b - a) / panels;
      for (int q = 0; q < panels; ++q) {
        for (std::size_t j = 0; j < gl_.nodes.size(); ++j) {
          const double u = a + h * (q + 0.5 * (gl_.nodes[j] + 1.0));
          acc += (0.5 * h * gl_.weights[j] * std::exp(-u * u) * inv_sqrt_pi) * fn(eval(u));
        }
      }
    }
    return acc;
  }

 private:
  OUParams params_;
  int M_;
  Rule1D gl_;
  std::vector<double> ra_, rb_;
  std::unique_ptr<SpectralSpace> space_;
};

cplx mean_neg_i_pow(const PhiIntegral& in, const HermiteCoeffs& g, double beta) {
  return in(g, [beta](double r) { return neg_i_pow(r, beta); });
}

// <(g_+)^{1+beta}, phi> and <(g_-)^{1+beta}, phi>.
void mean_parts(const PhiIntegral& in, const HermiteCoeffs& g, double beta, double& a, double& b) {
  // both parts in one pass, carried as the real and imaginary slots
  const cplx ab = in(g, [beta](double r) {
    const double v = std::pow(std::fabs(r), 1.0 + beta);
    return r > 0.0 ? cplx(v, 0.0) : cplx(0.0, v);
  });
  a = ab.real();
  b = ab.imag();
}

int panels_for(const LimitOptions& opt, double t) {
  return std::max(4, static_cast<int>(std::ceil(opt.panels_per_unit * t - 1e-9)));
}

// Smallest | |p|b - alpha beta~ | over the active coefficients.
double active_gap(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c) {
  const double tol = 1e-12 * c.max_abs();
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < c.size(); ++f)
    if (std::abs(c[f]) > tol) g = std::min(g, spectral_gap(params, mech, c.order_at(f)));
  return g;
}

}  // namespace

cplx neg_i_pow(double r, double beta) {
  if (r == 0.0) return 0.0;
  const double mag = std::pow(std::fabs(r), 1.0 + beta);
  const double ph = (r > 0.0 ? -0.5 : 0.5) * kPi * (1.0 + beta);
  return std::polar(mag, ph);
}

// ---------------------------------------------------------------------------
// StableLaw

StableLaw StableLaw::from_parts(double beta, double A, double B) {
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("StableLaw: beta must lie in (0, 1)");
  if (!(A >= 0.0 && B >= 0.0 && A + B > 0.0)) throw DomainError("StableLaw: need A, B >= 0 with A + B > 0");
  StableLaw s;
  s.beta = beta;
  s.A = A;
  s.B = B;
  return s;
}

StableLaw StableLaw::from_exponent(double beta, cplx m1) {
  const double sum = -m1.real() / std::sin(0.5 * kPi * beta);
  const double diff = m1.imag() / std::cos(0.5 * kPi * beta);  // B - A
  const double a = std::max(0.0, 0.5 * (sum - diff)), b = std::max(0.0, 0.5 * (sum + diff));
  return from_parts(beta, a, b);
}

double StableLaw::scale() const { return std::pow((A + B) * std::sin(0.5 * kPi * beta), 1.0 / (1.0 + beta)); }

double StableLaw::skew() const { return (A - B) / (A + B); }

cplx StableLaw::exponent(double theta) const {
  if (theta == 0.0) return 0.0;
  const double s = theta > 0.0 ? 1.0 : -1.0;
  const double ph = 0.5 * kPi * (1.0 + beta);
  return std::pow(std::fabs(theta), 1.0 + beta) * (A * std::polar(1.0, -s * ph) + B * std::polar(1.0, s * ph));
}

cplx stable_cf_standard(double index, double scale, double skew, double theta) {
  if (theta == 0.0) return 1.0;
  const double s = theta > 0.0 ? 1.0 : -1.0;
  const double mag = std::pow(scale * std::fabs(theta), index);
  return std::exp(-mag * cplx(1.0, -skew * s * std::tan(0.5 * kPi * index)));
}

cplx char_fn_eval(const StableLaw& law, double theta) { return law.char_fn(theta); }

double stable_sample(const StableLaw& law, Philox& rng) {
  const double a = law.index(), g = law.skew();
  const double tg = std::tan(0.5 * kPi * a);
  const double bshift = std::atan(g * tg) / a;
  const double sfac = std::pow(1.0 + g * g * tg * tg, 0.5 / a);
  const double v = kPi * (rng.uniform() - 0.5);
  const double w = rng.exponential();
  const double x = sfac * std::sin(a * (v + bshift)) / std::pow(std::cos(v), 1.0 / a) *
                   std::pow(std::cos(v - a * (v + bshift)) / w, (1.0 - a) / a);
  return law.scale() * x;
}

// ---------------------------------------------------------------------------
// Exponents

GridFunction z_t(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                 Diagnostics* diag, const LimitOptions& opt) {
  if (t < 0.0) throw DomainError("z_t: negative time");
  require_real(c, "z_t");
  const int M = c.max_order();
  auto sp = std::make_shared<const SpectralSpace>(params, M, nodes_for(opt, M));
  HermiteCoeffs acc(c.dim(), M);
  if (t > 0.0 && !c.is_zero()) {
    const Rule1D q = composite_gauss_legendre(panels_for(opt, t), opt.order, 0.0, t);
    std::vector<cplx> h(sp->num_nodes());
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      const double s = q.nodes[k];
      const auto r = nodal_real(*sp, palpha_apply(params, mech.alpha(), c, s));
      for (std::size_t j = 0; j < r.size(); ++j) h[j] = mech.eta() * neg_i_pow(r[j], mech.beta());
      acc += q.weights[k] * palpha_apply(params, mech.alpha(), sp->to_coeffs(h), t - s);
    }
    if (diag) {
      double tot = 0.0, shell = 0.0;
      for (std::size_t f = 0; f < acc.size(); ++f) {
        const double e = std::norm(acc[f]);
        tot += e;
        const auto p = acc.index_at(f).p;
        if (std::find(p.begin(), p.end(), M) != p.end()) shell += e;
      }
      warn_if(diag, tot > 0.0 && shell > 1e-4 * tot, "z_t: re-projection energy in the outer shell exceeds 1e-4");
    }
  }
  GridFunction out;
  out.space = sp;
  out.values = sp->to_nodal(acc);
  return out;
}

cplx z_t_mean(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
              const LimitOptions& opt) {
  if (t < 0.0) throw DomainError("z_t_mean: negative time");
  require_real(c, "z_t_mean");
  if (t == 0.0 || c.is_zero()) return 0.0;
  const PhiIntegral in(params, c.max_order(), nodes_for(opt, c.max_order()));
  const Rule1D q = composite_gauss_legendre(panels_for(opt, t), opt.order, 0.0, t);
  cplx s = 0.0;
  for (std::size_t k = 0; k < q.nodes.size(); ++k) {
    const double u = q.nodes[k];
    s += q.weights[k] * std::exp(mech.alpha() * (t - u)) *
         mean_neg_i_pow(in, palpha_apply(params, mech.alpha(), c, u), mech.beta());
  }
  return mech.eta() * s;
}

cplx m_t_functional(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                    const LimitOptions& opt) {
  if (t < 0.0) throw DomainError("m_t_functional: negative time");
  require_real(c, "m_t_functional");
  if (t == 0.0 || c.is_zero()) return 0.0;
  const PhiIntegral in(params, c.max_order(), nodes_for(opt, c.max_order()));
  const Rule1D q = composite_gauss_legendre(panels_for(opt, t), opt.order, 0.0, t);
  cplx s = 0.0;
  for (std::size_t k = 0; k < q.nodes.size(); ++k)
    s += q.weights[k] * mean_neg_i_pow(in, Tt_apply(params, mech, c, q.nodes[k]), mech.beta());
  return mech.eta() * s;
}

StableLaw decompose_to_stable(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                              const LimitOptions& opt) {
  require_real(c, "decompose_to_stable");
  const RegimeSplit split = regime_classify(params, mech, c);
  const PhiIntegral in(params, c.max_order(), nodes_for(opt, c.max_order()));
  const double beta = mech.beta();
  double A = 0.0, B = 0.0;
  if (!split.critical.is_zero()) {
    if (split.cls == Regime::Mixed) throw DomainError("decompose_to_stable: critical part mixed with other classes");
    mean_parts(in, c, beta, A, B);
  } else {
    // The integrand decays like e^{-(1+beta) delta u}: integrate to
    // T = 20 / ((1+beta) delta) and close with the exponential tail.
    const double rate = (1.0 + beta) * active_gap(params, mech, c);
    const double T = 20.0 / rate;
    const Rule1D q = composite_gauss_legendre(panels_for(opt, T), opt.order, 0.0, T);
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      double a, b;
      mean_parts(in, Tt_apply(params, mech, c, q.nodes[k]), beta, a, b);
      A += q.weights[k] * a;
      B += q.weights[k] * b;
    }
    double ta, tb;
    mean_parts(in, Tt_apply(params, mech, c, T), beta, ta, tb);
    ta /= rate;
    tb /= rate;
    if (ta + tb > 1e-6 * (A + B)) throw NumericalDivergence("decompose_to_stable: tail of the u-integral too large");
    A += ta;
    B += tb;
  }
  return StableLaw::from_parts(beta, mech.eta() * A, mech.eta() * B);
}

cplx m_functional(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                  const LimitOptions& opt) {
  require_real(c, "m_functional");
  if (c.is_zero()) return 0.0;
  const RegimeSplit split = regime_classify(params, mech, c);
  if (!split.critical.is_zero()) {
    const PhiIntegral in(params, c.max_order(), nodes_for(opt, c.max_order()));
    return mech.eta() * mean_neg_i_pow(in, split.critical, mech.beta());
  }
  return decompose_to_stable(params, mech, c, opt).exponent(1.0);
}

cplx unit_interval_limit_exponent(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                  double theta, const LimitOptions& opt) {
  if (theta == 0.0) return 0.0;
  return z_t_mean(params, mech, cplx(theta, 0.0) * c, 1.0, opt);
}

SeriesIdentity series_identity_check(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                     const LimitOptions& opt) {
  SeriesIdentity out;
  if (c.is_zero()) return out;
  if (regime_classify(params, mech, c).cls != Regime::Cs)
    throw DomainError("series_identity_check: f must lie in the small-rate class");
  const double bt = mech.beta_tilde();
  const HermiteCoeffs ft = cplx(std::exp(mech.alpha() * (bt - 1.0)), 0.0) * c;
  const double r = (1.0 + mech.beta()) * active_gap(params, mech, c);
  const double q = std::exp(-r);
  for (int k = 0;; ++k) {
    if (k > 100000) throw NumericalDivergence("series_identity_check: too many terms");
    const cplx term = z_t_mean(params, mech, Tt_apply(params, mech, ft, k), 1.0, opt);
    out.lhs += term;
    out.terms = k + 1;
    if (std::abs(term) * q / (1.0 - q) < 1e-6 * std::max(1e-300, std::abs(out.lhs))) break;
  }
  out.rhs = m_functional(params, mech, c, opt);
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

}  // namespace superou
