#include "superou/fkpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "superou/quadrature.hpp"

namespace superou {

namespace {

struct Divergence {};

// e^{(alpha - b|p|) tau} on each coefficient, any sign of tau.
HermiteCoeffs propagate(const OUParams& params, double alpha, const HermiteCoeffs& c, double tau) {
  HermiteCoeffs out = c;
  for (std::size_t f = 0; f < out.size(); ++f) out[f] *= std::exp((alpha - params.b * c.order_at(f)) * tau);
  return out;
}

void axpy(HermiteCoeffs& y, cplx a, const HermiteCoeffs& x) {
  for (std::size_t f = 0; f < y.size(); ++f) y[f] += a * x[f];
}

// psi0(-w), with Re(-w) clamped at 0 against round-off on the boundary.
cplx psi0_of_minus(const BranchingMechanism& mech, cplx w) {
  cplx z = -w;
  if (z.real() < 0.0) z.real(0.0);
  return mech.psi0(z);
}

// 4-stage Gauss-Legendre collocation in exponential form. Mode p with rate
// lam = alpha - b|p| obeys w' = lam w + N(s); for N replaced by its
// interpolant through the stage nodes c_k,
//   w(sigma dt) = e^{lam sigma dt} w(0) + dt sum_k a_k(lam dt, sigma) N_k,
//   a_k(h, sigma) = int_0^sigma e^{h (sigma - s)} l_k(s) ds.
struct Collocation {
  std::array<double, 4> c{};
  Rule1D unit;  // 16-point rule on [0, 1] for the weights

  Collocation() : unit(gauss_legendre(16, 0.0, 1.0)) {
    const Rule1D r = gauss_legendre(4, 0.0, 1.0);
    for (int k = 0; k < 4; ++k) c[k] = r.nodes[k];
  }

  double lagrange(int k, double x) const {
    double v = 1.0;
    for (int m = 0; m < 4; ++m)
      if (m != k) v *= (x - c[m]) / (c[k] - c[m]);
    return v;
  }

  double weight(int k, double h, double sigma) const {
    double s = 0.0;
    for (std::size_t m = 0; m < unit.nodes.size(); ++m) {
      const double u = sigma * unit.nodes[m];
      s += unit.weights[m] * std::exp(h * (sigma - u)) * lagrange(k, u);
    }
    return sigma * s;
  }
};

const Collocation& tableau() {
  static const Collocation t;
  return t;
}

// Weights of one step size for every total order 0..d M.
struct StepWeights {
  std::vector<std::array<double, 4>> ec;                    // e^{lam c_j dt}
  std::vector<std::array<std::array<double, 4>, 4>> a;      // a[j][k]
  std::vector<double> e1;                                   // e^{lam dt}
  std::vector<std::array<double, 4>> b;

  StepWeights(const OUParams& params, double alpha, int max_total, double dt) {
    const auto& tab = tableau();
    ec.resize(max_total + 1);
    a.resize(max_total + 1);
    e1.resize(max_total + 1);
    b.resize(max_total + 1);
    for (int o = 0; o <= max_total; ++o) {
      const double h = (alpha - params.b * o) * dt;
      e1[o] = std::exp(h);
      for (int j = 0; j < 4; ++j) {
        ec[o][j] = std::exp(h * tab.c[j]);
        for (int k = 0; k < 4; ++k) a[o][j][k] = tab.weight(k, h, tab.c[j]);
      }
      for (int k = 0; k < 4; ++k) b[o][k] = tab.weight(k, h, 1.0);
    }
  }
};

// Nonlinear term psi0(-W) projected back to coefficients; also records Re W.
HermiteCoeffs nonlinear(const SpectralSpace& sp, const BranchingMechanism& mech, const std::vector<cplx>& w,
                        double& max_re) {
  std::vector<cplx> n(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    max_re = std::max(max_re, w[j].real());
    n[j] = psi0_of_minus(mech, w[j]);
  }
  return sp.to_coeffs(n);
}

double sup_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

}  // namespace

HermiteCoeffs FkppSolution::at(double s) const {
  if (s < 0.0 || s > t_ * (1.0 + 1e-12)) throw DomainError("FkppSolution::at: time outside [0, t]");
  if (steps() == 0) return states_.front();
  const auto& tab = tableau();
  int n = std::min(steps() - 1, static_cast<int>(std::floor(s / dt_)));
  const double sigma = std::clamp((s - n * dt_) / dt_, 0.0, 1.0);
  HermiteCoeffs y = states_[n];
  for (std::size_t f = 0; f < y.size(); ++f) {
    const double h = (alpha_ - params_.b * y.order_at(f)) * dt_;
    cplx v = std::exp(h * sigma) * y[f];
    for (int k = 0; k < 4; ++k) v += dt_ * tab.weight(k, h, sigma) * stage_f_[n][k][f];
    y[f] = v;
  }
  return y;
}

GridFunction FkppSolution::final_grid(GridTag tag) const {
  GridFunction g;
  g.space = space_;
  g.values = space_->to_nodal(states_.back());
  g.tag = tag;
  return g;
}

FkppSolution solve_exponent(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& w0, double t,
                            int steps, const FkppOptions& opt) {
  if (t < 0.0) throw DomainError("solve_exponent: negative time");
  if (w0.dim() != params.d) throw DomainError("solve_exponent: dimension mismatch");
  if (steps <= 0) steps = std::max(1, static_cast<int>(std::ceil(opt.steps_per_unit * t - 1e-9)));
  const int M = w0.max_order();
  auto sp = std::make_shared<const SpectralSpace>(params, M, opt.nodes > 0 ? opt.nodes : M + 1);
  const double alpha = mech.alpha();

  for (int halving = 0; halving <= opt.max_halvings; ++halving, steps *= 2) {
    FkppSolution sol;
    sol.space_ = sp;
    sol.params_ = params;
    sol.alpha_ = alpha;
    sol.t_ = t;
    sol.dt_ = t / steps;
    sol.halvings_ = halving;
    sol.states_.reserve(steps + 1);
    sol.states_.push_back(w0);
    if (t == 0.0) {
      sol.stage_f_.clear();
      sol.states_.resize(1);
      sol.dt_ = 0.0;
      for (const auto& v : sp->to_nodal(w0)) sol.max_re_ = std::max(sol.max_re_, v.real());
      return sol;
    }
    const double dt = sol.dt_;
    const StepWeights wt(params, alpha, params.d * M, dt);
    double max_re = -std::numeric_limits<double>::infinity();
    try {
      for (int n = 0; n < steps; ++n) {
        const HermiteCoeffs& wn = sol.states_.back();
        std::array<HermiteCoeffs, 4> stage, N;
        std::array<std::vector<cplx>, 4> nodal;
        for (int j = 0; j < 4; ++j) {
          stage[j] = wn;
          for (std::size_t f = 0; f < wn.size(); ++f) stage[j][f] *= wt.ec[wn.order_at(f)][j];
          nodal[j] = sp->to_nodal(stage[j]);
        }
        double prev = std::numeric_limits<double>::infinity();
        int growth = 0, it = 0;
        bool done = false;
        for (it = 1; it <= opt.max_iter; ++it) {
          for (int k = 0; k < 4; ++k) N[k] = nonlinear(*sp, mech, nodal[k], max_re);
          double res = 0.0;
          for (int j = 0; j < 4; ++j) {
            HermiteCoeffs y = wn;
            for (std::size_t f = 0; f < y.size(); ++f) {
              const int o = y.order_at(f);
              cplx v = wt.ec[o][j] * wn[f];
              for (int k = 0; k < 4; ++k) v += dt * wt.a[o][j][k] * N[k][f];
              y[f] = v;
            }
            res = std::max(res, sup_diff(y.data(), stage[j].data()));
            stage[j] = std::move(y);
            nodal[j] = sp->to_nodal(stage[j]);
          }
          if (!std::isfinite(res)) throw Divergence{};
          if (res > prev) {
            if (++growth >= 3) throw Divergence{};
          } else {
            growth = 0;
          }
          prev = res;
          if (res < opt.tol * std::max(1.0, stage[3].max_abs())) {
            done = true;
            break;
          }
        }
        if (!done) throw Divergence{};
        for (int k = 0; k < 4; ++k) N[k] = nonlinear(*sp, mech, nodal[k], max_re);
        HermiteCoeffs y = wn;
        for (std::size_t f = 0; f < y.size(); ++f) {
          const int o = y.order_at(f);
          cplx v = wt.e1[o] * wn[f];
          for (int k = 0; k < 4; ++k) v += dt * wt.b[o][k] * N[k][f];
          y[f] = v;
        }
        sol.states_.push_back(std::move(y));
        sol.stage_f_.push_back(N);
        sol.max_iter_ = std::max(sol.max_iter_, it);
      }
    } catch (const Divergence&) {
      continue;
    }
    for (const auto& v : sp->to_nodal(sol.states_.back())) max_re = std::max(max_re, v.real());
    sol.max_re_ = max_re;
    return sol;
  }
  throw NumericalDivergence("solve_exponent: Picard iteration diverges after the allowed step halvings");
}

GridFunction solve_U(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                     int steps, Diagnostics* diag, const FkppOptions& opt) {
  const FkppSolution sol = solve_exponent(params, mech, cplx(0.0, 1.0) * c, t, steps, opt);
  warn_if(diag, sol.max_real_part() > 1e-9, "solve_U: Re U exceeds 1e-9 at some node");
  return sol.final_grid(GridTag::CharExponent);
}

GridFunction solve_V(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                     int steps, Diagnostics* diag, const FkppOptions& opt) {
  const FkppSolution sol = solve_exponent(params, mech, cplx(-1.0, 0.0) * c, t, steps, opt);
  GridFunction g = sol.final_grid(GridTag::LaplaceExponent);
  double worst = 0.0;
  for (auto& v : g.values) {
    double r = -v.real();
    if (r < 0.0) {
      worst = std::min(worst, r);
      r = 0.0;
    }
    v = r;
  }
  warn_if(diag, worst < -1e-12, "solve_V: negative undershoot below -1e-12 clipped");
  return g;
}

cplx char_fn_from(const FkppSolution& sol, const std::vector<WeightedPoint>& mu, Diagnostics* diag) {
  const auto& g = sol.space()->grid();
  const auto& ax = g.axis_nodes();
  const double lo = ax.front(), hi = ax.back();
  const HermiteCoeffs u = sol.final_coeffs();
  cplx s = 0.0;
  for (const auto& p : mu) {
    for (double xi : p.x) warn_if(diag, xi < lo || xi > hi, "exact_char_fn: atom outside the node hull");
    s += p.w * sol.space()->evaluate(u, p.x);
  }
  return std::exp(s);
}

cplx exact_char_fn(const OUParams& params, const BranchingMechanism& mech, const std::vector<WeightedPoint>& mu,
                   const HermiteCoeffs& c, double theta, double t, int steps, Diagnostics* diag,
                   const FkppOptions& opt) {
  if (theta == 0.0) return 1.0;
  const FkppSolution sol = solve_exponent(params, mech, cplx(0.0, theta) * c, t, steps, opt);
  warn_if(diag, sol.max_real_part() > 1e-9, "exact_char_fn: Re U exceeds 1e-9 at some node");
  return char_fn_from(sol, mu, diag);
}

ZDecomposition z_decomposition_check(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                     double t, int steps, const FkppOptions& opt) {
  const HermiteCoeffs w0 = cplx(0.0, 1.0) * c;
  const FkppSolution sol = solve_exponent(params, mech, w0, t, steps, opt);
  const auto& sp = *sol.space();
  ZDecomposition out;
  out.lhs = sp.to_nodal(sol.final_coeffs() - propagate(params, mech.alpha(), w0, t));
  HermiteCoeffs acc(c.dim(), c.max_order());
  const Rule1D q = gauss_legendre(8, 0.0, 1.0);
  // Z' carries eta (-U)^{1+beta}; Z'' carries psi1(-U) = rho U^2
  std::vector<cplx> n(sp.num_nodes());
  for (int k = 0; k < sol.steps(); ++k) {
    for (std::size_t m = 0; m < q.nodes.size(); ++m) {
      const double s = (k + q.nodes[m]) * sol.step();
      const auto u = sp.to_nodal(sol.at(s));
      for (std::size_t j = 0; j < n.size(); ++j) {
        cplx z = -u[j];
        if (z.real() < 0.0) z.real(0.0);
        n[j] = mech.eta() * cpow_one_plus_beta(z, mech.beta()) + mech.psi1(z);
      }
      axpy(acc, q.weights[m] * sol.step(), propagate(params, mech.alpha(), sp.to_coeffs(n), t - s));
    }
  }
  out.rhs = sp.to_nodal(acc);
  for (std::size_t j = 0; j < out.lhs.size(); ++j) out.gap = std::max(out.gap, std::abs(out.lhs[j] - out.rhs[j]));
  return out;
}

}  // namespace superou
