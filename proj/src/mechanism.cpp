#include "superou/mechanism.hpp"

#include <cmath>
#include <numbers>

#include "superou/error.hpp"
#include "superou/quadrature.hpp"

namespace superou {

cplx cpow_one_plus_beta(cplx z, double beta) {
  if (z.real() < 0.0) throw DomainError("cpow_one_plus_beta: Re z < 0");
  const double r = std::abs(z);
  if (r == 0.0) return {0.0, 0.0};
  const double g = 1.0 + beta;
  const double mod = std::pow(r, g);
  const double ang = g * std::arg(z);
  return {mod * std::cos(ang), mod * std::sin(ang)};
}

namespace {

cplx cpow_beta(cplx z, double beta) {
  const double r = std::abs(z);
  if (r == 0.0) return {0.0, 0.0};
  return std::polar(std::pow(r, beta), beta * std::arg(z));
}

}  // namespace

BranchingMechanism::BranchingMechanism(double alpha, double rho, double eta, double beta)
    : alpha_(alpha), rho_(rho), eta_(eta), beta_(beta) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("mechanism: alpha must be > 0");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("mechanism: eta must be > 0");
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("mechanism: beta must lie in (0,1)");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw DomainError("mechanism: rho must be >= 0");
}

cplx BranchingMechanism::psi(cplx z) const {
  return -alpha_ * z + psi0(z);
}

cplx BranchingMechanism::psi0(cplx z) const {
  cplx v = eta_ * cpow_one_plus_beta(z, beta_);
  if (rho_ != 0.0) v += rho_ * z * z;
  return v;
}

cplx BranchingMechanism::psi1(cplx z) const {
  if (z.real() < 0.0) throw DomainError("psi1: Re z < 0");
  if (rho_ == 0.0) return {0.0, 0.0};
  return rho_ * z * z;
}

cplx BranchingMechanism::dpsi(cplx z) const {
  if (z.real() < 0.0) throw DomainError("dpsi: Re z < 0");
  return -alpha_ + 2.0 * rho_ * z + eta_ * (1.0 + beta_) * cpow_beta(z, beta_);
}

GreysConditionResult greys_condition_check(const std::function<double(double)>& psi, double scale) {
  GreysConditionResult res;
  if (!(scale > 0.0)) scale = 1.0;

  // Locate the last sign change on a geometric grid, then bisect it.
  double lo = 0.0, hi = -1.0;
  double prev = 0.0;
  for (int k = -20; k <= 200; ++k) {
    const double z = scale * std::ldexp(1.0, k);
    const double v = psi(z);
    if (!std::isfinite(v)) break;
    if (v > 0.0 && hi < 0.0) {
      lo = prev;
      hi = z;
    } else if (v <= 0.0) {
      hi = -1.0;
    }
    prev = z;
  }
  if (hi < 0.0) return res;  // psi not eventually positive
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (psi(mid) > 0.0 ? hi : lo) = mid;
  }
  // 1/psi has a pole at the root; start the tail integral a safe factor above it.
  res.z_star = 4.0 * hi;

  // Dyadic blocks [2^k z*, 2^{k+1} z*] in the variable s = log z.
  const Rule1D gl = gauss_legendre(16, 0.0, std::numbers::ln2);
  double total = 0.0;
  double d_prev = 0.0, r_prev = -1.0;
  for (int k = 0; k < 400; ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < gl.nodes.size(); ++j) {
      const double z = res.z_star * std::ldexp(std::exp(gl.nodes[j]), k);
      const double v = psi(z);
      if (!(v > 0.0)) return res;
      d += gl.weights[j] * z / v;
    }
    total += d;
    if (k > 0) {
      const double r = d / d_prev;
      if (r_prev > 0.0 && std::fabs(r - r_prev) < 1e-6 * r && r < 1.0 - 1e-3) {
        // Geometric tail of the dyadic blocks.
        res.tail_integral = total + d * r / (1.0 - r);
        res.converged = true;
        res.holds = std::isfinite(res.tail_integral);
        return res;
      }
      if (d < 1e-17 * total) {
        res.tail_integral = total;
        res.converged = true;
        res.holds = true;
        return res;
      }
      r_prev = r;
    }
    d_prev = d;
  }
  res.tail_integral = total;
  return res;
}

GreysConditionResult greys_condition_check(const BranchingMechanism& m) {
  return greys_condition_check([&m](double z) { return m.psi(z); }, largest_root_closed_form(m));
}

double largest_root_closed_form(const BranchingMechanism& m) {
  return std::pow(m.alpha() / m.eta(), 1.0 / m.beta());
}

double largest_root(const BranchingMechanism& m, double bracket_limit) {
  double hi = 4.0 * largest_root_closed_form(m);
  while (!(m.psi(hi) > 0.0)) {
    hi *= 2.0;
    if (hi > bracket_limit) throw NumericalDivergence("largest_root: no sign change below bracket limit");
  }
  // psi is convex with psi(0) = 0, so it is <= 0 exactly on [0, vbar].
  double lo = 0.0;
  while (hi - lo > 1e-13 * hi) {
    const double mid = 0.5 * (lo + hi);
    (m.psi(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace superou
