#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library routines it is meant to check.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <complex>
#include <functional>

namespace oracle {

using cplx = std::complex<double>;

// (e^{-w} - 1 + w) / w^2, accurate for small |w|.
inline cplx exp_tail_ratio(cplx w) {
  if (std::abs(w) < 0.2) {
    cplx term = 0.5, sum = 0.0;
    for (int k = 2; k < 30; ++k) {
      sum += term;
      term *= -w / static_cast<double>(k + 1);
    }
    return sum;
  }
  return (std::exp(-w) - 1.0 + w) / (w * w);
}

// z^{1+beta} through the Levy integral
//   (1/Gamma(-1-beta)) int_0^inf (e^{-zy} - 1 + zy) y^{-2-beta} dy.
// With L = 1/|z|: tanh-sinh on (0, L] for the y^{-beta} endpoint behaviour,
// 16-point Gauss-Kronrod panels of width L/2 on [L, Y], Y = 4000 L, and the
// exact contribution of (-1 + zy) on [Y, inf). The dropped oscillatory piece
// int_Y^inf e^{-zy} y^{-2-beta} is replaced by its leading integration-by-parts
// term e^{-zY} Y^{-2-beta} / z; the remainder is below Y^{-2-beta}/|z|.
inline cplx levy_power(cplx z, double beta) {
  const double r = std::abs(z);
  if (r == 0.0) return 0.0;
  const double L = 1.0 / r;
  const int panels = 7998;
  const double Y = L + 0.5 * L * panels;
  auto f = [&](double y) -> cplx {
    if (y <= 0.0) return 0.0;
    return z * z * exp_tail_ratio(z * y) * std::pow(y, -beta);
  };
  boost::math::quadrature::tanh_sinh<double> ts;
  auto re = [&](double y) { return f(y).real(); };
  auto im = [&](double y) { return f(y).imag(); };
  cplx acc(ts.integrate(re, 0.0, L, 1e-14), ts.integrate(im, 0.0, L, 1e-14));
  for (int k = 0; k < panels; ++k) {
    const double a = L + 0.5 * L * k, b = a + 0.5 * L;
    acc += cplx(boost::math::quadrature::gauss_kronrod<double, 15>::integrate(re, a, b, 0),
                boost::math::quadrature::gauss_kronrod<double, 15>::integrate(im, a, b, 0));
  }
  acc += -std::pow(Y, -1.0 - beta) / (1.0 + beta) + z * std::pow(Y, -beta) / beta;
  acc += std::exp(-z * Y) * std::pow(Y, -2.0 - beta) / z;
  return acc / boost::math::tgamma(-1.0 - beta);
}

// Adaptive Gauss-Kronrod on [a, inf) through exp-sinh-free truncation doubling:
// integrates [a, 2^k a] until successive totals agree to rel_tol.
inline double tail_integral_doubling(const std::function<double(double)>& g, double a,
                                     double rel_tol = 1e-12) {
  double total = 0.0, lo = a;
  for (int k = 0; k < 2000; ++k) {
    const double hi = 2.0 * lo;
    const double piece = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, lo, hi, 10, 1e-14);
    total += piece;
    lo = hi;
    if (std::fabs(piece) < rel_tol * std::fabs(total) * 1e-2) break;
  }
  return total;
}

}  // namespace oracle
