#include "superou/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace superou {

Rule1D gauss_legendre(std::size_t n, double a, double b) {
  if (n == 0) throw std::invalid_argument("gauss_legendre: n must be positive");
  Rule1D rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const long double pi = std::numbers::pi_v<long double>;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    long double x = std::cos(pi * (static_cast<long double>(i) + 0.75L) / (static_cast<long double>(n) + 0.5L));
    long double dp = 0.0L;
    for (int it = 0; it < 100; ++it) {
      long double p0 = 1.0L, p1 = 0.0L;
      for (std::size_t k = 1; k <= n; ++k) {
        const long double p2 = p1;
        p1 = p0;
        p0 = ((2.0L * k - 1.0L) * x * p1 - (k - 1.0L) * p2) / static_cast<long double>(k);
      }
      dp = static_cast<long double>(n) * (x * p0 - p1) / (x * x - 1.0L);
      const long double dx = p0 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-19L) break;
    }
    const long double w = 2.0L / ((1.0L - x * x) * dp * dp);
    const long double half = 0.5L * (static_cast<long double>(b) - a);
    const long double mid = 0.5L * (static_cast<long double>(b) + a);
    rule.nodes[i] = static_cast<double>(mid - half * x);
    rule.nodes[n - 1 - i] = static_cast<double>(mid + half * x);
    rule.weights[i] = rule.weights[n - 1 - i] = static_cast<double>(half * w);
  }
  return rule;
}

Rule1D gauss_hermite(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_hermite: n must be positive");
  Rule1D rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const long double pim4 = 1.0L / std::pow(std::numbers::pi_v<long double>, 0.25L);
  const long double nn = static_cast<long double>(n);
  long double z = 0.0L;
  // Newton on the orthonormal recurrence, seeded from the classical asymptotic
  // guesses for the largest roots and from previous roots for the rest.
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0L * nn + 1.0L) - 1.85575L * std::pow(2.0L * nn + 1.0L, -0.16667L);
    } else if (i == 1) {
      z -= 1.14L * std::pow(nn, 0.426L) / z;
    } else if (i == 2) {
      z = 1.86L * z - 0.86L * static_cast<long double>(rule.nodes[n - 1]);
    } else if (i == 3) {
      z = 1.91L * z - 0.91L * static_cast<long double>(rule.nodes[n - 2]);
    } else {
      z = 2.0L * z - static_cast<long double>(rule.nodes[n - i + 1]);
    }
    long double pp = 0.0L;
    for (int it = 0; it < 200; ++it) {
      long double p1 = pim4, p2 = 0.0L;
      for (std::size_t j = 1; j <= n; ++j) {
        const long double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0L / j) * p2 - std::sqrt((j - 1.0L) / j) * p3;
      }
      pp = std::sqrt(2.0L * nn) * p2;
      const long double dz = p1 / pp;
      z -= dz;
      if (std::fabs(dz) < 1e-19L * std::max(1.0L, std::fabs(z))) break;
    }
    rule.nodes[n - 1 - i] = static_cast<double>(z);
    rule.nodes[i] = static_cast<double>(-z);
    rule.weights[i] = rule.weights[n - 1 - i] = static_cast<double>(2.0L / (pp * pp));
  }
  // Newton seeding stores nodes in decreasing index order above; the middle
  // node (odd n) is exactly zero.
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

Rule1D composite_gauss_legendre(std::size_t panels, std::size_t order, double a, double b) {
  const Rule1D base = gauss_legendre(order);
  Rule1D rule;
  rule.nodes.reserve(panels * order);
  rule.weights.reserve(panels * order);
  const double h = (b - a) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    const double lo = a + h * static_cast<double>(p);
    for (std::size_t k = 0; k < order; ++k) {
      rule.nodes.push_back(lo + 0.5 * h * (base.nodes[k] + 1.0));
      rule.weights.push_back(0.5 * h * base.weights[k]);
    }
  }
  return rule;
}

}  // namespace superou
