#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "superou/quadrature.hpp"

using namespace superou;

namespace {

// int u^k e^{-u^2} du over the real line
double hermite_moment(int k) {
  if (k % 2) return 0.0;
  return std::tgamma((k + 1) / 2.0);
}

}  // namespace

TEST_CASE("Gauss-Legendre exactness") {
  for (std::size_t n : {1u, 2u, 5u, 16u, 40u}) {
    const Rule1D r = gauss_legendre(n, 0.0, 2.0);
    for (std::size_t k = 0; k < 2 * n; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += r.weights[j] * std::pow(r.nodes[j], static_cast<double>(k));
      const double want = std::pow(2.0, k + 1.0) / (k + 1.0);
      CHECK(s == doctest::Approx(want).epsilon(1e-13));
    }
    for (std::size_t j = 1; j < n; ++j) CHECK(r.nodes[j] > r.nodes[j - 1]);
  }
}

TEST_CASE("Gauss-Hermite exactness and ordering") {
  for (std::size_t n : {1u, 2u, 3u, 8u, 17u, 40u, 64u}) {
    const Rule1D r = gauss_hermite(n);
    for (std::size_t j = 1; j < n; ++j) REQUIRE(r.nodes[j] > r.nodes[j - 1]);
    const std::size_t kmax = std::min<std::size_t>(2 * n - 1, 40);
    for (std::size_t k = 0; k <= kmax; ++k) {
      double s = 0.0, mag = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = r.weights[j] * std::pow(r.nodes[j], static_cast<double>(k));
        s += v;
        mag += std::fabs(v);
      }
      const double want = hermite_moment(static_cast<int>(k));
      CHECK(std::fabs(s - want) <= 1e-13 * mag);
    }
  }
  CHECK(gauss_hermite(5).nodes[2] == 0.0);
}

TEST_CASE("composite Gauss-Legendre") {
  const Rule1D r = composite_gauss_legendre(8, 4, 0.0, std::numbers::pi);
  double s = 0.0;
  for (std::size_t j = 0; j < r.nodes.size(); ++j) s += r.weights[j] * std::sin(r.nodes[j]);
  CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
}
