#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <numbers>
#include <vector>

#include "superou/csbp.hpp"
#include "superou/fkpp.hpp"
#include "superou/rng.hpp"

using namespace superou;

namespace {

const OUParams ou{1.0, 1.0, 1};
const BranchingMechanism stable1 = BranchingMechanism::pure_stable(1.0, 1.0, 0.5);

HermiteCoeffs poly(int M, std::vector<std::pair<int, double>> terms) {
  HermiteCoeffs c(1, M);
  for (auto [p, v] : terms) c[p] = v;
  return c;
}

double phi_p_1d(int p, double x) {
  return std::hermite(p, x) / std::sqrt(std::tgamma(p + 1.0) * std::pow(2.0, p));
}

// (P_t g)(x) for sigma = b = 1 by Gauss-Kronrod against the Mehler kernel.
double mehler(const std::function<double(double)>& g, double x, double t) {
  const double m = x * std::exp(-t), s = std::sqrt(0.5 * (1.0 - std::exp(-2.0 * t)));
  auto k = [&](double z) { return g(m + s * z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  double acc = 0.0;
  for (int j = -16; j < 16; ++j)
    acc += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(k, 0.75 * j, 0.75 * (j + 1), 5, 1e-14);
  return acc;
}

// v' = -psi(v) in the complex plane by RK4 with a fine fixed step.
cplx complex_v(const BranchingMechanism& m, cplx v0, double t, int steps = 20000) {
  auto rhs = [&](cplx v) { return m.alpha() * v - m.rho() * v * v - m.eta() * std::pow(v, 1.0 + m.beta()); };
  const double h = t / steps;
  cplx v = v0;
  for (int n = 0; n < steps; ++n) {
    const cplx k1 = rhs(v), k2 = rhs(v + 0.5 * h * k1), k3 = rhs(v + 0.5 * h * k2), k4 = rhs(v + h * k3);
    v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return v;
}

double nodal_sup(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

}  // namespace

TEST_CASE("zero data stays zero") {
  const auto U = solve_U(ou, stable1, HermiteCoeffs(1, 16), 1.0);
  for (auto v : U.values) CHECK(std::abs(v) == 0.0);
  const auto V = solve_V(ou, stable1, HermiteCoeffs(1, 16), 1.0);
  for (auto v : V.values) CHECK(v.real() == 0.0);
  CHECK_THROWS_AS(solve_U(ou, stable1, HermiteCoeffs(1, 4), -1.0), DomainError);
}

TEST_CASE("constant data reduces to the scalar cumulant equation") {
  for (double lam : {0.3, 2.0, 7.0}) {
    const auto V = solve_V(ou, stable1, poly(16, {{0, lam}}), 1.0);
    const double ref = v_t(stable1, lam, 1.0);
    for (auto v : V.values) CHECK(std::abs(v.real() - ref) < 1e-8);
  }
  // complex data against an independent RK4 of v' = -psi(v), U = -v
  const BranchingMechanism quad(1.0, 0.3, 1.0, 0.5);
  for (const auto* m : {&stable1, &quad})
    for (double th : {0.5, 2.0}) {
      const auto U = solve_U(ou, *m, poly(16, {{0, th}}), 1.0);
      const cplx ref = -complex_v(*m, cplx(0.0, -th), 1.0);
      for (auto v : U.values) CHECK(std::abs(v - ref) < 1e-8);
    }
}

TEST_CASE("linearization for small data") {
  FkppOptions opt;
  opt.tol = 1e-15;
  const auto c = poly(16, {{1, 1.0}, {2, 0.5}});
  auto defect = [&](double eps) {
    const auto U = solve_U(ou, stable1, cplx(eps, 0.0) * c, 1.0, 0, nullptr, opt);
    const auto lin = U.space->to_nodal(cplx(0.0, eps) * palpha_apply(ou, 1.0, c, 1.0));
    return nodal_sup(U.values, lin);
  };
  const double d4 = defect(1e-4), d6 = defect(1e-6);
  MESSAGE("defect(1e-4) = " << d4 << ", defect(1e-6) = " << d6);
  // O(eps^{1.5}): two decades in eps give three in the defect
  const double C = d4 / std::pow(1e-4, 1.5);
  CHECK(d6 <= 1.5 * C * std::pow(1e-6, 1.5));
  CHECK(d6 >= 0.5 * C * std::pow(1e-6, 1.5));
}

TEST_CASE("half-plane preservation") {
  const std::vector<HermiteCoeffs> fs = {poly(16, {{0, 1.0}}), poly(16, {{1, 1.0}}), poly(16, {{2, 1.0}}),
                                         poly(16, {{0, 1.0}, {1, 0.7}}), poly(16, {{1, 0.4}, {3, 0.3}})};
  for (const auto& f : fs)
    for (double th : {0.25, 1.0, -2.0}) {
      const auto sol = solve_exponent(ou, stable1, cplx(0.0, th) * f, 1.0);
      CHECK(sol.max_real_part() <= 1e-9);
      Diagnostics diag;
      solve_U(ou, stable1, cplx(th, 0.0) * f, 1.0, 0, &diag);
      CHECK(diag.warnings.empty());
    }
}

TEST_CASE("a-priori bound by P^alpha |f|") {
  for (int p : {1, 2}) {
    const auto U = solve_U(ou, stable1, poly(16, {{p, 1.0}}), 1.0);
    const auto& xs = U.space->grid().axis_nodes();
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double bound = std::exp(1.0) * mehler([&](double y) { return std::fabs(phi_p_1d(p, y)); }, xs[j], 1.0);
      CHECK(std::abs(U.values[j]) <= bound + 1e-8);
    }
  }
}

TEST_CASE("flow property") {
  const auto c = cplx(0.0, 1.0) * poly(16, {{0, 0.5}, {1, 1.0}});
  const auto whole = solve_exponent(ou, stable1, c, 2.0, 64);
  const auto first = solve_exponent(ou, stable1, c, 1.0, 32);
  const auto second = solve_exponent(ou, stable1, first.final_coeffs(), 1.0, 32);
  const auto& sp = *whole.space();
  CHECK(nodal_sup(sp.to_nodal(whole.final_coeffs()), sp.to_nodal(second.final_coeffs())) < 1e-8);
  // legs with different step lengths
  const auto a = solve_exponent(ou, stable1, solve_exponent(ou, stable1, c, 0.75, 20).final_coeffs(), 1.25, 50);
  CHECK(nodal_sup(sp.to_nodal(whole.final_coeffs()), sp.to_nodal(a.final_coeffs())) < 1e-8);
  // dense output at the step boundary reproduces the stored state
  CHECK((whole.at(1.0) - first.final_coeffs()).max_abs() < 1e-8);
}

TEST_CASE("Laplace exponent is monotone in the data") {
  const auto f = poly(16, {{0, 1.0}, {2, 0.3}});
  const auto g = poly(16, {{0, 1.5}, {2, 0.3}});
  const auto h = poly(16, {{0, 1.7}, {2, 0.6}});  // h - g = 0.2 + 0.3 phi_2 > 0
  const auto Vf = solve_V(ou, stable1, f, 1.0);
  const auto Vg = solve_V(ou, stable1, g, 1.0);
  const auto Vh = solve_V(ou, stable1, h, 1.0);
  for (std::size_t j = 0; j < Vf.values.size(); ++j) {
    CHECK(Vf.values[j].real() >= 0.0);
    CHECK(Vf.values[j].real() <= Vg.values[j].real() + 1e-12);
    CHECK(Vg.values[j].real() <= Vh.values[j].real() + 1e-12);
  }
}

TEST_CASE("Z decomposition closes") {
  const BranchingMechanism quad(1.0, 0.3, 1.0, 0.5);
  CHECK(z_decomposition_check(ou, stable1, HermiteCoeffs(1, 16)).gap == 0.0);
  for (const auto* m : {&stable1, &quad})
    for (double s : {1.0, 0.5}) {
      const auto z = z_decomposition_check(ou, *m, poly(16, {{1, s}, {2, 0.5 * s}}));
      CHECK(z.gap <= 1e-7);
    }
}

TEST_CASE("characteristic function from the exponent") {
  const auto c = poly(16, {{0, 1.0}, {1, 0.5}});
  const std::vector<WeightedPoint> mu = {{{0.0}, 1.0}, {{1.3}, 0.5}};
  CHECK(exact_char_fn(ou, stable1, mu, c, 0.0, 1.0) == cplx(1.0));
  for (double th : {0.3, 1.0, 3.0}) {
    const cplx both = exact_char_fn(ou, stable1, mu, c, th, 1.0);
    CHECK(std::abs(both) <= 1.0);
    const cplx a = exact_char_fn(ou, stable1, {{{0.0}, 1.0}}, c, th, 1.0);
    const cplx b = exact_char_fn(ou, stable1, {{{1.3}, 1.0}}, c, th, 1.0);
    CHECK(std::abs(both - a * std::exp(0.5 * std::log(b))) < 1e-12);
  }
  Diagnostics diag;
  exact_char_fn(ou, stable1, {{{40.0}, 1.0}}, c, 0.5, 1.0, 0, &diag);
  CHECK(!diag.warnings.empty());
}

TEST_CASE("total mass characteristic function against CSBP sampling") {
  // delta_0 and f = 1: E exp(i theta Y_1) for the CSBP from 1
  auto tab = FamilyMassTable::shared(0.5);
  const int n = 100000;
  std::vector<double> y(n);
  for (int r = 0; r < n; ++r) {
    Philox rng(2024, r);
    y[r] = transition_chain(stable1, 1.0, 1.0, rng, tab.get());
  }
  for (double th : {0.25, 0.5, 1.0}) {
    cplx s = 0.0;
    double s2 = 0.0;
    for (double v : y) {
      s += std::polar(1.0, th * v);
    }
    const cplx mean = s / static_cast<double>(n);
    for (double v : y) s2 += std::norm(std::polar(1.0, th * v) - mean);
    const double se = std::sqrt(s2 / (n - 1.0) / n);
    const cplx ex = exact_char_fn(ou, stable1, {{{0.0}, 1.0}}, poly(16, {{0, 1.0}}), th, 1.0);
    MESSAGE("theta " << th << " mc " << mean << " exact " << ex << " se " << se);
    CHECK(std::abs(mean - ex) < 4.0 * se);
  }
}

TEST_CASE("automatic step halving") {
  FkppOptions opt;
  opt.max_halvings = 0;
  CHECK_THROWS_AS(solve_exponent(ou, stable1, cplx(0.0, 60.0) * poly(8, {{0, 1.0}}), 1.0, 1, opt),
                  NumericalDivergence);
  const auto sol = solve_exponent(ou, stable1, cplx(0.0, 60.0) * poly(8, {{0, 1.0}}), 1.0, 1);
  CHECK(sol.halvings() > 0);
  const cplx ref = -complex_v(stable1, cplx(0.0, -60.0), 1.0, 200000);
  MESSAGE("halvings " << sol.halvings() << " U " << sol.final_coeffs()[0] << " ref " << ref);
  // a handful of coarse steps across a fast transient
  CHECK(std::abs(sol.final_coeffs()[0] - ref) < 1e-5 * std::abs(ref));
}

TEST_CASE("grid convergence") {
  // doubling M and halving dt, compared on the M = 16 nodes
  auto change = [&](const HermiteCoeffs& f16, const HermiteCoeffs& f32, double radius = 1e9) {
    const auto a = solve_exponent(ou, stable1, cplx(0.0, 1.0) * f16, 1.0, 32);
    const auto b = solve_exponent(ou, stable1, cplx(0.0, 1.0) * f32, 1.0, 64);
    const auto ga = a.final_grid(GridTag::CharExponent);
    double d = 0.0;
    const auto& xs = a.space()->grid().axis_nodes();
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (std::fabs(xs[j]) > radius) continue;
      const double x[1] = {xs[j]};
      d = std::max(d, std::abs(ga.values[j] - b.space()->evaluate(b.final_coeffs(), x)));
    }
    return d;
  };
  // data without zeros: the nonlinearity stays analytic
  for (double th : {0.25, 1.0}) {
    CHECK(change(poly(16, {{0, th}}), poly(32, {{0, th}})) < 1e-6);
    CHECK(change(poly(16, {{0, th}, {2, 0.3 * th}}), poly(32, {{0, th}, {2, 0.3 * th}})) < 1e-6);
  }
  // a sign change in f puts a |x|^{1+beta} kink into psi0(-U) and the
  // Hermite coefficients decay only algebraically; measured, not 1e-6.
  // The outermost M = 32 nodes are dominated by round-off in phi_p, so the
  // comparison is restricted to the bulk of phi.
  const double kinked = change(poly(16, {{1, 1.0}}), poly(32, {{1, 1.0}}), 3.0);
  MESSAGE("phi_1 change under refinement on |x| <= 3: " << kinked);
  CHECK(kinked < 1e-2);
}

TEST_CASE("runtime at the default resolution") {
  const auto t0 = std::chrono::steady_clock::now();
  for (int p = 0; p < 3; ++p) z_decomposition_check(ou, stable1, poly(16, {{p, 1.0}}));
  const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(el < 30.0);
}
