// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Reports of the simulation criteria go to argv[1] (default acceptance_out).

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "../common/oracles.hpp"
#include "superou/csbp.hpp"
#include "superou/experiments.hpp"
#include "superou/fkpp.hpp"
#include "superou/limitlaw.hpp"
#include "superou/mechanism.hpp"
#include "superou/ou_spectral.hpp"
#include "superou/rng.hpp"

using namespace superou;

namespace {

std::string out_dir = "acceptance_out";
int failures = 0;
std::string summary;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void verdict(int id, const char* name, bool ok, const std::string& detail) {
  char line[1024];
  std::snprintf(line, sizeof line, "criterion %2d %-28s %s  %s\n", id, name, ok ? "PASS" : "FAIL", detail.c_str());
  std::fputs(line, stdout);
  summary += line;
  failures += !ok;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

ExperimentConfig config(const std::string& name) { return load_config(std::string(SUPEROU_CONFIG_DIR) + "/" + name); }

double phi_ref(const OUParams& ou, int p, double x) {
  const double u = std::sqrt(ou.b) * x / ou.sigma;
  return std::hermite(p, u) / std::sqrt(std::tgamma(p + 1.0) * std::pow(2.0, p));
}

double mehler_ref(const OUParams& ou, int p, double x, double t) {
  const double e = std::exp(-ou.b * t), s = std::sqrt(1.0 - e * e);
  const double sd = std::sqrt(ou.stationary_variance());
  auto g = [&](double y) {
    return phi_ref(ou, p, x * e + y * s) * std::exp(-0.5 * y * y / (sd * sd)) / (sd * std::sqrt(2.0 * std::numbers::pi));
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, -14.0 * sd, 14.0 * sd, 12, 1e-15);
}

double rk4(const BranchingMechanism& m, double lambda, double t, int steps) {
  double v = lambda, h = t / steps;
  auto f = [&](double y) { return -m.psi(std::max(y, 0.0)); };
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(v), k2 = f(v + 0.5 * h * k1), k3 = f(v + 0.5 * h * k2), k4 = f(v + h * k3);
    v += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return v;
}

void spectral() {
  const auto t0 = Clock::now();
  double ortho = 0.0, eig = 0.0;
  const OUParams ou{1.0, 2.0, 1};
  const SpectralSpace sp(ou, 8, 12);
  // <phi_p, phi_q> by the node quadrature of phi_p phi_q
  for (int p = 0; p <= 8; ++p)
    for (int q = 0; q <= 8; ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < sp.num_nodes(); ++j) {
        const double x = sp.grid().node(j)[0];
        s += sp.grid().weight(j) * phi_ref(ou, p, x) * phi_ref(ou, q, x);
      }
      ortho = std::max(ortho, std::fabs(s - (p == q)));
      const auto cq = sp.to_coeffs(sp.to_nodal(HermiteCoeffs::basis(1, 8, MultiIndex{p})));
      ortho = std::max(ortho, std::abs(cq[q] - cplx(p == q)));
    }
  const double t_ortho = since(t0);
  const OUParams ou2{0.8, 1.7, 1};
  const SpectralSpace sp2(ou2, 6, 14);
  for (int p = 0; p <= 6; ++p)
    for (double t : {0.1, 1.0, 5.0}) {
      const auto vals = sp2.to_nodal(pt_apply(ou2, HermiteCoeffs::basis(1, 6, MultiIndex{p}), t));
      for (std::size_t j = 0; j < sp2.num_nodes(); ++j)
        eig = std::max(eig, std::fabs(vals[j].real() - mehler_ref(ou2, p, sp2.grid().node(j)[0], t)));
    }
  verdict(1, "spectral correctness", ortho <= 1e-10 && eig <= 1e-8 && t_ortho < 1.0,
          fmt("orthonormality %.2e, eigenrelation %.2e, library time %.3fs", ortho, eig, t_ortho));
}

void complex_power() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> re(0.0, 5.0), im(-5.0, 5.0), bb(0.01, 0.99);
  int violations = 0;
  for (int k = 0; k < 100000; ++k) {
    const double beta = bb(gen);
    const cplx z0(re(gen), im(gen)), z1(re(gen), im(gen));
    const double lhs = std::abs(cpow_one_plus_beta(z0, beta) - cpow_one_plus_beta(z1, beta));
    const double rhs = (1 + beta) * (std::pow(std::abs(z0), beta) + std::pow(std::abs(z1), beta)) * std::abs(z0 - z1);
    violations += !(lhs <= rhs);
  }
  std::uniform_real_distribution<double> rad(0.05, 10.0), ang(-std::numbers::pi / 2, std::numbers::pi / 2);
  double levy = 0.0;
  for (double beta : {0.2, 0.5, 0.8})
    for (int k = 0; k < 3; ++k) {
      const cplx z = std::polar(rad(gen), ang(gen));
      levy = std::max(levy, std::abs(cpow_one_plus_beta(z, beta) - oracle::levy_power(z, beta)));
    }
  const double rt = since(t0);
  verdict(2, "complex-power identities", violations == 0 && levy <= 1e-6 && rt < 5.0,
          fmt("Lipschitz violations %.0f / 1e5, Levy integral %.2e, %.1fs", violations, levy, rt));
}

void csbp_closure() {
  const auto t0 = Clock::now();
  const auto m = BranchingMechanism::pure_stable(3.0, 1.0, 0.5);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double lam = 0.01 * std::pow(1e5, i / 19.0);
    for (int j = 0; j < 20; ++j) {
      const double t = 0.05 + 0.25 * j;
      const double a = v_t(m, lam, t);
      const double scale = std::max(1.0, a);
      worst = std::max({worst, std::fabs(a - v_t_ode(m, lam, t)) / scale, std::fabs(a - rk4(m, lam, t, 20000)) / scale});
    }
  }
  const auto m1 = BranchingMechanism::pure_stable(1.0, 1.0, 0.5);
  const auto tab = FamilyMassTable::shared(0.5);
  const int n = 100000;
  const double x = 0.1, dt = 0.5;  // P(Y_dt = 0) about 0.13
  Philox rng(5, 0);
  double zeros = 0.0;
  for (int i = 0; i < n; ++i) zeros += transition_sample(m1, x, dt, rng, tab.get()) == 0.0;
  const double p0 = std::exp(-x * vbar_t(m1, dt));
  const double z = std::fabs(zeros / n - p0) / std::sqrt(p0 * (1 - p0) / n);
  const double rt = since(t0);
  verdict(3, "CSBP oracle closure", worst <= 1e-8 && z <= 4.0 && rt < 60.0,
          fmt("v_t vs ODE %.2e, extinction %.4f vs %.4f (%.2f se)", worst, zeros / n, p0, z) +
              fmt(", %.1fs", rt));
}

void fkpp_oracle() {
  const auto t0 = Clock::now();
  const OUParams ou{1.0, 1.0, 1};
  const auto m = BranchingMechanism::pure_stable(1.0, 1.0, 0.5);
  auto poly = [](std::initializer_list<std::pair<int, double>> terms) {
    HermiteCoeffs c(1, 16);
    for (auto [p, v] : terms) c.at(MultiIndex{p}) += v;
    return c;
  };
  double re_max = -1.0;
  for (const auto& f : {poly({{0, 1.0}}), poly({{1, 1.0}}), poly({{2, 1.0}}), poly({{0, 1.0}, {1, 0.7}})})
    for (double th : {0.25, 1.0, -2.0})
      re_max = std::max(re_max, solve_exponent(ou, m, cplx(0.0, th) * f, 1.0, 32).max_real_part());
  const auto c = cplx(0.0, 1.0) * poly({{0, 0.5}, {1, 1.0}});
  const auto whole = solve_exponent(ou, m, c, 2.0, 64);
  // different step lengths on the two legs
  const auto second = solve_exponent(ou, m, solve_exponent(ou, m, c, 0.75, 20).final_coeffs(), 1.25, 50);
  const auto& sp = *whole.space();
  const auto a = sp.to_nodal(whole.final_coeffs()), b = sp.to_nodal(second.final_coeffs());
  double flow = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) flow = std::max(flow, std::abs(a[j] - b[j]));
  double reduce = 0.0;
  for (double lam : {0.3, 2.0, 7.0}) {
    const auto V = solve_V(ou, m, poly({{0, lam}}), 1.0, 32);
    // independent reference: RK4 of v' = -psi(v)
    const double ref = rk4(m, lam, 1.0, 20000);
    for (auto v : V.values) reduce = std::max(reduce, std::fabs(v.real() - ref));
  }
  const double gap = z_decomposition_check(ou, m, poly({{1, 1.0}, {2, 0.5}})).gap;
  const double rt = since(t0);
  verdict(4, "FKPP oracle", re_max <= 1e-9 && flow <= 1e-8 && reduce <= 1e-8 && gap <= 1e-7 && rt < 30.0,
          fmt("max Re U %.1e, flow %.1e, constant-f %.1e, Z gap %.1e", re_max, flow, reduce, gap) + fmt(", %.1fs", rt));
}

void end_to_end() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const char* name : {"validate_phi0.json", "validate_phi1.json"}) {
    const auto cfg = config(name);
    const auto r = run_oracle_validation(cfg);
    emit_report(r, out_dir + "/" + cfg.name);
    ok = ok && r.pass;
    double worst = 0.0;
    for (const auto& row : r.rows)
      worst = std::max(worst, std::abs(row.ecf - row.target) / (4.0 * row.stderr + row.bias));
    detail += cfg.test_function_label + fmt(": worst error / tolerance %.2f; ", worst);
  }
  const double rt = since(t0);
  verdict(5, "end-to-end simulator", ok && rt < 600.0, detail + fmt("%.0fs", rt));
}

void limit_identities() {
  const auto t0 = Clock::now();
  const OUParams ou{1.0, 1.0, 1};
  const auto m = BranchingMechanism::pure_stable(3.0, 1.0, 0.5);
  auto phi = [](int p, double v = 1.0) { return HermiteCoeffs::basis(1, 8, MultiIndex{p}, v); };
  const double gap = series_identity_check(ou, m, phi(2)).gap;
  // eta <(-i phi_1)^{1.5}, phi> with <|phi_1|^{1.5}, phi> = 2^{0.75} Gamma(1.25) / sqrt(pi)
  const double closed = std::pow(2.0, 0.75) * std::tgamma(1.25) / std::sqrt(std::numbers::pi);
  const cplx ni = std::polar(1.0, -0.75 * std::numbers::pi);
  const cplx target = 0.5 * closed * (ni + std::conj(ni));
  const double formula = std::abs(m_functional(ou, m, phi(1)) - target);
  const auto mix = phi(0, 0.3) + phi(1) + phi(2, 0.5);
  std::vector<double> scaled;
  for (double t : {5.0, 10.0, 20.0, 40.0})
    scaled.push_back(t * std::abs(m_t_functional(ou, m, mix, t) / t - target));
  const double K = 1.1 * std::max(scaled[0], scaled[1]);
  const bool cesaro = scaled[2] <= K && scaled[3] <= K;
  const double rt = since(t0);
  verdict(6, "limit-law identities", gap <= 1e-4 && formula <= 1e-6 && cesaro && rt < 30.0,
          fmt("series gap %.1e, m formula %.1e, t|m_t/t - m| = %.3f %.3f", gap, formula, scaled[0], scaled[1]) +
              fmt(" %.3f %.3f", scaled[2], scaled[3]) + fmt(", %.1fs", rt));
}

void stable_sampler() {
  const auto t0 = Clock::now();
  const auto cfg = config("sample_stable.json");
  const auto r = run_sample_stable(cfg);
  emit_report(r, out_dir + "/" + cfg.name);
  const double rt = since(t0);
  verdict(7, "stable sampler", r.max_error() <= 4e-3 && rt < 30.0,
          fmt("max |ecf - e^m| %.2e over %.0f draws, %.1fs", r.max_error(), r.samples, rt));
}

void clt_regimes() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  const std::pair<const char*, Regime> runs[] = {
      {"clt_cs.json", Regime::Cs}, {"clt_cc.json", Regime::Cc}, {"clt_cl.json", Regime::Cl}};
  for (const auto& [name, regime] : runs) {
    const auto cfg = config(name);
    const auto r = run_clt(cfg, regime);
    emit_report(r, out_dir + "/" + cfg.name);
    const bool survivors = r.details["survivors"].get<std::size_t>() >= 2000;
    const bool horizon_ok = r.ecf_pass && r.ks_pass;
    const bool pre_asymptotic = !horizon_ok && r.trend_pass.value_or(false);
    ok = ok && survivors && (horizon_ok || pre_asymptotic);
    detail += to_string(regime) + (horizon_ok ? " pass" : pre_asymptotic ? " pre-asymptotic (trend ok)" : " FAIL") +
              fmt(" (err/se %.2f, ks %.3f); ", r.max_error() / r.stderr_at_max(), r.ks_distance.value_or(1.0));
  }
  const double rt = since(t0);
  verdict(8, "CLT regimes", ok && rt < 7200.0, detail + fmt("%.0fs", rt));
}

void lln() {
  const auto t0 = Clock::now();
  const auto cfg = config("lln.json");
  const auto r = run_lln(cfg);
  emit_report(r, out_dir + "/" + cfg.name);
  std::ostringstream os;
  os << "mean |H_t - H_proxy|:";
  for (const auto& row : r.tables[0].rows) os << ' ' << fmt("%.4f", row[1]);
  const double rt = since(t0);
  verdict(9, "LLN", r.trend_pass.value_or(false) && rt < 600.0, os.str() + fmt(", %.1fs", rt));
}

void small_value() {
  const auto t0 = Clock::now();
  const auto cfg = config("small_value.json");
  const auto r = run_small_value(cfg);
  emit_report(r, out_dir + "/" + cfg.name);
  std::ostringstream os;
  os << "P(0 < W_t <= k_t):";
  for (const auto& row : r.tables[0].rows) os << ' ' << fmt("%.4f", row[2]);
  const double rt = since(t0);
  verdict(10, "small-value decay", r.trend_pass.value_or(false) && rt < 300.0, os.str() + fmt(", %.1fs", rt));
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  if (argc > 1) out_dir = argv[1];
  const std::function<void()> criteria[] = {spectral, complex_power, csbp_closure, fkpp_oracle, end_to_end,
                                           limit_identities, stable_sampler, clt_regimes, lln, small_value};
  int id = 0;
  for (const auto& c : criteria) {
    ++id;
    try {
      c();
    } catch (const std::exception& e) {
      verdict(id, "(exception)", false, e.what());
    }
  }
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  // kept next to the reports, since ctest hides the output of passing tests
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir + "/summary.txt") << summary << 10 - failures << " of 10 criteria passed\n";
  return failures == 0 ? 0 : 1;
}
