// superou: command-line driver for the experiments.
// Exit codes: 0 pass (or informational), 1 fail, 2 config error, 3 numerical divergence.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "superou/experiments.hpp"

using namespace superou;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment JSON")->required();
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--out", c.out, "output directory (default: config output_dir)");
}

int report_and_code(const ComparisonReport& r, const std::string& dir) {
  emit_report(r, dir);
  std::printf("%s: %s  max_error=%.3g  samples=%zu  runtime=%.1fs  -> %s\n", r.experiment.c_str(),
              r.pass ? "PASS" : (r.informational ? "INFO" : "FAIL"), r.max_error(), r.samples, r.runtime, dir.c_str());
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return r.pass || r.informational ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"supercritical super-OU experiments"};
  app.require_subcommand(1);
  Common common;
  std::string regime = "cs";
  double theta = 1.0;

  auto* validate = app.add_subcommand("validate", "simulator against the FKPP characteristic function");
  auto* lln = app.add_subcommand("lln", "law of large numbers trend");
  auto* clt = app.add_subcommand("clt", "central limit theorem in one regime");
  clt->add_option("--regime", regime, "cs, cc or cl")->check(CLI::IsMember({"cs", "cc", "cl"}))->required();
  auto* unit = app.add_subcommand("unit-clt", "unit-interval CLT");
  auto* massval = app.add_subcommand("massval", "total-mass Laplace transforms against the CSBP");
  auto* fkpp = app.add_subcommand("solve-fkpp", "solve the complex FKPP equation on the nodes");
  fkpp->add_option("--theta", theta, "scale of the test function");
  auto* stable = app.add_subcommand("sample-stable", "draws from the limit law against its characteristic function");
  auto* small = app.add_subcommand("small-value", "P(0 < W_t <= k_t) trend");
  for (auto* s : {validate, lln, clt, unit, massval, fkpp, stable, small}) add_common(s, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = load_config(common.config);
    if (app.get_subcommands().front()->count("--seed") > 0) cfg.seed = common.seed;
    const std::string dir = common.out.empty() ? cfg.output_dir : common.out;
    if (*validate) return report_and_code(run_oracle_validation(cfg), dir);
    if (*lln) return report_and_code(run_lln(cfg), dir);
    if (*clt) {
      const Regime r = regime == "cs" ? Regime::Cs : regime == "cc" ? Regime::Cc : Regime::Cl;
      return report_and_code(run_clt(cfg, r), dir);
    }
    if (*unit) return report_and_code(run_unit_clt(cfg), dir);
    if (*massval) return report_and_code(run_massval(cfg), dir);
    if (*fkpp) return report_and_code(run_solve_fkpp(cfg, theta), dir);
    if (*stable) return report_and_code(run_sample_stable(cfg), dir);
    if (*small) return report_and_code(run_small_value(cfg), dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const HypothesisViolation& e) {
    std::fprintf(stderr, "hypothesis violation: %s\n", e.what());
    return 2;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "domain error: %s\n", e.what());
    return 2;
  } catch (const NumericalDivergence& e) {
    std::fprintf(stderr, "numerical divergence: %s\n", e.what());
    return 3;
  } catch (const InsufficientSurvivors& e) {
    std::fprintf(stderr, "insufficient survivors: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
