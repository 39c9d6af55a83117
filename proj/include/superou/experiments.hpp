#pragma once

// Experiment orchestration: JSON configuration, seeded replicate fan-out,
// empirical characteristic function / KS comparisons and CSV/JSON reports.

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "superou/error.hpp"
#include "superou/limitlaw.hpp"
#include "superou/mechanism.hpp"
#include "superou/ou_spectral.hpp"

namespace superou {

struct TestFunctionTerm {
  MultiIndex p;
  double coeff = 1.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  double alpha = 1.0, rho = 0.0, eta = 1.0, beta = 0.5;
  OUParams ou;

  struct Numerics {
    int hermite_order = 16;
    int fkpp_steps = 32;       // steps per unit time
    int panels_per_unit = 64;  // limit-law quadrature panels
    int nodes = 0;             // limit-law nodes per axis (0 = default)
  } numerics;

  struct Sim {
    std::string engine = "auto";  // auto | particle | grid | csbp
    double n_scale = 200.0;
    std::int64_t k_max = 1000000;
    std::int64_t pop_cap = 10000000;
    int replicates = 2000;
    double horizon = 8.0;
    double delta_inf = 5.0;
    std::vector<double> times;  // trend grid (empty = experiment default)
    double grid_spacing = 0.075;
    double grid_dt = 1.0 / 16.0;
  } sim;

  struct Stats {
    std::vector<double> theta_grid{-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0};
    double stderr_multiplier = 4.0;
    double trend_multiplier = 2.0;
    int ks_samples = 1000000;
    double ks_threshold = 0.05;
    std::vector<double> lambdas{0.5, 1.0, 2.0};
    double small_value_rate = 0.1;
  } stats;

  std::string test_function_label = "phi0";
  std::vector<TestFunctionTerm> test_function{{MultiIndex{0}, 1.0}};
  std::vector<std::pair<std::vector<double>, double>> initial{{{0.0}, 1.0}};
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  bool informational = false;

  BranchingMechanism mechanism() const { return {alpha, rho, eta, beta}; }
  /// Coefficients of the test function on order max(hermite_order, max |p|).
  HermiteCoeffs test_coeffs() const;
  LimitOptions limit_options() const;
  double initial_mass() const;
};

/// Strict parse: unknown keys, wrong types, unresolvable presets and
/// out-of-range values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Canonical form (every field, defaults filled in).
nlohmann::json to_json(const ExperimentConfig& cfg);
/// 64-bit FNV-1a of the canonical dump.
std::uint64_t config_hash(const ExperimentConfig& cfg);

// ---- statistics ----

struct EcfPoint {
  cplx value;
  double stderr = 0.0;  // sqrt of the sample variance of e^{i theta X} over n
};
EcfPoint empirical_cf(std::span<const double> samples, double theta);

/// sup_x |F_a(x) - F_b(x)|.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

struct ThetaRow {
  double theta = 0.0;
  cplx ecf, target;
  double stderr = 0.0;
  double bias = 0.0;  // known deterministic offset added to the tolerance
  bool pass = false;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ComparisonReport {
  std::string experiment;
  std::vector<ThetaRow> rows;
  double stderr_multiplier = 4.0;
  bool ecf_pass = true;
  std::optional<double> ks_distance;
  double ks_threshold = 0.05;
  bool ks_pass = true;
  /// Trend test over the configured time grid, when one applies.
  std::optional<bool> trend_pass;
  bool informational = false;
  bool pass = false;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double runtime = 0.0;
  std::vector<Table> tables;
  std::vector<std::string> warnings;
  nlohmann::json details = nlohmann::json::object();

  double max_error() const;
  /// stderr at the theta attaining max_error.
  double stderr_at_max() const;
};

/// Fills report.rows from the samples; row pass iff
/// |ecf - target| <= multiplier * stderr + bias.
void compare_ecf(ComparisonReport& report, std::span<const double> samples, const std::vector<double>& thetas,
                 const std::function<cplx(double)>& target, const std::function<double(double)>& bias = {});

/// err_{k+1} <= err_k + multiplier * sqrt(se_k^2 + se_{k+1}^2) for every k.
bool non_increasing_within(const std::vector<double>& err, const std::vector<double>& se, double multiplier);

// ---- orchestration ----

/// SUPEROU_THREADS if set and positive, else the hardware concurrency.
int worker_count();

/// Calls fn(i) for i in [0, n) on worker_count() threads; the first exception
/// is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

enum class Engine { Particle, Grid, Csbp };
std::string to_string(Engine e);

/// The configured engine, or for "auto": csbp when every functional is a
/// multiple of the total mass, particles when the expected population stays
/// below 2e6, the lattice engine otherwise.
Engine select_engine(const ExperimentConfig& cfg, const std::vector<HermiteCoeffs>& fns, double t_max);

struct Trajectory {
  std::vector<double> mass;                 // per time
  std::vector<std::vector<double>> values;  // [time][functional]
};

/// One replicate (stream `stream`) observed at the increasing times.
Trajectory simulate_replicate(const ExperimentConfig& cfg, Engine engine, const std::vector<HermiteCoeffs>& fns,
                              const std::vector<double>& times, std::uint64_t stream);

// ---- experiments ----

ComparisonReport run_oracle_validation(const ExperimentConfig& cfg);
ComparisonReport run_clt(const ExperimentConfig& cfg, Regime regime);
ComparisonReport run_unit_clt(const ExperimentConfig& cfg);
ComparisonReport run_lln(const ExperimentConfig& cfg);
ComparisonReport run_massval(const ExperimentConfig& cfg);
ComparisonReport run_small_value(const ExperimentConfig& cfg);
/// U_t(theta f) on the quadrature nodes as a table (theta = first grid value).
ComparisonReport run_solve_fkpp(const ExperimentConfig& cfg, double theta);
/// ks_samples draws from the limit law of f against its characteristic function.
ComparisonReport run_sample_stable(const ExperimentConfig& cfg);

/// <dir>/<experiment>.csv (theta, re_ecf, im_ecf, re_target, im_target, stderr),
/// <dir>/<experiment>.json and <dir>/<experiment>_<table>.csv per table.
/// Throws std::runtime_error naming the path on I/O failure.
void emit_report(const ComparisonReport& report, const std::string& dir);
nlohmann::json report_json(const ComparisonReport& report);

}  // namespace superou
