#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "superou/experiments.hpp"
#include "superou/fkpp.hpp"
#include "superou/rng.hpp"

using namespace superou;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base() {
  return json::parse(R"({
    "mechanism": {"alpha": 1.0, "eta": 1.0, "beta": 0.5},
    "ou": {"sigma": 1.0, "b": 1.0, "d": 1},
    "sim": {"replicates": 200},
    "seed": 5
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("superou_test_" + name);
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SUPEROU_CLI) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST_CASE("config defaults and presets") {
  const auto c = config_from_json(base());
  CHECK(c.alpha == 1.0);
  CHECK(c.sim.replicates == 200);
  CHECK(c.stats.theta_grid.size() == 8);
  CHECK(c.test_function.size() == 1);
  CHECK(c.test_coeffs().at(MultiIndex{0}) == cplx(1.0));

  auto j = base();
  j["test_function"] = "phi2";
  CHECK(config_from_json(j).test_coeffs().at(MultiIndex{2}) == cplx(1.0));
  j["test_function"] = json::parse(R"([{"p": [1], "c": 0.5}, "phi3"])");
  const auto f = config_from_json(j).test_coeffs();
  CHECK(f.at(MultiIndex{1}) == cplx(0.5));
  CHECK(f.at(MultiIndex{3}) == cplx(1.0));
  j["test_function"] = "zero";
  CHECK(config_from_json(j).test_coeffs().is_zero());
}

TEST_CASE("config validation errors") {
  auto bad = [](auto edit) {
    auto j = base();
    edit(j);
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  };
  bad([](json& j) { j["unknown"] = 1; });
  bad([](json& j) { j["sim"]["replicats"] = 1000; });
  bad([](json& j) { j["sim"]["replicates"] = 99; });
  bad([](json& j) { j["sim"]["replicates"] = "many"; });
  bad([](json& j) { j["mechanism"]["beta"] = 1.5; });
  bad([](json& j) { j["mechanism"]["rho"] = 0.3; j["mechanism"]["tail"] = "pure_stable"; });
  bad([](json& j) { j["ou"]["b"] = -1.0; });
  bad([](json& j) { j["test_function"] = "gauss"; });
  bad([](json& j) { j["test_function"] = json::parse(R"([{"p": [1, 0]}])"); });
  bad([](json& j) { j["sim"]["engine"] = "quantum"; });
  bad([](json& j) { j["sim"]["times"] = json::parse("[4, 2]"); });
  bad([](json& j) { j["initial"] = json::parse(R"([{"x": [0.0], "w": -1}])"); });
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("config hash") {
  const auto c = config_from_json(base());
  CHECK(config_hash(c) == config_hash(config_from_json(to_json(c))));
  auto j = base();
  j["mechanism"]["alpha"] = 1.0 + 1e-12;
  CHECK(config_hash(config_from_json(j)) != config_hash(c));
  j = base();
  j["sim"]["replicates"] = 201;
  CHECK(config_hash(config_from_json(j)) != config_hash(c));
  j = base();
  j["stats"] = {{"theta_grid", {0.25}}};
  CHECK(config_hash(config_from_json(j)) != config_hash(c));
  j = base();
  j["seed"] = 6;
  CHECK(config_hash(config_from_json(j)) != config_hash(c));
}

TEST_CASE("empirical characteristic function and KS distance") {
  const std::vector<double> x{0.3, -1.2, 2.0, 0.7};
  const auto p0 = empirical_cf(x, 0.0);
  CHECK(p0.value == cplx(1.0));
  CHECK(p0.stderr == 0.0);
  cplx direct = 0.0;
  for (double v : x) direct += std::exp(cplx(0.0, 0.8 * v));
  CHECK(std::abs(empirical_cf(x, 0.8).value - direct / 4.0) < 1e-15);

  CHECK(ks_two_sample({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_two_sample({1, 2}, {5, 6, 7}) == 1.0);
  // F_a(3) = 1 against F_b(3) = 1/2
  CHECK(ks_two_sample({1, 2, 3}, {1.5, 2.5, 3.5, 4.5}) == doctest::Approx(0.5));

  CHECK(non_increasing_within({1.0, 0.5, 0.3}, {0.1, 0.1, 0.1}, 2.0));
  CHECK(non_increasing_within({1.0, 1.2, 0.3}, {0.1, 0.1, 0.1}, 2.0));
  CHECK(!non_increasing_within({1.0, 1.3, 0.3}, {0.1, 0.1, 0.1}, 2.0));
}

TEST_CASE("closed loop: stable draws pass the ECF comparator") {
  const StableLaw law = StableLaw::from_parts(0.5, 0.3, 0.1);
  std::vector<double> draws(40000);
  Philox rng(9, 0);
  for (auto& d : draws) d = stable_sample(law, rng);
  ComparisonReport r;
  compare_ecf(r, draws, {-2.0, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0},
              [&](double th) { return char_fn_eval(law, th); });
  CHECK(r.ecf_pass);
  for (const auto& row : r.rows) CHECK(std::abs(row.ecf) <= 1.0 + 3.0 * row.stderr + 1e-12);
  CHECK(r.rows[4].ecf == cplx(1.0));
}

TEST_CASE("worker pool preserves replicate order") {
  auto cfg = config_from_json(base());
  const std::vector<HermiteCoeffs> fns{cfg.test_coeffs()};
  setenv("SUPEROU_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  std::vector<double> a(64), b(64);
  parallel_for(a.size(), [&](std::size_t i) { a[i] = simulate_replicate(cfg, Engine::Csbp, fns, {1.0}, i).mass[0]; });
  setenv("SUPEROU_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  parallel_for(b.size(), [&](std::size_t i) { b[i] = simulate_replicate(cfg, Engine::Csbp, fns, {1.0}, i).mass[0]; });
  CHECK(a == b);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw NumericalDivergence("x");
                  }),
                  NumericalDivergence);
  unsetenv("SUPEROU_THREADS");
}

TEST_CASE("engine selection") {
  auto j = base();
  auto cfg = config_from_json(j);
  const HermiteCoeffs one = cfg.test_coeffs();
  const HermiteCoeffs phi1 = HermiteCoeffs::basis(1, 2, MultiIndex{1});
  CHECK(select_engine(cfg, {one}, 10.0) == Engine::Csbp);
  CHECK(select_engine(cfg, {phi1}, 1.0) == Engine::Particle);
  CHECK(select_engine(cfg, {phi1}, 20.0) == Engine::Grid);
  j["sim"]["engine"] = "csbp";
  CHECK_THROWS_AS(select_engine(config_from_json(j), {phi1}, 1.0), ConfigError);
}

TEST_CASE("oracle validation: zero function and a two-atom start") {
  auto j = base();
  j["sim"] = {{"engine", "particle"}, {"n_scale", 20}, {"replicates", 300}, {"horizon", 0.5}};
  j["stats"] = {{"theta_grid", {0.5, 1.0}}};
  j["test_function"] = "zero";
  auto r = run_oracle_validation(config_from_json(j));
  for (const auto& row : r.rows) {
    CHECK(row.ecf == cplx(1.0));
    CHECK(std::abs(row.target - 1.0) < 1e-15);
  }
  CHECK(r.pass);

  // branching property: the target is the product of the single-atom targets
  j["test_function"] = "phi1";
  j["initial"] = json::parse(R"([{"x": [-0.5], "w": 0.5}, {"x": [1.0], "w": 0.5}])");
  const auto cfg = config_from_json(j);
  r = run_oracle_validation(cfg);
  const auto mech = cfg.mechanism();
  const auto f = cfg.test_coeffs();
  for (const auto& row : r.rows) {
    const cplx a = exact_char_fn(cfg.ou, mech, {{{-0.5}, 0.5}}, f, row.theta, 0.5, 16);
    const cplx b = exact_char_fn(cfg.ou, mech, {{{1.0}, 0.5}}, f, row.theta, 0.5, 16);
    CHECK(std::abs(row.target - a * b) < 1e-12);
  }
  CHECK(r.pass);
}

TEST_CASE("lln: linearity, single time point, hypothesis check") {
  auto j = base();
  j["sim"]["times"] = {1.0, 2.0};
  j["sim"]["delta_inf"] = 2.0;
  const auto r1 = run_lln(config_from_json(j));
  j["test_function"] = json::parse(R"([{"p": [0], "c": 2.0}])");
  const auto r2 = run_lln(config_from_json(j));
  REQUIRE(r1.tables[0].rows.size() == 2);
  for (std::size_t k = 0; k < 2; ++k)
    CHECK(r2.tables[0].rows[k][1] == doctest::Approx(2.0 * r1.tables[0].rows[k][1]).epsilon(1e-14));
  CHECK(r1.trend_pass.has_value());

  j["sim"]["times"] = {2.0};
  const auto r3 = run_lln(config_from_json(j));
  CHECK(!r3.trend_pass.has_value());
  CHECK(r3.details.contains("trend_note"));

  j["test_function"] = "phi2";
  CHECK_THROWS_AS(run_lln(config_from_json(j)), HypothesisViolation);
}

TEST_CASE("clt: regime mismatch and a total-mass run") {
  auto j = base();
  j["mechanism"]["alpha"] = 3.0;
  j["test_function"] = "phi2";
  CHECK_THROWS_AS(run_clt(config_from_json(j), Regime::Cl), HypothesisViolation);
  j["test_function"] = "phi0";
  j["sim"] = {{"replicates", 400}, {"horizon", 3.0}, {"delta_inf", 2.0}, {"times", {2.0, 3.0}}};
  j["stats"] = {{"ks_samples", 20000}, {"ks_threshold", 0.1}};
  const auto r = run_clt(config_from_json(j), Regime::Cl);
  CHECK(r.details["engine"] == "csbp");
  CHECK(r.details["survivors"] == 400);
  CHECK(r.ks_distance.has_value());
  CHECK(r.tables[0].rows.size() == 2);
  CHECK(r.pass);
}

TEST_CASE("unit clt: theta = 0 column and early horizons") {
  auto j = base();
  j["sim"] = {{"replicates", 300}, {"horizon", 1.0}, {"delta_inf", 1.0}};
  j["stats"] = {{"theta_grid", {0.0, 0.5}}};
  const auto r = run_unit_clt(config_from_json(j));
  CHECK(r.rows[0].ecf == cplx(1.0));
  CHECK(r.rows[0].target == cplx(1.0));
  CHECK(r.informational);
}

TEST_CASE("reports: header-only csv, determinism, I/O errors") {
  ComparisonReport empty;
  empty.experiment = "empty";
  const auto d0 = scratch("empty");
  emit_report(empty, d0.string());
  CHECK(slurp(d0 / "empty.csv") == "theta,re_ecf,im_ecf,re_target,im_target,stderr\n");

  auto j = base();
  j["mechanism"]["alpha"] = 3.0;
  j["sim"] = {{"replicates", 200}, {"horizon", 2.0}, {"delta_inf", 1.0}};
  const auto cfg = config_from_json(j);
  const auto d1 = scratch("a"), d2 = scratch("b");
  emit_report(run_unit_clt(cfg), d1.string());
  emit_report(run_unit_clt(cfg), d2.string());
  for (const char* f : {"unit_clt.csv", "unit_clt.json"}) CHECK(slurp(d1 / f) == slurp(d2 / f));
  CHECK(json::parse(slurp(d1 / "unit_clt.json"))["seed"] == 5);

  const auto blocker = scratch("file");
  std::ofstream(blocker.string()) << "x";
  try {
    emit_report(empty, (blocker / "sub").string());
    FAIL("expected an I/O error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(blocker.string()) != std::string::npos);
  }
}

TEST_CASE("cli exit codes and reproducible output") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  json j = base();
  j["mechanism"]["alpha"] = 3.0;
  j["test_function"] = "phi2";
  j["stats"] = {{"ks_samples", 20000}};
  std::ofstream(dir / "ok.json") << j.dump();
  j["sim"]["replicates"] = 10;
  std::ofstream(dir / "bad.json") << j.dump();

  const std::string ok = "--config " + (dir / "ok.json").string();
  CHECK(run_cli("sample-stable " + ok + " --out " + (dir / "r1").string()) == 0);
  CHECK(run_cli("sample-stable " + ok + " --out " + (dir / "r2").string()) == 0);
  CHECK(slurp(dir / "r1" / "sample_stable.csv") == slurp(dir / "r2" / "sample_stable.csv"));
  CHECK(slurp(dir / "r1" / "sample_stable.json") == slurp(dir / "r2" / "sample_stable.json"));
  CHECK(run_cli("sample-stable " + ok + " --seed 8 --out " + (dir / "r3").string()) == 0);
  CHECK(slurp(dir / "r1" / "sample_stable.csv") != slurp(dir / "r3" / "sample_stable.csv"));

  CHECK(run_cli("sample-stable --config " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("validate --config " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("clt --regime cx " + ok) == 2);
  CHECK(run_cli("lln " + ok + " --out " + (dir / "r4").string()) == 2);  // alpha beta~ <= 2 b
  CHECK(run_cli("solve-fkpp " + ok + " --theta 0.5 --out " + (dir / "r5").string()) == 0);
  CHECK(fs::exists(dir / "r5" / "solve_fkpp_nodes.csv"));
}
