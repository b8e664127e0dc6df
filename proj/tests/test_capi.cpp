#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dixon/dixon.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dixon_capi_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kFlat = R"(kind = "quadrupole"
seed = 4
[metric]
family = "minkowski"
[worldline]
velocity_spatial = [0.2, 0.0, 0.1]
sigma_span_geometric = 2.0
[numerics]
h_sigma = 0.05
n_tests = 1
probe_segments = 2
[state]
initial = "dipole"
mass_geometric = 2.0
spin = [0.0, 0.0, 0.3]
)";

struct Scn {
  dixon_scenario* p = nullptr;
  ~Scn() { dixon_scenario_free(p); }
};

}  // namespace

TEST_CASE("status codes mirror the library error enumeration") {
  CHECK(std::string(dixon_status_name(DIXON_OK)) == "Ok");
  CHECK(std::string(dixon_status_name(DIXON_E_CONFIG_PARSE)) == "ConfigParse");
  CHECK(std::string(dixon_status_name(DIXON_E_IO)) == "Io");
  CHECK(std::string(dixon_status_name(DIXON_E_OUTSIDE_TUBE)) == "OutsideTube");
  CHECK(std::string(dixon_status_name(DIXON_E_SLOPE_TOO_SHALLOW)) == "SlopeTooShallow");
  CHECK(std::string(dixon_status_name(999)) == "Unknown");
}

TEST_CASE("config errors carry line and column") {
  Scn s;
  const int st = dixon_scenario_parse("kind = \"geodesic\"\n[metric]\nfamily = \"minkowski\"\n\n[numerics]\nstep = 1\n",
                                      "cfg.toml", &s.p);
  CHECK(st == DIXON_E_CONFIG_PARSE);
  CHECK(s.p == nullptr);
  const std::string msg = dixon_last_error();
  CHECK(msg.find("cfg.toml:6:") != std::string::npos);
  CHECK(msg.find("numerics.step") != std::string::npos);

  CHECK(dixon_scenario_parse("kind = \"teleport\"\n[metric]\nfamily = \"minkowski\"\n", "k.toml", &s.p) ==
        DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_parse("[metric]\nfamily = \"minkowski\"\n", "k.toml", &s.p) == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_parse("kind = \"geodesic\"\n[metric]\nfamily = \"kerr\"\n", "k.toml", &s.p) ==
        DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_parse("kind = \"geodesic\"\n[metric]\nfamily = \"minkowski\"\n[worldline]\nposition = [1, 2]\n",
                             "k.toml", &s.p) == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_parse("kind = = 3", "k.toml", &s.p) == DIXON_E_CONFIG_PARSE);
  CHECK(std::string(dixon_last_error()).find("k.toml:1:") != std::string::npos);
  CHECK(dixon_scenario_load("/nonexistent/scenario.toml", &s.p) == DIXON_E_IO);
}

TEST_CASE("overrides are validated like file keys") {
  Scn s;
  REQUIRE(dixon_scenario_parse(kFlat, "flat", &s.p) == DIXON_OK);
  CHECK(std::string(dixon_scenario_kind(s.p)) == "quadrupole");
  CHECK(dixon_scenario_set(s.p, "numerics.h_sigma=0.025") == DIXON_OK);
  CHECK(dixon_scenario_set(s.p, "state.closure=parallel") == DIXON_OK);
  CHECK(dixon_scenario_set(s.p, "compare.omega=[0.1, 0.2, 0.3]") == DIXON_OK);
  CHECK(dixon_scenario_set(s.p, "numerics.h_sigma=-1") == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_set(s.p, "numerics.nope=1") == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_set(s.p, "state.closure=sideways") == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_set(s.p, "no_equals_sign") == DIXON_E_CONFIG_PARSE);
  CHECK(dixon_scenario_set(s.p, "kind=squeeze") == DIXON_OK);
  CHECK(std::string(dixon_scenario_kind(s.p)) == "squeeze");
}

TEST_CASE("runs write versioned, deterministic artifacts") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  std::string summaries[2];
  for (int k = 0; k < 2; ++k) {
    Scn s;
    REQUIRE(dixon_scenario_parse(kFlat, "flat", &s.p) == DIXON_OK);
    REQUIRE(dixon_scenario_set_output(s.p, "same") == DIXON_OK);
    dixon_result* r = nullptr;
    // run from different working directories into a relative path
    const fs::path dir = k == 0 ? a : b;
    fs::create_directories(dir);
    const fs::path cwd = fs::current_path();
    fs::current_path(dir);
    const int st = dixon_scenario_run(s.p, &r);
    fs::current_path(cwd);
    REQUIRE(st == DIXON_OK);
    CHECK(dixon_result_status(r) == DIXON_RUN_OK);
    summaries[k] = dixon_result_summary_json(r);
    dixon_result_free(r);
  }
  for (const char* f : {"trajectory.csv", "residuals.json", "summary.json"}) {
    REQUIRE(fs::exists(a / "same" / f));
    CHECK(slurp(a / "same" / f) == slurp(b / "same" / f));
  }
  CHECK(summaries[0] == summaries[1]);

  const json j = json::parse(summaries[0]);
  CHECK(j["schema"] == "dixon.summary");
  CHECK(j["schema_version"] == 1);
  CHECK(j["status"] == "ok");
  CHECK(j["seed"] == 4);
  bool saw_mass = false;
  for (const auto& c : j["checks"]) {
    CHECK(c.contains("value"));
    CHECK(c.contains("passed"));
    if (c["name"] == "mass_drift") saw_mass = true;
  }
  CHECK(saw_mass);
  CHECK(j["scenario"]["state"]["mass_geometric"] == 2.0);

  const json res = json::parse(slurp(a / "same" / "residuals.json"));
  CHECK(res["schema"] == "dixon.residuals");

  // header plus one row per node, full precision mass column
  std::istringstream csv(slurp(a / "same" / "trajectory.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("sigma,x0,x1,x2,x3,constraint,divergence_probe,mass,mass_drift,xi2_00", 0) == 0);
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 41);
}

TEST_CASE("seed changes randomized batteries only") {
  const fs::path out = scratch("seed");
  const char* text = R"(kind = "quadrupole"
[metric]
family = "schwarzschild"
mass_geometric = 1.0
[worldline]
mode = "circular"
radius_geometric = 8.0
sigma_span_geometric = 1.0
[numerics]
h_sigma = 0.05
n_tests = 0
[state]
initial = "random"
random_scale = 0.01
)";
  std::string csv[3];
  const std::uint64_t seeds[3] = {1, 1, 2};
  for (int k = 0; k < 3; ++k) {
    Scn s;
    REQUIRE(dixon_scenario_parse(text, "seeded", &s.p) == DIXON_OK);
    dixon_scenario_set_seed(s.p, seeds[k]);
    dixon_scenario_set_output(s.p, (out / std::to_string(k)).c_str());
    dixon_result* r = nullptr;
    REQUIRE(dixon_scenario_run(s.p, &r) == DIXON_OK);
    dixon_result_free(r);
    csv[k] = slurp(out / std::to_string(k) / "trajectory.csv");
  }
  CHECK(csv[0] == csv[1]);
  CHECK(csv[0] != csv[2]);
}

TEST_CASE("failed checks and module errors surface distinctly") {
  const fs::path out = scratch("fail");
  Scn s;
  REQUIRE(dixon_scenario_parse(kFlat, "flat", &s.p) == DIXON_OK);
  dixon_scenario_set_output(s.p, out.c_str());
  REQUIRE(dixon_scenario_set(s.p, "checks.norm_drift_max=1e-300") == DIXON_OK);
  REQUIRE(dixon_scenario_set(s.p, "kind=geodesic") == DIXON_OK);
  REQUIRE(dixon_scenario_set(s.p, "metric.family=schwarzschild") == DIXON_OK);
  REQUIRE(dixon_scenario_set(s.p, "worldline.position=[0.0, 9.0, 1.5, 0.0]") == DIXON_OK);
  dixon_result* r = nullptr;
  REQUIRE(dixon_scenario_run(s.p, &r) == DIXON_OK);
  CHECK(dixon_result_status(r) == DIXON_RUN_FAILED);
  const char* name = nullptr;
  int passed = 1, advisory = 1;
  double value = 0.0;
  REQUIRE(dixon_result_check(r, 0, &name, &passed, &value, &advisory) == DIXON_OK);
  CHECK(std::string(name) == "norm_drift");
  CHECK(passed == 0);
  CHECK(advisory == 0);
  CHECK(dixon_result_check(r, 99, nullptr, nullptr, nullptr, nullptr) == DIXON_E_INVALID_ARGUMENT);
  dixon_result_free(r);

  // the worldline starts inside the horizon margin
  REQUIRE(dixon_scenario_set(s.p, "worldline.position=[0.0, 2.05, 1.5, 0.0]") == DIXON_OK);
  CHECK(dixon_scenario_run(s.p, &r) != DIXON_OK);
  CHECK(r == nullptr);
  CHECK(std::string(dixon_last_error()).find("scenario flat (geodesic)") != std::string::npos);
}

TEST_CASE("sweeps run every grid point and report partial failures") {
  const fs::path out = scratch("sweep");
  fs::create_directories(out);
  Scn s;
  REQUIRE(dixon_scenario_parse(kFlat, "flat", &s.p) == DIXON_OK);
  dixon_scenario_set_output(s.p, (out / "runs").c_str());
  {
    std::ofstream g(out / "grid.toml");
    g << "[numerics]\nh_sigma = [0.1, 0.05]\n[checks]\nmass_drift_max = [1.0, -0.0]\n";
  }
  dixon_sweep* w = nullptr;
  // a negative threshold is rejected before any point runs
  CHECK(dixon_sweep_run(s.p, (out / "grid.toml").c_str(), 2, &w) == DIXON_E_CONFIG_PARSE);
  {
    std::ofstream g(out / "grid.toml");
    g << "[numerics]\nh_sigma = [0.1, 0.05]\n[state]\nspin = [[0.0, 0.0, 0.0], [0.0, 0.0, 1e-3]]\n"
         "[checks]\nconstraint_max = [1.0, 1e-300]\n";
  }
  REQUIRE(dixon_sweep_run(s.p, (out / "grid.toml").c_str(), 2, &w) == DIXON_OK);
  CHECK(dixon_sweep_point_count(w) == 8);
  CHECK(dixon_sweep_status(w) == DIXON_RUN_OK);
  for (std::size_t p = 0; p < 8; ++p) {
    char name[32];
    std::snprintf(name, sizeof name, "point_%03zu", p);
    CHECK(fs::exists(out / "runs" / name / "summary.json"));
  }
  const json j = json::parse(dixon_sweep_summary_json(w));
  CHECK(j["schema"] == "dixon.sweep");
  CHECK(j["points"].size() == 8);
  CHECK(fs::exists(out / "runs" / "sweep.csv"));
  dixon_sweep_free(w);

  // the second start point lies inside the horizon margin
  {
    std::ofstream g(out / "grid.toml");
    g << "\"metric.family\" = [\"schwarzschild\"]\n"
         "\"worldline.position\" = [[0.0, 9.0, 1.5, 0.0], [0.0, 2.05, 1.5, 0.0]]\n";
  }
  REQUIRE(dixon_sweep_run(s.p, (out / "grid.toml").c_str(), 1, &w) == DIXON_OK);
  CHECK(dixon_sweep_point_count(w) == 2);
  REQUIRE(dixon_sweep_failed_count(w) == 1);
  CHECK(std::string(dixon_sweep_failed(w, 0)).rfind("point_001: ", 0) == 0);
  CHECK(dixon_sweep_status(w) == DIXON_RUN_FAILED);
  CHECK(slurp(out / "runs" / "sweep.csv").find("failed") != std::string::npos);
  dixon_sweep_free(w);

  {
    std::ofstream g(out / "empty.toml");
  }
  REQUIRE(dixon_sweep_run(s.p, (out / "empty.toml").c_str(), 0, &w) == DIXON_OK);
  CHECK(dixon_sweep_point_count(w) == 0);
  CHECK(dixon_sweep_failed_count(w) == 0);
  CHECK(dixon_sweep_status(w) == DIXON_RUN_OK);
  dixon_sweep_free(w);
}

TEST_CASE("low-level handles") {
  dixon_metric* m = nullptr;
  REQUIRE(dixon_metric_create(DIXON_SCHWARZSCHILD, 1.0, 0.1, &m) == DIXON_OK);
  const double x[4] = {0.0, 6.0, 1.3, 0.2};
  CHECK(dixon_metric_contains(m, x) == 1);
  double g[16], k = 0.0;
  REQUIRE(dixon_metric_components(m, x, g) == DIXON_OK);
  CHECK(g[0] == doctest::Approx(-(1.0 - 2.0 / 6.0)).epsilon(1e-15));
  REQUIRE(dixon_kretschmann(m, x, &k) == DIXON_OK);
  CHECK(k == doctest::Approx(48.0 / std::pow(6.0, 6)).epsilon(1e-12));
  std::vector<double> riem(256), nabla(1024);
  REQUIRE(dixon_geometry_jet(m, x, nullptr, riem.data(), nabla.data()) == DIXON_OK);
  // R^a_{bcd} = -R^a_{bdc}
  CHECK(riem[0 * 64 + 1 * 16 + 0 * 4 + 1] == doctest::Approx(-riem[0 * 64 + 1 * 16 + 1 * 4 + 0]));
  auto nr = [&](int a, int b, int c, int d, int e) { return nabla[(((a * 4 + b) * 4 + c) * 4 + d) * 4 + e]; };
  double bianchi = 0.0, size = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d)
          for (int e = 0; e < 4; ++e) {
            bianchi = std::max({bianchi, std::abs(nr(a, b, c, d, e) + nr(a, b, d, e, c) + nr(a, b, e, c, d)),
                                std::abs(nr(a, b, c, d, e) + nr(a, b, d, c, e))});
            size = std::max(size, std::abs(nr(a, b, c, d, e)));
          }
  CHECK(size > 1e-3);
  CHECK(bianchi <= 1e-12 * size);
  const double inside[4] = {0.0, 1.5, 1.3, 0.2};
  CHECK(dixon_metric_components(m, inside, g) == DIXON_E_OUT_OF_DOMAIN);

  const double r = 8.0, ut = 1.0 / std::sqrt(1.0 - 3.0 / r);
  const double x0[4] = {0.0, r, M_PI / 2, 0.0}, u0[4] = {ut, 0.0, 0.0, std::sqrt(1.0 / (r * r * r)) * ut};
  std::size_t n = 0;
  REQUIRE(dixon_geodesic(m, x0, u0, 1.0, 0.1, nullptr, 0, &n) == DIXON_OK);
  std::vector<double> rows(9 * n);
  REQUIRE(dixon_geodesic(m, x0, u0, 1.0, 0.1, rows.data(), n, &n) == DIXON_OK);
  CHECK(rows[9 * (n - 1) + 2] == doctest::Approx(r).epsilon(1e-12));
  CHECK(dixon_geodesic(m, x0, u0, 1.0, 0.1, rows.data(), 1, &n) == DIXON_E_INVALID_ARGUMENT);

  dixon_worldline* w = nullptr;
  REQUIRE(dixon_worldline_geodesic(m, x0, u0, 0.0, 1.0, 0.01, &w) == DIXON_OK);
  CHECK(dixon_worldline_size(w) == 101);
  double e[16], N[4];
  REQUIRE(dixon_worldline_sample(w, 0, nullptr, nullptr, nullptr, N, e) == DIXON_OK);

  const double X[4] = {0.0, 0.0, 0.0, 0.0}, P[4] = {0.0, 0.0, 0.0, 0.0};
  double S[16] = {0.0};
  double state[100];
  REQUIRE(dixon_embed_dipole(w, 1.0, X, P, S, state) == DIXON_OK);
  CHECK(state[0] == doctest::Approx(-2.0));
  dixon_trajectory* t = nullptr;
  REQUIRE(dixon_evolve(w, state, 0.01, 0, &t) == DIXON_OK);
  CHECK(dixon_trajectory_size(t) == 101);
  double sigma = 0.0, last[100];
  REQUIRE(dixon_trajectory_state(t, 100, &sigma, last) == DIXON_OK);
  CHECK(sigma == doctest::Approx(1.0));
  CHECK(std::abs(last[0] + 2.0) <= 1e-12);
  CHECK(dixon_evolve(w, state, 0.01, 7, &t) == DIXON_E_INVALID_ARGUMENT);
  dixon_trajectory_free(t);

  double rs[100];
  REQUIRE(dixon_random_state(3, 0.1, rs) == DIXON_OK);
  CHECK(dixon_constraint_residual(rs) <= 1e-14);
  CHECK(dixon_state_size() == 100);

  REQUIRE(dixon_mpd(m, x0, u0, 1.0, X, P, S, 1.0, 0.01, nullptr, 0, &n) == DIXON_OK);
  CHECK(n == 101);

  dixon_counts c{};
  REQUIRE(dixon_counting_audit(&c) == DIXON_OK);
  CHECK(c.raw == 150);
  CHECK(c.orthogonal == 100);
  CHECK(c.dof == 60);
  CHECK(c.free_count == 20);

  dixon_worldline_free(w);
  dixon_metric_free(m);
  CHECK(dixon_metric_create(static_cast<dixon_family>(9), 1.0, 0.1, &m) == DIXON_E_INVALID_ARGUMENT);
}
