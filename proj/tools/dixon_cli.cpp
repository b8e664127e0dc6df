#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dixon/dixon.h"

namespace {

constexpr int kExitFailedChecks = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int report(int exit_code) {
  std::fprintf(stderr, "error: %s\n", dixon_last_error());
  return exit_code;
}

int config_or_runtime(int status) {
  const bool config =
      status == DIXON_E_CONFIG_PARSE || status == DIXON_E_IO || status == DIXON_E_INVALID_ARGUMENT;
  return report(config ? kExitConfig : kExitRuntime);
}

struct Loaded {
  dixon_scenario* s = nullptr;
  ~Loaded() { dixon_scenario_free(s); }
};

int prepare(Loaded& l, const std::string& file, const std::vector<std::string>& sets, const std::string& out,
            const std::optional<std::uint64_t>& seed) {
  if (int st = dixon_scenario_load(file.c_str(), &l.s)) return config_or_runtime(st);
  for (const auto& kv : sets)
    if (int st = dixon_scenario_set(l.s, kv.c_str())) return report(kExitConfig);
  if (!out.empty())
    if (int st = dixon_scenario_set_output(l.s, out.c_str())) return report(kExitConfig);
  if (seed)
    if (int st = dixon_scenario_set_seed(l.s, *seed)) return report(kExitConfig);
  return 0;
}

int cmd_run(const std::string& file, const std::vector<std::string>& sets, const std::string& out,
            const std::optional<std::uint64_t>& seed, bool quiet) {
  Loaded l;
  if (int rc = prepare(l, file, sets, out, seed)) return rc;
  dixon_result* r = nullptr;
  if (int st = dixon_scenario_run(l.s, &r)) return config_or_runtime(st);
  const std::size_t n = dixon_result_check_count(r);
  for (std::size_t i = 0; i < n && !quiet; ++i) {
    const char* name = nullptr;
    int passed = 0, advisory = 0;
    double value = 0.0;
    dixon_result_check(r, i, &name, &passed, &value, &advisory);
    std::printf("%-6s %-34s %.6g%s\n", passed ? "ok" : advisory ? "warn" : "FAIL", name, value,
                advisory ? " (advisory)" : "");
  }
  const dixon_run_status status = dixon_result_status(r);
  std::printf("%s: %s -> %s\n", dixon_scenario_kind(l.s),
              status == DIXON_RUN_OK ? "ok" : status == DIXON_RUN_WARNING ? "warning" : "failed",
              dixon_result_output_dir(r));
  dixon_result_free(r);
  return status == DIXON_RUN_FAILED ? kExitFailedChecks : 0;
}

int cmd_sweep(const std::string& file, const std::string& grid, const std::vector<std::string>& sets,
              const std::string& out, const std::optional<std::uint64_t>& seed, int jobs) {
  Loaded l;
  if (int rc = prepare(l, file, sets, out, seed)) return rc;
  dixon_sweep* s = nullptr;
  if (int st = dixon_sweep_run(l.s, grid.c_str(), jobs, &s)) return config_or_runtime(st);
  const std::size_t n = dixon_sweep_point_count(s), nf = dixon_sweep_failed_count(s);
  std::printf("sweep: %zu point(s), %zu failed\n", n, nf);
  for (std::size_t i = 0; i < nf; ++i) std::printf("  %s\n", dixon_sweep_failed(s, i));
  const dixon_run_status status = dixon_sweep_status(s);
  dixon_sweep_free(s);
  return status == DIXON_RUN_FAILED ? kExitFailedChecks : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrupole dynamics scenario runner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dixon_version()));

  std::string file, out, grid;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  int jobs = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("file", file, "Scenario file (TOML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "Override a key, e.g. --set numerics.h_sigma=5e-3")->take_all();
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Seed for randomized batteries");
  };
  CLI::App* run = app.add_subcommand("run", "Run one scenario");
  add_common(run);
  run->add_flag("-q,--quiet", quiet, "Only print the final status line");
  CLI::App* sweep = app.add_subcommand("sweep", "Run a scenario over a parameter grid");
  add_common(sweep);
  sweep->add_option("--grid", grid, "Grid file mapping dotted keys to value arrays")->required()->check(CLI::ExistingFile);
  sweep->add_option("--jobs", jobs, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (*run) return cmd_run(file, sets, out, seed, quiet);
  return cmd_sweep(file, grid, sets, out, seed, jobs);
}
