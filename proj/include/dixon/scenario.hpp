#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dixon {

enum class RunStatus { Ok = 0, Warning = 1, Failed = 2 };

const char* run_status_name(RunStatus s);

struct ScenarioCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string comparison;  // "<=", ">=", "in" or "info"
  // A failed advisory check downgrades the run to a warning instead of a failure.
  bool advisory = false;
};

struct RunResult {
  std::string kind;
  RunStatus status = RunStatus::Ok;
  std::vector<ScenarioCheck> checks;
  std::map<std::string, double> metrics;
  std::string output_dir;
  std::string summary_json;
  std::string residuals_json;
};

// A validated run description.  Keys are checked against a fixed schema when
// the scenario is loaded and again after every override.
class Scenario {
 public:
  static Scenario from_file(const std::string& path);
  static Scenario from_string(const std::string& text, const std::string& source = "<string>");

  Scenario(const Scenario& other);
  Scenario& operator=(const Scenario& other);
  Scenario(Scenario&&) noexcept;
  Scenario& operator=(Scenario&&) noexcept;
  ~Scenario();

  // "dotted.key=value" with a TOML value, e.g. "numerics.h_sigma=1e-3".
  void set(const std::string& assignment);
  void set_output_dir(const std::string& dir);
  void set_seed(std::uint64_t seed);

  std::string kind() const;
  std::string output_dir() const;
  std::uint64_t seed() const;
  std::string source() const;
  std::string to_json() const;

  // Runs the scenario and writes trajectory.csv, residuals.json and summary.json.
  RunResult run() const;

 private:
  struct Impl;
  explicit Scenario(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

struct SweepResult {
  std::vector<std::string> points;  // output directory per grid point
  std::vector<RunResult> results;
  std::vector<std::string> failed;  // "point_003: reason"
  RunStatus status = RunStatus::Ok;
  std::string aggregate_csv;
  std::string summary_json;
};

// Runs the Cartesian product of a grid file (dotted keys mapped to arrays)
// over `workers` threads, one scenario per worker at a time.
SweepResult run_sweep(const Scenario& base, const std::string& grid_path, int workers = 0);
SweepResult run_sweep_text(const Scenario& base, const std::string& grid_text, int workers = 0);

}  // namespace dixon
