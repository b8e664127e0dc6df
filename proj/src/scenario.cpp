#include "dixon/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "dixon/dynamics.hpp"
#include "dixon/moments.hpp"
#include "json.hpp"
#include "toml.hpp"

namespace dixon {

using nlohmann::json;
namespace fs = std::filesystem;

const char* run_status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Warning: return "warning";
    case RunStatus::Failed: return "failed";
  }
  return "unknown";
}

namespace {

// ------------------------------------------------------------------ schema

enum class Kind { String, Int, Float, Bool, FloatArray, IntArray, StringArray };

struct KeySpec {
  Kind kind;
  std::vector<std::string> choices = {};
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_open = false;
  int length = -1;  // fixed array length, -1 for any
};

const std::map<std::string, KeySpec>& schema() {
  const double inf = std::numeric_limits<double>::infinity();
  static const std::map<std::string, KeySpec> s = {
      {"kind",
       {Kind::String, {"geometry-audit", "geodesic", "mpd", "quadrupole", "extract", "squeeze", "dixon-compare"}}},
      {"seed", {Kind::Int, {}, 0.0}},
      {"output_dir", {Kind::String}},
      {"description", {Kind::String}},

      {"metric.family", {Kind::String, {"minkowski", "schwarzschild", "de-sitter"}}},
      {"metric.mass_geometric", {Kind::Float, {}, 0.0}},
      {"metric.hubble_per_length", {Kind::Float, {}, 0.0}},
      {"metric.horizon_margin_geometric", {Kind::Float, {}, 0.0, inf, true}},

      {"worldline.mode", {Kind::String, {"geodesic", "circular", "tabulated"}}},
      {"worldline.position", {Kind::FloatArray, {}, -inf, inf, false, 4}},
      {"worldline.velocity_spatial", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"worldline.radius_geometric", {Kind::Float, {}, 0.0, inf, true}},
      {"worldline.tabulated_csv", {Kind::String}},
      {"worldline.sigma_begin", {Kind::Float}},
      {"worldline.sigma_span_geometric", {Kind::Float, {}, 0.0, inf, true}},
      {"worldline.dixon_vector", {Kind::String, {"tangent", "custom"}}},
      {"worldline.dixon_covector", {Kind::FloatArray, {}, -inf, inf, false, 4}},

      {"numerics.h_sigma", {Kind::Float, {}, 0.0, inf, true}},
      {"numerics.h_ladder", {Kind::FloatArray, {}, 0.0, inf, true}},
      {"numerics.eps_ladder", {Kind::FloatArray, {}, 0.0, 1.0, true}},
      {"numerics.integrator", {Kind::String, {"rk4", "rk45"}}},
      {"numerics.constraint_tol", {Kind::Float, {}, 0.0, inf, true}},
      {"numerics.drift_limit", {Kind::Float, {}, 0.0, inf, true}},
      {"numerics.n_tests", {Kind::Int, {}, 0.0, 64.0}},
      {"numerics.probe_segments", {Kind::Int, {}, 0.0, 64.0}},
      {"numerics.tube_radius_geometric", {Kind::Float, {}, 0.0, inf, true}},
      {"numerics.z_nodes", {Kind::Int, {}, 8.0, 64.0}},
      {"numerics.sigma_nodes", {Kind::Int, {}, 3.0, 101.0}},
      {"numerics.shoot_steps", {Kind::Int, {}, 1.0, 4096.0}},
      {"numerics.n_points", {Kind::Int, {}, 1.0, 1e6}},
      {"numerics.h_geom", {Kind::Float, {}, 0.0, 1.0, true}},

      {"checks.invariant_tol", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.fd_tol", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.norm_drift_max", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.mass_drift_max", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.constraint_max", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.discrepancy_max", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.ratio_band", {Kind::FloatArray, {}, 0.0, inf, true, 2}},
      {"checks.min_order", {Kind::Float}},
      {"checks.slope_margin", {Kind::Float}},
      {"checks.extract_tol", {Kind::Float, {}, 0.0, inf, true}},
      {"checks.plateau_factor", {Kind::Float, {}, 0.0, inf, true}},

      {"state.initial", {Kind::String, {"monopole", "dipole", "random"}}},
      {"state.mass_geometric", {Kind::Float}},
      {"state.dipole_offset", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"state.momentum", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"state.spin", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"state.random_scale", {Kind::Float, {}, 0.0, inf, true}},
      {"state.closure", {Kind::String, {"frozen", "parallel"}}},
      {"state.compare_quadrupole", {Kind::Bool}},

      {"body.rank", {Kind::Int, {}, 0.0, 2.0}},
      {"body.tensor", {Kind::FloatArray}},
      {"body.width", {Kind::FloatArray, {}, 0.0, inf, true, 3}},
      {"body.center", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"body.velocity", {Kind::FloatArray, {}, -inf, inf, false, 3}},
      {"body.total", {Kind::Float}},
      {"body.orders", {Kind::IntArray, {}, 0.0, 2.0}},
      {"body.wavenumber_range", {Kind::FloatArray, {}, 0.0, inf, true, 2}},

      {"extract.source", {Kind::String, {"random", "body"}}},
      {"extract.sigma0", {Kind::Float}},
      {"extract.picks", {Kind::StringArray}},
      {"extract.profile", {Kind::Int, {}, 1.0, 2.0}},

      {"compare.mode", {Kind::String, {"rotational", "symmetry"}}},
      {"compare.omega", {Kind::FloatArray, {}, -inf, inf, false, 3}},
  };
  return s;
}

const std::vector<std::string>& known_tables() {
  static const std::vector<std::string> t = {"metric", "worldline", "numerics", "checks", "state",
                                             "body",   "extract",   "compare"};
  return t;
}

[[noreturn]] void config_error(const std::string& source, const toml::source_region& where, const std::string& msg) {
  std::ostringstream os;
  os << source;
  if (where.begin.line > 0) os << ':' << where.begin.line << ':' << where.begin.column;
  os << ": " << msg;
  fail(ErrorCode::ConfigParse, os.str());
}

bool in_range(const KeySpec& k, double v) {
  if (!std::isfinite(v)) return false;
  if (k.lo_open ? !(v > k.lo) : !(v >= k.lo)) return false;
  return v <= k.hi;
}

std::string describe_range(const KeySpec& k) {
  std::ostringstream os;
  os << (k.lo_open ? "(" : "[") << k.lo << ", " << k.hi << "]";
  return os.str();
}

void check_value(const std::string& source, const std::string& key, const KeySpec& spec, const toml::node& n) {
  auto scalar_number = [&](const toml::node& v, bool integer) {
    if (integer) {
      if (!v.is_integer()) config_error(source, v.source(), "'" + key + "' must be an integer");
      const double d = static_cast<double>(*v.value<int64_t>());
      if (!in_range(spec, d)) config_error(source, v.source(), "'" + key + "' outside " + describe_range(spec));
      return;
    }
    if (!v.is_number()) config_error(source, v.source(), "'" + key + "' must be a number");
    if (!in_range(spec, *v.value<double>()))
      config_error(source, v.source(), "'" + key + "' outside " + describe_range(spec));
  };
  switch (spec.kind) {
    case Kind::String: {
      if (!n.is_string()) config_error(source, n.source(), "'" + key + "' must be a string");
      if (!spec.choices.empty()) {
        const std::string v = *n.value<std::string>();
        if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
          std::string all;
          for (const auto& c : spec.choices) all += (all.empty() ? "" : ", ") + c;
          config_error(source, n.source(), "'" + key + "' must be one of: " + all);
        }
      }
      return;
    }
    case Kind::Bool:
      if (!n.is_boolean()) config_error(source, n.source(), "'" + key + "' must be true or false");
      return;
    case Kind::Int: scalar_number(n, true); return;
    case Kind::Float: scalar_number(n, false); return;
    case Kind::FloatArray:
    case Kind::IntArray:
    case Kind::StringArray: {
      const toml::array* a = n.as_array();
      if (!a) config_error(source, n.source(), "'" + key + "' must be an array");
      if (spec.length >= 0 && static_cast<int>(a->size()) != spec.length)
        config_error(source, n.source(), "'" + key + "' needs " + std::to_string(spec.length) + " entries");
      for (const toml::node& v : *a) {
        if (spec.kind == Kind::StringArray) {
          if (!v.is_string()) config_error(source, v.source(), "'" + key + "' entries must be strings");
        } else {
          scalar_number(v, spec.kind == Kind::IntArray);
        }
      }
      return;
    }
  }
}

void validate_table(const toml::table& t, const std::string& source) {
  const auto& s = schema();
  for (auto&& [k, node] : t) {
    const std::string key(k.str());
    if (node.is_table()) {
      if (std::find(known_tables().begin(), known_tables().end(), key) == known_tables().end())
        config_error(source, node.source(), "unknown table [" + key + "]");
      for (auto&& [k2, n2] : *node.as_table()) {
        const std::string full = key + "." + std::string(k2.str());
        const auto it = s.find(full);
        if (it == s.end()) config_error(source, n2.source(), "unknown key '" + full + "'");
        check_value(source, full, it->second, n2);
      }
      continue;
    }
    const auto it = s.find(key);
    if (it == s.end()) config_error(source, node.source(), "unknown key '" + key + "'");
    check_value(source, key, it->second, node);
  }
  if (!t.contains("kind")) config_error(source, t.source(), "missing required key 'kind'");
  if (!t.contains("metric") || !t["metric"].as_table() || !t["metric"]["family"])
    config_error(source, t.source(), "missing required key 'metric.family'");
}

json toml_to_json(const toml::node& n) {
  if (const toml::table* t = n.as_table()) {
    json j = json::object();
    for (auto&& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const toml::array* a = n.as_array()) {
    json j = json::array();
    for (const toml::node& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (n.is_string()) return *n.value<std::string>();
  if (n.is_integer()) return *n.value<int64_t>();
  if (n.is_floating_point()) return *n.value<double>();
  if (n.is_boolean()) return *n.value<bool>();
  return nullptr;
}

// ------------------------------------------------------------------ typed access

class Config {
 public:
  explicit Config(const toml::table& t) : t_(t) {}

  const toml::node* find(const std::string& key) const {
    const auto dot = key.find('.');
    if (dot == std::string::npos) return t_.get(key);
    const toml::table* sub = t_.get_as<toml::table>(key.substr(0, dot));
    return sub ? sub->get(key.substr(dot + 1)) : nullptr;
  }
  bool has(const std::string& key) const { return find(key) != nullptr; }
  double num(const std::string& key, double def) const {
    const toml::node* n = find(key);
    return n ? *n->value<double>() : def;
  }
  long long integer(const std::string& key, long long def) const {
    const toml::node* n = find(key);
    return n ? *n->value<int64_t>() : def;
  }
  bool flag(const std::string& key, bool def) const {
    const toml::node* n = find(key);
    return n ? *n->value<bool>() : def;
  }
  std::string str(const std::string& key, const std::string& def) const {
    const toml::node* n = find(key);
    return n ? *n->value<std::string>() : def;
  }
  std::vector<double> nums(const std::string& key, std::vector<double> def) const {
    const toml::node* n = find(key);
    if (!n) return def;
    std::vector<double> out;
    for (const toml::node& v : *n->as_array()) out.push_back(*v.value<double>());
    return out;
  }
  std::vector<std::string> strs(const std::string& key, std::vector<std::string> def) const {
    const toml::node* n = find(key);
    if (!n) return def;
    std::vector<std::string> out;
    for (const toml::node& v : *n->as_array()) out.push_back(*v.value<std::string>());
    return out;
  }
  template <std::size_t N>
  std::array<double, N> fixed(const std::string& key, std::array<double, N> def) const {
    const auto v = nums(key, {});
    if (v.empty()) return def;
    std::array<double, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }

 private:
  const toml::table& t_;
};

// ------------------------------------------------------------------ output helpers

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> cols) : cols_(std::move(cols)) {}
  void row(const std::vector<double>& r) { rows_.push_back(r); }
  std::string csv() const {
    std::ostringstream os;
    for (std::size_t c = 0; c < cols_.size(); ++c) os << (c ? "," : "") << cols_[c];
    os << '\n';
    for (const auto& r : rows_) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << fmt(r[c]);
      os << '\n';
    }
    return os.str();
  }

 private:
  std::vector<std::string> cols_;
  std::vector<std::vector<double>> rows_;
};

json ladder_json(const std::string& name, const std::string& parameter, const std::vector<double>& values,
                 const std::vector<double>& residuals) {
  json j;
  j["name"] = name;
  j["parameter"] = parameter;
  j["values"] = values;
  j["residuals"] = residuals;
  json ratios = json::array(), orders = json::array();
  for (std::size_t i = 0; i + 1 < residuals.size(); ++i) {
    const double r = residuals[i] / residuals[i + 1];
    ratios.push_back(r);
    orders.push_back(std::log(r) / std::log(values[i] / values[i + 1]));
  }
  j["ratios"] = ratios;
  j["observed_orders"] = orders;
  return j;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + p.string());
  os << text;
  if (!os) fail(ErrorCode::Io, "failed writing " + p.string());
}

// ------------------------------------------------------------------ run context

struct Run {
  const Config& cfg;
  std::uint64_t seed;
  RunResult result;
  std::string csv;
  json ladders = json::array();
  json extra = json::object();

  void check(const std::string& name, double value, const std::string& cmp, double threshold, bool advisory = false) {
    ScenarioCheck c;
    c.name = name;
    c.value = value;
    c.threshold = threshold;
    c.comparison = cmp;
    c.advisory = advisory;
    if (cmp == "<=")
      c.passed = value <= threshold;
    else if (cmp == ">=")
      c.passed = value >= threshold;
    else
      c.passed = true;
    result.checks.push_back(c);
  }
  void band(const std::string& name, double value, double lo, double hi) {
    ScenarioCheck c;
    c.name = name;
    c.value = value;
    c.threshold = lo;
    c.comparison = "in [" + fmt(lo) + ", " + fmt(hi) + "]";
    c.passed = value >= lo && value <= hi;
    result.checks.push_back(c);
  }
  void metric(const std::string& name, double v) { result.metrics[name] = v; }
};

MetricSpec make_metric(const Config& c) {
  const std::string fam = c.str("metric.family", "minkowski");
  if (fam == "minkowski") return MetricSpec::minkowski();
  if (fam == "schwarzschild") {
    const double M = c.num("metric.mass_geometric", 1.0);
    return MetricSpec::schwarzschild(M, c.num("metric.horizon_margin_geometric", 0.1 * std::max(M, 1e-3)));
  }
  return MetricSpec::de_sitter(c.num("metric.hubble_per_length", 0.1), c.num("metric.horizon_margin_geometric", 0.1));
}

struct InitialData {
  Vec4 x0{}, u0{};
};

InitialData initial_data(const Config& c, const MetricSpec& spec) {
  const std::string mode = c.str("worldline.mode", "geodesic");
  InitialData d;
  if (mode == "circular") {
    if (spec.family != Family::Schwarzschild)
      fail(ErrorCode::InvalidArgument, "circular worldlines need the Schwarzschild family");
    const double M = spec.mass, r = c.num("worldline.radius_geometric", 10.0 * M);
    if (!(r > 3.0 * M)) fail(ErrorCode::InvalidArgument, "circular geodesics need r > 3M");
    const double ut = 1.0 / std::sqrt(1.0 - 3.0 * M / r);
    d.x0 = {0.0, r, M_PI / 2, 0.0};
    d.u0 = {ut, 0.0, 0.0, std::sqrt(M / (r * r * r)) * ut};
    return d;
  }
  const Vec4 def = spec.family == Family::Minkowski ? Vec4{0.0, 0.0, 0.0, 0.0} : Vec4{0.0, 10.0, M_PI / 2, 0.0};
  d.x0 = c.fixed<4>("worldline.position", def);
  const auto v = c.fixed<3>("worldline.velocity_spatial", {0.0, 0.0, 0.0});
  const Mat4 g = metric(spec, d.x0);
  double s = 1.0;
  for (int i = 1; i < 4; ++i)
    for (int k = 1; k < 4; ++k) s += g[i][k] * v[i - 1] * v[k - 1];
  if (!(g[0][0] < 0.0)) fail(ErrorCode::InvalidArgument, "the time coordinate is not timelike at the start point");
  d.u0 = {std::sqrt(s / -g[0][0]), v[0], v[1], v[2]};
  return d;
}

Curve read_tabulated(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot read tabulated worldline " + path);
  Curve c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double v[9];
    for (double& x : v)
      if (!(ls >> x)) fail(ErrorCode::ConfigParse, path + ":" + std::to_string(lineno) + ": expected 9 columns");
    c.s.push_back(v[0]);
    c.x.push_back({v[1], v[2], v[3], v[4]});
    c.v.push_back({v[5], v[6], v[7], v[8]});
  }
  c.validate();
  return c;
}

WorldlineFrame make_frame(const Config& c, const MetricSpec& spec, double h) {
  const DixonChoice choice = c.str("worldline.dixon_vector", "tangent") == "custom" ? DixonChoice::Custom
                                                                                   : DixonChoice::Tangent;
  if (c.str("worldline.mode", "geodesic") == "tabulated") {
    if (!c.has("worldline.tabulated_csv")) fail(ErrorCode::InvalidArgument, "tabulated mode needs worldline.tabulated_csv");
    const Curve C = read_tabulated(c.str("worldline.tabulated_csv", ""));
    CovectorFn fn;
    if (choice == DixonChoice::Custom) {
      const Vec4 N = c.fixed<4>("worldline.dixon_covector", {-1.0, 0.0, 0.0, 0.0});
      fn = [N](double, const Vec4&, const Vec4&) { return N; };
    }
    return build_worldline(spec, C, choice, fn);
  }
  const InitialData d = initial_data(c, spec);
  const double s0 = c.num("worldline.sigma_begin", 0.0), span = c.num("worldline.sigma_span_geometric", 1.0);
  std::optional<Vec4> N0;
  if (choice == DixonChoice::Custom) N0 = c.fixed<4>("worldline.dixon_covector", {-1.0, 0.0, 0.0, 0.0});
  return geodesic_worldline(spec, d.x0, d.u0, s0, s0 + span, h, choice, N0);
}

DipoleState dipole_from_config(const Config& c, const FrameSample& fr) {
  DipoleState d;
  d.m = c.num("state.mass_geometric", 1.0);
  const auto X = c.fixed<3>("state.dipole_offset", {0.0, 0.0, 0.0});
  const auto P = c.fixed<3>("state.momentum", {0.0, 0.0, 0.0});
  const auto s = c.fixed<3>("state.spin", {0.0, 0.0, 0.0});
  for (int a = 1; a < 4; ++a) {
    d.X = axpy(X[a - 1], fr.e[a], d.X);
    d.P = axpy(P[a - 1], fr.e[a], d.P);
  }
  // S^{ab} = eps_{abc} s^c in the spatial frame
  const int pairs[3][3] = {{2, 3, 1}, {3, 1, 2}, {1, 2, 3}};
  for (const auto& p : pairs) {
    const double v = s[p[2] - 1];
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) d.S[m][n] += v * (fr.e[p[0]][m] * fr.e[p[1]][n] - fr.e[p[1]][m] * fr.e[p[0]][n]);
  }
  return d;
}

QuadrupoleState initial_state(const Config& c, const FrameSample& fr, std::uint64_t seed) {
  const std::string kind = c.str("state.initial", "monopole");
  if (kind == "random") return random_consistent_state(seed, c.num("state.random_scale", 0.1));
  DipoleState d = dipole_from_config(c, fr);
  if (kind == "monopole") {
    d.X = {};
    d.P = {};
    d.S = {};
  }
  return embed_dipole(d, fr);
}

double max_state_diff(const QuadrupoleState& a, const QuadrupoleState& b) {
  const auto fa = a.flat(), fb = b.flat();
  double m = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) m = std::max(m, std::abs(fa[k] - fb[k]));
  return m;
}

// ------------------------------------------------------------------ kinds

void run_geometry_audit(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const int n = static_cast<int>(c.integer("numerics.n_points", 100));
  const double tol = c.num("checks.invariant_tol", 1e-9), fd_tol = c.num("checks.fd_tol", 1e-5);
  const double h_geom = c.num("numerics.h_geom", 1e-4);
  std::mt19937_64 rng(r.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Table t({"point", "x0", "x1", "x2", "x3", "kretschmann", "riemann_scale", "algebraic", "second_bianchi",
           "fd_second_bianchi", "fd_gamma", "fd_riemann", "fd_nabla_riemann", "negative_eigenvalues"});
  double worst_alg = 0.0, worst_b2 = 0.0, worst_fdb2 = 0.0, worst_fd = 0.0;
  int bad_signature = 0;
  for (int i = 0; i < n; ++i) {
    const double u0 = U(rng), u1 = U(rng), u2 = U(rng), u3 = U(rng);
    const Vec4 x = sample_point(spec, u0, u1, u2, u3);
    const GeometryJet j = geometry_jet(spec, x, JetDepth::NablaRiemann);
    const JetAudit a = audit_jet(spec, j);
    JetOptions o;
    o.fd_nabla_riemann = true;
    o.h_geom = h_geom;
    const JetAudit af = audit_jet(spec, geometry_jet(spec, x, JetDepth::NablaRiemann, o));
    const FdReport fd = fd_validate_jet(spec, x, h_geom);
    const double scale = std::max(1.0, a.riemann_scale);
    worst_alg = std::max(worst_alg, a.worst_algebraic() / scale);
    worst_b2 = std::max(worst_b2, a.second_bianchi / scale);
    worst_fdb2 = std::max(worst_fdb2, af.second_bianchi / scale);
    worst_fd = std::max(worst_fd, fd.max_residual());
    if (a.negative_eigenvalues != 1) ++bad_signature;
    t.row({double(i), x[0], x[1], x[2], x[3], kretschmann(j), a.riemann_scale, a.worst_algebraic(), a.second_bianchi,
           af.second_bianchi, fd.gamma_residual, fd.riemann_residual, fd.nabla_riemann_residual,
           double(a.negative_eigenvalues)});
  }
  r.csv = t.csv();
  r.check("algebraic_identities", worst_alg, "<=", tol);
  r.check("second_bianchi", worst_b2, "<=", tol);
  r.check("fd_second_bianchi", worst_fdb2, "<=", fd_tol);
  r.check("fd_consistency", worst_fd, "<=", fd_tol);
  r.check("signature_violations", bad_signature, "<=", 0.0);
  r.metric("algebraic_identities", worst_alg);
  r.metric("second_bianchi", worst_b2);
  r.metric("fd_consistency", worst_fd);
}

void run_geodesic(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const InitialData d = initial_data(c, spec);
  const double span = c.num("worldline.sigma_span_geometric", 10.0);
  auto integrate = [&](double h) {
    StepControl ctl;
    ctl.h = h;
    ctl.method = c.str("numerics.integrator", "rk4") == "rk45" ? StepControl::Method::RK45 : StepControl::Method::RK4;
    Curve C = integrate_geodesic(spec, d.x0, d.u0, span, ctl);
    C.require_complete();
    return C;
  };
  const double h = c.num("numerics.h_sigma", 1e-2);
  const Curve C = integrate(h);
  const double n0 = metric_dot(metric(spec, d.x0), d.u0, d.u0);
  Table t({"s", "x0", "x1", "x2", "x3", "v0", "v1", "v2", "v3", "norm_drift"});
  double drift = 0.0;
  for (std::size_t i = 0; i < C.size(); ++i) {
    const double nd = metric_dot(metric(spec, C.x[i]), C.v[i], C.v[i]) - n0;
    drift = std::max(drift, std::abs(nd));
    t.row({C.s[i], C.x[i][0], C.x[i][1], C.x[i][2], C.x[i][3], C.v[i][0], C.v[i][1], C.v[i][2], C.v[i][3], nd});
  }
  r.csv = t.csv();
  r.check("norm_drift", drift, "<=", c.num("checks.norm_drift_max", 1e-10));
  r.metric("norm_drift", drift);
  if (c.str("numerics.integrator", "rk4") == "rk4") {
    const double res = geodesic_residual(spec, C);
    r.check("geodesic_residual", res, "info", 0.0);
    r.metric("geodesic_residual", res);
  }
  const auto ladder = c.nums("numerics.h_ladder", {});
  if (ladder.size() >= 2) {
    const double h_ref = *std::min_element(ladder.begin(), ladder.end()) / 4.0;
    const Vec4 ref = integrate(h_ref).x.back();
    std::vector<double> err;
    for (double hl : ladder) err.push_back(max_abs(integrate(hl).x.back() - ref));
    r.ladders.push_back(ladder_json("endpoint_error", "h_sigma", ladder, err));
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < err.size(); ++i)
      worst = std::min(worst, std::log(err[i] / err[i + 1]) / std::log(ladder[i] / ladder[i + 1]));
    r.check("endpoint_order", worst, ">=", c.num("checks.min_order", 3.5));
    r.metric("endpoint_order", worst);
  }
}

void run_mpd(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const double h = c.num("numerics.h_sigma", 1e-3);
  const WorldlineFrame f = make_frame(c, spec, h);
  const FrameSample f0 = f.sample(0);
  const DipoleState d0 = dipole_from_config(c, f0);
  const double span = f.C.s_end() - f.C.s_begin();
  const DipoleTrajectory mpd = mpd_evolve(spec, f0.x, f0.xdot, d0, span, h);
  const bool compare = c.flag("state.compare_quadrupole", true);

  std::optional<QuadrupoleTrajectory> quad;
  if (compare) {
    EvolveOptions eo;
    eo.h = h;
    quad = evolve(embed_dipole(d0, f0), f, {}, eo);
    if (quad->states.size() != mpd.states.size())
      fail(ErrorCode::InvalidArgument, "quadrupole and MPD grids differ; choose a span that is a multiple of h");
  }
  auto spin_norm = [&](const DipoleState& d, const Vec4& x) {
    const Mat4 g = metric(spec, x);
    double s = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int m = 0; m < 4; ++m)
          for (int n = 0; n < 4; ++n) s += g[a][m] * g[b][n] * d.S[a][b] * d.S[m][n];
    return s;
  };
  const double sn0 = spin_norm(d0, f0.x);
  Table t({"sigma", "x0", "x1", "x2", "x3", "m", "X0", "X1", "X2", "X3", "P0", "P1", "P2", "P3", "S01", "S02", "S03",
           "S12", "S13", "S23", "mass_drift", "spin_norm_drift", "discrepancy"});
  double mass_drift = 0.0, spin_drift = 0.0, disc = 0.0;
  for (std::size_t i = 0; i < mpd.states.size(); ++i) {
    const DipoleState& d = mpd.states[i];
    const double md = d.m - d0.m, sd = spin_norm(d, mpd.x[i]) - sn0;
    double di = std::numeric_limits<double>::quiet_NaN();
    if (quad) {
      di = max_state_diff(embed_dipole(d, quad->frame.sample(i)), quad->states[i]);
      disc = std::max(disc, di);
    }
    mass_drift = std::max(mass_drift, std::abs(md));
    spin_drift = std::max(spin_drift, std::abs(sd));
    t.row({mpd.s[i], mpd.x[i][0], mpd.x[i][1], mpd.x[i][2], mpd.x[i][3], d.m, d.X[0], d.X[1], d.X[2], d.X[3], d.P[0],
           d.P[1], d.P[2], d.P[3], d.S[0][1], d.S[0][2], d.S[0][3], d.S[1][2], d.S[1][3], d.S[2][3], md, sd, di});
  }
  r.csv = t.csv();
  r.check("mass_drift", mass_drift, "<=", c.num("checks.mass_drift_max", 1e-12));
  r.check("spin_norm_drift", spin_drift, "<=", c.num("checks.norm_drift_max", 1e-8));
  r.metric("mass_drift", mass_drift);
  r.metric("spin_norm_drift", spin_drift);
  if (quad) {
    r.check("dipole_discrepancy", disc, "<=", c.num("checks.discrepancy_max", 1e-8));
    r.metric("dipole_discrepancy", disc);
  }

  // integrator order: quadrupole evolution at each h against a fine MPD reference
  const auto ladder = c.nums("numerics.h_ladder", {});
  if (compare && ladder.size() >= 2) {
    const double h_ref = *std::min_element(ladder.begin(), ladder.end()) / 4.0;
    const DipoleTrajectory ref = mpd_evolve(spec, f0.x, f0.xdot, d0, span, h_ref);
    std::vector<double> err;
    for (double hl : ladder) {
      const long stride = std::lround(hl / h_ref);
      if (std::abs(stride * h_ref - hl) > 1e-12 * hl)
        fail(ErrorCode::InvalidArgument, "h_ladder entries must be multiples of the smallest one divided by 4");
      EvolveOptions eo;
      eo.h = hl;
      const auto q = evolve(embed_dipole(d0, f0), make_frame(c, spec, hl), {}, eo);
      double e = 0.0;
      for (std::size_t i = 0; i < q.states.size(); ++i) {
        const std::size_t j = i * static_cast<std::size_t>(stride);
        if (j >= ref.states.size()) break;
        e = std::max(e, max_state_diff(embed_dipole(ref.states[j], q.frame.sample(i)), q.states[i]));
      }
      err.push_back(e);
    }
    r.ladders.push_back(ladder_json("dipole_discrepancy_vs_reference", "h_sigma", ladder, err));
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < err.size(); ++i)
      worst = std::min(worst, std::log(err[i] / err[i + 1]) / std::log(ladder[i] / ladder[i + 1]));
    r.check("discrepancy_order", worst, ">=", c.num("checks.min_order", 3.5));
    r.metric("discrepancy_order", worst);
  }
}

// Divergence residual of one evolution, plus the per-segment probe column.
struct QuadRun {
  QuadrupoleTrajectory traj;
  double divergence = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> probe;
};

QuadRun evolve_scenario(const Config& c, const MetricSpec& spec, double h, std::uint64_t seed, bool probes) {
  const WorldlineFrame f = make_frame(c, spec, h);
  const QuadrupoleState s0 = initial_state(c, f.sample(0), seed);
  EvolveOptions eo;
  eo.h = h;
  eo.constraint_tol = c.num("numerics.constraint_tol", 1e-8);
  eo.drift_limit = c.num("numerics.drift_limit", 1e-6);
  ConstitutiveClosure cl;
  if (c.str("state.closure", "frozen") == "parallel") cl.policy = ConstitutiveClosure::Policy::ParallelTransport;
  QuadRun q{evolve(s0, f, cl, eo)};
  const int n_tests = static_cast<int>(c.integer("numerics.n_tests", 2));
  const unsigned pseed = static_cast<unsigned>(seed);
  if (n_tests > 0) {
    const DixonComponents J = q.traj.components();
    q.divergence = divergence_residual(J, q.traj.frame, n_tests, pseed).max_normalized;
    const int segs = static_cast<int>(c.integer("numerics.probe_segments", 4));
    q.probe.assign(q.traj.states.size(), std::numeric_limits<double>::quiet_NaN());
    if (probes && segs > 0) {
      const double t0 = q.traj.frame.C.x.front()[0], t1 = q.traj.frame.C.x.back()[0];
      for (int s = 0; s < segs; ++s) {
        // segments tile the interior window [0.1, 0.9] of chart time
        const double lo = 0.1 + 0.8 * s / segs, hi = 0.1 + 0.8 * (s + 1) / segs;
        const double v = divergence_residual(J, q.traj.frame, n_tests, pseed, lo, hi).max_normalized;
        for (std::size_t i = 0; i < q.probe.size(); ++i) {
          const double u = (q.traj.frame.C.x[i][0] - t0) / (t1 - t0);
          if (u >= lo && (u < hi || (s == segs - 1 && u <= hi))) q.probe[i] = v;
        }
      }
    }
  }
  return q;
}

void run_quadrupole(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const double h = c.num("numerics.h_sigma", 1e-3);
  const QuadRun q = evolve_scenario(c, spec, h, r.seed, true);
  const auto& tr = q.traj;
  std::vector<std::string> cols = {"sigma", "x0", "x1", "x2", "x3", "constraint", "divergence_probe", "mass",
                                   "mass_drift"};
  {
    std::ostringstream hdr;
    QuadrupoleTrajectory empty;
    empty.write_csv(hdr);
    std::string line = hdr.str();
    line = line.substr(0, line.find('\n'));
    std::istringstream ls(line);
    std::string col;
    int skip = 6;  // sigma, x0..x3, constraint
    while (std::getline(ls, col, ','))
      if (skip-- <= 0) cols.push_back(col);
  }
  Table t(cols);
  const double m0 = -0.5 * tr.states.front().x2(0, 0);
  double drift = 0.0, cons = 0.0;
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    const double m = -0.5 * tr.states[i].x2(0, 0);
    drift = std::max(drift, std::abs(m - m0));
    const double ci = constraint_residual(tr.states[i]);
    cons = std::max(cons, ci);
    std::vector<double> row = {tr.frame.C.s[i], tr.frame.C.x[i][0], tr.frame.C.x[i][1], tr.frame.C.x[i][2],
                               tr.frame.C.x[i][3], ci, q.probe.empty() ? std::nan("") : q.probe[i], m, m - m0};
    for (double v : tr.states[i].flat()) row.push_back(v);
    t.row(row);
  }
  r.csv = t.csv();
  r.check("constraint", cons, "<=", c.num("checks.constraint_max", 1e-10));
  r.metric("constraint", cons);
  const std::string init = c.str("state.initial", "monopole");
  if (init != "random") {
    r.check("mass_drift", drift, "<=", c.num("checks.mass_drift_max", 1e-12));
    r.metric("mass_drift", drift);
  }
  if (!std::isnan(q.divergence)) r.metric("divergence_residual", q.divergence);

  const auto ladder = c.nums("numerics.h_ladder", {});
  if (ladder.size() >= 2 && c.integer("numerics.n_tests", 2) > 0) {
    std::vector<double> res;
    for (double hl : ladder) res.push_back(evolve_scenario(c, spec, hl, r.seed, false).divergence);
    r.ladders.push_back(ladder_json("divergence_residual", "h_sigma", ladder, res));
    const auto band = c.nums("checks.ratio_band", {10.0, 22.0});
    for (std::size_t i = 0; i + 1 < res.size(); ++i)
      r.band("divergence_ratio_" + std::to_string(i), res[i] / res[i + 1], band[0], band[1]);
  }
}

std::vector<double> parse_ints(const std::string& s) {
  std::vector<double> v;
  for (char ch : s) {
    if (ch < '0' || ch > '9') fail(ErrorCode::ConfigParse, "bad index string '" + s + "'");
    v.push_back(ch - '0');
  }
  return v;
}

void run_extract(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const double h = c.num("numerics.h_sigma", 1.0 / 1280.0);
  const WorldlineFrame f = make_frame(c, spec, h);
  DixonComponents J;
  if (c.str("extract.source", "random") == "body") {
    BodyField U = BodyField::gaussian(static_cast<int>(c.integer("body.rank", 2)), c.nums("body.tensor", {}),
                                      c.fixed<3>("body.width", {0.04, 0.04, 0.04}),
                                      c.fixed<3>("body.center", {0.0, 0.0, 0.0}), c.num("body.total", 1.0));
    U.velocity = c.fixed<3>("body.velocity", {0.0, 0.0, 0.0});
    MomentOptions mo;
    mo.check_nodes = 0;
    mo.tube.tube_radius = c.num("numerics.tube_radius_geometric", 0.5);
    J = moment_components(U, f, 2, mo);
  } else {
    std::mt19937_64 rng(r.seed);
    std::uniform_real_distribution<double> A(-1.0, 1.0), W(0.5, 2.0), P(0.0, 2.0 * M_PI);
    J = DixonComponents::zeros(2, 2, f.C.s);
    for (int k = 0; k <= 2; ++k)
      for (std::size_t q = 0; q < J.block(k); ++q) {
        const double a = A(rng), b = A(rng), w = W(rng), p = P(rng);
        for (std::size_t i = 0; i < f.size(); ++i) J.data[k][i * J.block(k) + q] = a + b * std::sin(w * f.sigma(i) + p);
      }
  }
  const double mid = 0.5 * (f.C.s_begin() + f.C.s_end());
  const double s0 = f.sigma(f.nearest(c.num("extract.sigma0", mid)));
  const std::size_t i0 = f.nearest(s0);
  ExtractOptions eo;
  eo.eps = c.nums("numerics.eps_ladder", eo.eps);
  eo.profile = static_cast<int>(c.integer("extract.profile", 1));
  const auto picks =
      c.strs("extract.picks", {"0:00:", "0:13:", "1:02:1", "1:22:3", "2:01:12", "2:33:22"});
  PatchCache cache(f);
  Table t({"pick", "k", "eps", "estimate", "richardson", "truth", "error"});
  double worst = 0.0, min_order = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < picks.size(); ++p) {
    const std::string& s = picks[p];
    const auto c1 = s.find(':'), c2 = s.find(':', c1 == std::string::npos ? 0 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      fail(ErrorCode::ConfigParse, "extract pick '" + s + "' must look like k:mu:rho");
    const int k = static_cast<int>(parse_ints(s.substr(0, c1)).at(0));
    std::vector<int> mu, rho;
    for (double v : parse_ints(s.substr(c1 + 1, c2 - c1 - 1))) mu.push_back(static_cast<int>(v));
    for (double v : parse_ints(s.substr(c2 + 1))) rho.push_back(static_cast<int>(v));
    if (static_cast<int>(rho.size()) != k || static_cast<int>(mu.size()) != J.rank)
      fail(ErrorCode::ConfigParse, "extract pick '" + s + "' has the wrong number of indices");
    const Extraction ex = extract_component(J, cache, s0, k, mu, rho, eo);
    const double truth = J.value(k, i0, mu.data(), rho.data());
    for (std::size_t e = 0; e < ex.eps.size(); ++e)
      t.row({double(p), double(k), ex.eps[e], ex.estimates[e], e < ex.richardson.size() ? ex.richardson[e] : std::nan(""),
             truth, ex.estimates[e] - truth});
    t.row({double(p), double(k), 0.0, ex.value, ex.value, truth, ex.value - truth});
    worst = std::max(worst, std::abs(ex.value - truth));
    min_order = std::min(min_order, ex.order);
  }
  r.csv = t.csv();
  r.check("extraction_error", worst, "<=", c.num("checks.extract_tol", 1e-4));
  r.check("extraction_order", min_order, ">=", c.num("checks.min_order", 1.0));
  r.metric("extraction_error", worst);
  r.metric("extraction_order", min_order);
}

void run_squeeze(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const double h = c.num("numerics.h_sigma", 0.01);
  const WorldlineFrame f = make_frame(c, spec, h);
  const int rank = static_cast<int>(c.integer("body.rank", 2));
  std::vector<double> tensor = c.nums("body.tensor", {});
  if (tensor.empty()) {
    tensor.assign(static_cast<std::size_t>(n_mu(rank)), 0.0);
    tensor[0] = 1.0;
  }
  BodyField U = BodyField::gaussian(rank, tensor, c.fixed<3>("body.width", {0.08, 0.05, 0.06}),
                                    c.fixed<3>("body.center", {0.0, 0.0, 0.0}), c.num("body.total", 1.0));
  U.velocity = c.fixed<3>("body.velocity", {0.0, 0.0, 0.0});
  const auto kr = c.nums("body.wavenumber_range", {0.5, 2.0});
  const auto battery = expansion_battery(rank, static_cast<int>(c.integer("numerics.n_tests", 2)),
                                         static_cast<unsigned>(r.seed), kr[0], kr[1]);
  std::vector<int> orders;
  for (double o : c.nums("body.orders", {0, 1, 2})) orders.push_back(static_cast<int>(o));
  ExpansionOptions eo;
  eo.throw_on_shallow = false;
  eo.sigma_nodes = static_cast<int>(c.integer("numerics.sigma_nodes", 5));
  eo.z_nodes = static_cast<int>(c.integer("numerics.z_nodes", 32));
  eo.shoot_steps = static_cast<int>(c.integer("numerics.shoot_steps", 16));
  eo.slope_margin = c.num("checks.slope_margin", 0.2);
  eo.tube.tube_radius = c.num("numerics.tube_radius_geometric", 0.5);
  const auto ladder = c.nums("numerics.eps_ladder", {0.4, 0.2, 0.1, 0.05});
  const auto reps = verify_expansion(U, f, battery, ladder, orders, eo);
  Table t({"order", "test", "eps", "brute", "series", "relative_error"});
  for (const auto& rep : reps) {
    for (std::size_t ti = 0; ti < rep.brute.size(); ++ti)
      for (std::size_t e = 0; e < rep.eps.size(); ++e)
        t.row({double(rep.order), double(ti), rep.eps[e], rep.brute[ti][e], rep.series[ti][e],
               std::abs(rep.brute[ti][e] - rep.series[ti][e]) / rep.scale[ti]});
    const std::string name = "slope_order_" + std::to_string(rep.order);
    ScenarioCheck ck;
    ck.name = name;
    ck.value = rep.slope;
    ck.threshold = rep.order + 1 - eo.slope_margin;
    ck.comparison = ">=";
    ck.passed = rep.passed;
    r.result.checks.push_back(ck);
    r.metric(name, rep.slope);
    r.ladders.push_back(ladder_json("expansion_error_order_" + std::to_string(rep.order), "eps", rep.eps, rep.error));
  }
  r.csv = t.csv();
}

void run_dixon_compare(Run& r, const MetricSpec& spec) {
  const Config& c = r.cfg;
  const auto ladder = c.nums("numerics.h_ladder", {1e-2, 5e-3, 2.5e-3});
  const WorldlineFrame f = make_frame(c, spec, ladder.front());
  const QuadrupoleState s0 = initial_state(c, f.sample(0), r.seed);
  ConjectureOptions co;
  co.h = ladder;
  co.n_tests = static_cast<int>(c.integer("numerics.n_tests", 6));
  co.seed = static_cast<unsigned>(r.seed);
  const auto w = c.fixed<3>("compare.omega", {0.0, 0.0, 0.5});
  // Omega_ab = eps_abc w^c
  co.omega[0][1] = w[2];
  co.omega[1][0] = -w[2];
  co.omega[1][2] = w[0];
  co.omega[2][1] = -w[0];
  co.omega[2][0] = w[1];
  co.omega[0][2] = -w[1];
  const ConjectureMode mode =
      c.str("compare.mode", "rotational") == "symmetry" ? ConjectureMode::SymmetryConstraint
                                                        : ConjectureMode::RotationalDynamics;
  const ConjectureReport rep = dixon_conjecture_check(s0, f, mode, co);
  Table t({"h", "alternative_residual", "reference_residual"});
  for (std::size_t i = 0; i < rep.h.size(); ++i) t.row({rep.h[i], rep.residual[i], rep.reference[i]});
  r.csv = t.csv();
  r.ladders.push_back(ladder_json("reference_residual", "h_sigma", rep.h, rep.reference));
  r.ladders.push_back(ladder_json("alternative_residual", "h_sigma", rep.h, rep.residual));
  double ref_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < rep.reference.size(); ++i)
    ref_ratio = std::min(ref_ratio, rep.reference[i] / rep.reference[i + 1]);
  r.check("reference_converges", ref_ratio, ">=", 8.0);
  r.check("plateau_over_converged", rep.plateau / rep.converged, ">=", c.num("checks.plateau_factor", 1e3));
  ScenarioCheck conv;
  conv.name = "alternative_divergence_free";
  conv.passed = rep.converges;
  conv.value = rep.plateau;
  conv.comparison = "converges";
  conv.advisory = true;
  r.result.checks.push_back(conv);
  r.metric("plateau", rep.plateau);
  r.metric("converged", rep.converged);
  if (mode == ConjectureMode::SymmetryConstraint) {
    r.metric("conflict_dimension", rep.conflict_dimension);
    r.check("conflict_dimension", rep.conflict_dimension, "info", 0.0);
  }
  r.extra["conjecture_converges"] = rep.converges;
}

}  // namespace

// ------------------------------------------------------------------ Scenario

struct Scenario::Impl {
  toml::table table;
  std::string source;
};

Scenario::Scenario(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Scenario::Scenario(const Scenario& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
Scenario& Scenario::operator=(const Scenario& o) {
  if (this != &o) impl_ = std::make_unique<Impl>(*o.impl_);
  return *this;
}
Scenario::Scenario(Scenario&&) noexcept = default;
Scenario& Scenario::operator=(Scenario&&) noexcept = default;
Scenario::~Scenario() = default;

Scenario Scenario::from_string(const std::string& text, const std::string& source) {
  auto impl = std::make_unique<Impl>();
  impl->source = source;
  try {
    impl->table = toml::parse(std::string_view(text), std::string_view(source));
  } catch (const toml::parse_error& e) {
    config_error(source, e.source(), std::string(e.description()));
  }
  validate_table(impl->table, source);
  return Scenario(std::move(impl));
}

Scenario Scenario::from_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot read scenario " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  Scenario s = from_string(ss.str(), path);
  return s;
}

namespace {

void assign_path(toml::table& t, const std::string& key, const toml::node& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    t.insert_or_assign(key, value);
    return;
  }
  const std::string head = key.substr(0, dot);
  if (!t.contains(head)) t.insert(head, toml::table{});
  toml::table* sub = t.get_as<toml::table>(head);
  if (!sub) fail(ErrorCode::ConfigParse, "'" + head + "' is not a table");
  assign_path(*sub, key.substr(dot + 1), value);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

void Scenario::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorCode::ConfigParse, "override '" + assignment + "' must look like key=value");
  const std::string key = trim(assignment.substr(0, eq)), text = trim(assignment.substr(eq + 1));
  if (key.empty()) fail(ErrorCode::ConfigParse, "override '" + assignment + "' has an empty key");
  toml::table parsed;
  try {
    parsed = toml::parse(std::string_view("v = " + text), std::string_view("--set " + key));
  } catch (const toml::parse_error&) {
    // bare words are taken as strings
    parsed = toml::table{};
    parsed.insert("v", text);
  }
  toml::table next = impl_->table;
  assign_path(next, key, *parsed.get("v"));
  validate_table(next, impl_->source + " (override " + key + ")");
  impl_->table = std::move(next);
}

void Scenario::set_output_dir(const std::string& dir) { impl_->table.insert_or_assign("output_dir", dir); }
void Scenario::set_seed(std::uint64_t seed) {
  impl_->table.insert_or_assign("seed", static_cast<int64_t>(seed));
}
std::string Scenario::kind() const { return *impl_->table["kind"].value<std::string>(); }
std::string Scenario::output_dir() const { return impl_->table["output_dir"].value_or(std::string("out")); }
std::uint64_t Scenario::seed() const {
  return static_cast<std::uint64_t>(impl_->table["seed"].value_or(int64_t{1}));
}
std::string Scenario::source() const { return impl_->source; }
std::string Scenario::to_json() const { return toml_to_json(impl_->table).dump(2); }

RunResult Scenario::run() const {
  const Config cfg(impl_->table);
  Run r{cfg, seed(), {}, {}, json::array(), json::object()};
  r.result.kind = kind();
  r.result.output_dir = output_dir();
  try {
    const MetricSpec spec = make_metric(cfg);
    const std::string k = r.result.kind;
    if (k == "geometry-audit")
      run_geometry_audit(r, spec);
    else if (k == "geodesic")
      run_geodesic(r, spec);
    else if (k == "mpd")
      run_mpd(r, spec);
    else if (k == "quadrupole")
      run_quadrupole(r, spec);
    else if (k == "extract")
      run_extract(r, spec);
    else if (k == "squeeze")
      run_squeeze(r, spec);
    else
      run_dixon_compare(r, spec);
  } catch (const Error& e) {
    throw Error(e.code(), "scenario " + impl_->source + " (" + r.result.kind + "): " + e.what());
  }

  RunStatus st = RunStatus::Ok;
  for (const auto& ck : r.result.checks)
    if (!ck.passed) st = ck.advisory ? std::max(st, RunStatus::Warning) : RunStatus::Failed;
  r.result.status = st;

  json summary;
  summary["schema"] = "dixon.summary";
  summary["schema_version"] = 1;
  summary["kind"] = r.result.kind;
  summary["seed"] = r.seed;
  summary["status"] = run_status_name(st);
  json checks = json::array();
  for (const auto& ck : r.result.checks) {
    json j;
    j["name"] = ck.name;
    j["passed"] = ck.passed;
    j["value"] = ck.value;
    j["threshold"] = ck.threshold;
    j["comparison"] = ck.comparison;
    j["advisory"] = ck.advisory;
    checks.push_back(j);
  }
  summary["checks"] = checks;
  summary["metrics"] = r.result.metrics;
  summary["scenario"] = toml_to_json(impl_->table);
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) summary[it.key()] = it.value();
  json residuals;
  residuals["schema"] = "dixon.residuals";
  residuals["schema_version"] = 1;
  residuals["kind"] = r.result.kind;
  residuals["ladders"] = r.ladders;
  r.result.summary_json = summary.dump(2) + "\n";
  r.result.residuals_json = residuals.dump(2) + "\n";

  const fs::path dir(r.result.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  write_file(dir / "trajectory.csv", r.csv);
  write_file(dir / "residuals.json", r.result.residuals_json);
  write_file(dir / "summary.json", r.result.summary_json);
  return r.result;
}

// ------------------------------------------------------------------ sweeps

namespace {

void flatten_grid(const toml::table& t, const std::string& prefix, std::vector<std::pair<std::string, const toml::array*>>& out,
                  const std::string& source) {
  for (auto&& [k, v] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (const toml::table* sub = v.as_table()) {
      flatten_grid(*sub, key, out, source);
    } else if (const toml::array* a = v.as_array()) {
      out.emplace_back(key, a);
    } else {
      config_error(source, v.source(), "grid entry '" + key + "' must be an array of values");
    }
  }
}

std::string value_text(const toml::node& n) {
  std::ostringstream os;
  if (n.is_string())
    os << '"' << *n.value<std::string>() << '"';
  else if (n.is_floating_point())
    os << fmt(*n.value<double>());
  else if (n.is_integer())
    os << *n.value<int64_t>();
  else if (n.is_boolean())
    os << (*n.value<bool>() ? "true" : "false");
  else if (const toml::array* a = n.as_array()) {
    os << '[';
    for (std::size_t i = 0; i < a->size(); ++i) os << (i ? ", " : "") << value_text(*a->get(i));
    os << ']';
  } else {
    fail(ErrorCode::ConfigParse, "unsupported grid value");
  }
  return os.str();
}

}  // namespace

SweepResult run_sweep_text(const Scenario& base, const std::string& grid_text, int workers) {
  toml::table grid;
  try {
    grid = toml::parse(std::string_view(grid_text), std::string_view("grid"));
  } catch (const toml::parse_error& e) {
    config_error("grid", e.source(), std::string(e.description()));
  }
  std::vector<std::pair<std::string, const toml::array*>> axes;
  flatten_grid(grid, "", axes, "grid");
  SweepResult out;
  std::size_t n_points = axes.empty() ? 0 : 1;
  for (const auto& [k, a] : axes) n_points *= a->size();

  // every point is configured and validated before the first run
  std::vector<Scenario> scenarios;
  std::vector<std::vector<std::string>> values(n_points);
  const fs::path root(base.output_dir());
  for (std::size_t p = 0; p < n_points; ++p) {
    Scenario s = base;
    std::size_t rem = p;
    for (std::size_t ax = axes.size(); ax-- > 0;) {
      const toml::array* a = axes[ax].second;
      const std::size_t idx = rem % a->size();
      rem /= a->size();
      values[p].insert(values[p].begin(), value_text(*a->get(idx)));
    }
    for (std::size_t ax = 0; ax < axes.size(); ++ax) s.set(axes[ax].first + "=" + values[p][ax]);
    char name[32];
    std::snprintf(name, sizeof name, "point_%03zu", p);
    s.set_output_dir((root / name).string());
    out.points.push_back((root / name).string());
    scenarios.push_back(std::move(s));
  }

  out.results.resize(n_points);
  std::vector<std::string> errors(n_points);
  std::atomic<std::size_t> next{0};
  const int nw = std::max(1, workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency()));
  auto worker = [&]() {
    for (std::size_t p = next++; p < n_points; p = next++) {
      try {
        out.results[p] = scenarios[p].run();
      } catch (const std::exception& e) {
        errors[p] = e.what();
        out.results[p].kind = base.kind();
        out.results[p].status = RunStatus::Failed;
        out.results[p].output_dir = out.points[p];
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(nw, static_cast<int>(std::max<std::size_t>(n_points, 1))); ++w)
    pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::vector<std::string> metric_names;
  for (const auto& r : out.results)
    for (const auto& [k, v] : r.metrics)
      if (std::find(metric_names.begin(), metric_names.end(), k) == metric_names.end()) metric_names.push_back(k);
  std::sort(metric_names.begin(), metric_names.end());

  std::ostringstream csv;
  csv << "point";
  for (const auto& [k, a] : axes) csv << ',' << k;
  csv << ",status";
  for (const auto& m : metric_names) csv << ',' << m;
  csv << '\n';
  json pts = json::array();
  for (std::size_t p = 0; p < n_points; ++p) {
    const RunResult& r = out.results[p];
    if (!errors[p].empty() || r.status == RunStatus::Failed) {
      char name[32];
      std::snprintf(name, sizeof name, "point_%03zu", p);
      out.failed.push_back(std::string(name) + ": " + (errors[p].empty() ? "failed checks" : errors[p]));
    }
    out.status = std::max(out.status, r.status);
    csv << p;
    for (const auto& v : values[p]) {
      std::string q = v;
      std::replace(q.begin(), q.end(), ',', ';');
      csv << ',' << q;
    }
    csv << ',' << run_status_name(r.status);
    for (const auto& m : metric_names) {
      const auto it = r.metrics.find(m);
      csv << ',' << (it == r.metrics.end() ? std::string("nan") : fmt(it->second));
    }
    csv << '\n';
    json j;
    j["output_dir"] = out.points[p];
    j["values"] = values[p];
    j["status"] = run_status_name(r.status);
    j["metrics"] = r.metrics;
    if (!errors[p].empty()) j["error"] = errors[p];
    pts.push_back(j);
  }
  out.aggregate_csv = csv.str();

  json summary;
  summary["schema"] = "dixon.sweep";
  summary["schema_version"] = 1;
  summary["kind"] = base.kind();
  json keys = json::array();
  for (const auto& [k, a] : axes) keys.push_back(k);
  summary["grid_keys"] = keys;
  summary["points"] = pts;
  summary["failed"] = out.failed;
  summary["status"] = run_status_name(out.status);
  // log-log slopes of every metric along a single numeric axis
  json slopes = json::object();
  if (axes.size() == 1 && n_points >= 2 && axes[0].second->get(0)->is_number()) {
    for (const auto& m : metric_names) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      int n = 0;
      for (std::size_t p = 0; p < n_points; ++p) {
        const auto it = out.results[p].metrics.find(m);
        const double x = *axes[0].second->get(p)->value<double>();
        if (it == out.results[p].metrics.end() || !(std::abs(it->second) > 0.0) || !(x > 0.0)) continue;
        const double lx = std::log(x), ly = std::log(std::abs(it->second));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
      }
      if (n >= 2 && n * sxx - sx * sx > 0) slopes[m] = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
  }
  summary["slopes"] = slopes;
  out.summary_json = summary.dump(2) + "\n";
  if (n_points > 0) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail(ErrorCode::Io, "cannot create output directory " + root.string());
    write_file(root / "sweep.csv", out.aggregate_csv);
    write_file(root / "sweep.json", out.summary_json);
  }
  return out;
}

SweepResult run_sweep(const Scenario& base, const std::string& grid_path, int workers) {
  std::ifstream is(grid_path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot read grid " + grid_path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return run_sweep_text(base, ss.str(), workers);
}

}  // namespace dixon
