#include "dixon/dixon.h"

#include <fstream>
#include <memory>
#include <string>

#include "dixon/dynamics.hpp"
#include "dixon/scenario.hpp"

using namespace dixon;

struct dixon_scenario {
  Scenario s;
  std::string kind;
};
struct dixon_result {
  RunResult r;
};
struct dixon_sweep {
  SweepResult r;
};
struct dixon_metric {
  MetricSpec spec;
};
struct dixon_worldline {
  WorldlineFrame f;
};
struct dixon_trajectory {
  QuadrupoleTrajectory t;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DIXON_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code()) + 1;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DIXON_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DIXON_E_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

Vec4 vec(const double* p) { return {p[0], p[1], p[2], p[3]}; }

Mat4 mat(const double* p) {
  Mat4 m{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i][j] = p[4 * i + j];
  return m;
}

}  // namespace

extern "C" {

const char* dixon_last_error(void) { return g_last_error.c_str(); }

const char* dixon_status_name(int status) {
  if (status == DIXON_OK) return "Ok";
  if (status == DIXON_E_INTERNAL) return "Internal";
  if (status >= 1 && status <= static_cast<int>(ErrorCode::Io) + 1)
    return error_code_name(static_cast<ErrorCode>(status - 1));
  return "Unknown";
}

const char* dixon_version(void) { return "1.0.0"; }

int dixon_scenario_load(const char* path, dixon_scenario** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = nullptr;
    Scenario s = Scenario::from_file(path);
    *out = new dixon_scenario{std::move(s), {}};
  });
}

int dixon_scenario_parse(const char* text, const char* source_name, dixon_scenario** out) {
  return guarded([&] {
    require(text && out, "null argument");
    *out = nullptr;
    Scenario s = Scenario::from_string(text, source_name ? source_name : "<string>");
    *out = new dixon_scenario{std::move(s), {}};
  });
}

int dixon_scenario_set(dixon_scenario* s, const char* assignment) {
  return guarded([&] {
    require(s && assignment, "null argument");
    s->s.set(assignment);
  });
}

int dixon_scenario_set_output(dixon_scenario* s, const char* dir) {
  return guarded([&] {
    require(s && dir, "null argument");
    s->s.set_output_dir(dir);
  });
}

int dixon_scenario_set_seed(dixon_scenario* s, uint64_t seed) {
  return guarded([&] {
    require(s, "null argument");
    s->s.set_seed(seed);
  });
}

const char* dixon_scenario_kind(const dixon_scenario* s) {
  if (!s) return "";
  auto* m = const_cast<dixon_scenario*>(s);
  m->kind = s->s.kind();
  return m->kind.c_str();
}

int dixon_scenario_run(const dixon_scenario* s, dixon_result** out) {
  return guarded([&] {
    require(s && out, "null argument");
    *out = nullptr;
    RunResult r = s->s.run();
    *out = new dixon_result{std::move(r)};
  });
}

void dixon_scenario_free(dixon_scenario* s) { delete s; }

dixon_run_status dixon_result_status(const dixon_result* r) {
  return r ? static_cast<dixon_run_status>(r->r.status) : DIXON_RUN_FAILED;
}
const char* dixon_result_summary_json(const dixon_result* r) { return r ? r->r.summary_json.c_str() : ""; }
const char* dixon_result_output_dir(const dixon_result* r) { return r ? r->r.output_dir.c_str() : ""; }
size_t dixon_result_check_count(const dixon_result* r) { return r ? r->r.checks.size() : 0; }

int dixon_result_check(const dixon_result* r, size_t i, const char** name, int* passed, double* value,
                       int* advisory) {
  return guarded([&] {
    require(r && i < r->r.checks.size(), "check index out of range");
    const ScenarioCheck& c = r->r.checks[i];
    if (name) *name = c.name.c_str();
    if (passed) *passed = c.passed;
    if (value) *value = c.value;
    if (advisory) *advisory = c.advisory;
  });
}

void dixon_result_free(dixon_result* r) { delete r; }

int dixon_sweep_run(const dixon_scenario* base, const char* grid_path, int workers, dixon_sweep** out) {
  return guarded([&] {
    require(base && grid_path && out, "null argument");
    *out = nullptr;
    SweepResult r = run_sweep(base->s, grid_path, workers);
    *out = new dixon_sweep{std::move(r)};
  });
}

dixon_run_status dixon_sweep_status(const dixon_sweep* s) {
  return s ? static_cast<dixon_run_status>(s->r.status) : DIXON_RUN_FAILED;
}
size_t dixon_sweep_point_count(const dixon_sweep* s) { return s ? s->r.points.size() : 0; }
size_t dixon_sweep_failed_count(const dixon_sweep* s) { return s ? s->r.failed.size() : 0; }
const char* dixon_sweep_failed(const dixon_sweep* s, size_t i) {
  return s && i < s->r.failed.size() ? s->r.failed[i].c_str() : "";
}
const char* dixon_sweep_summary_json(const dixon_sweep* s) { return s ? s->r.summary_json.c_str() : ""; }
void dixon_sweep_free(dixon_sweep* s) { delete s; }

int dixon_metric_create(dixon_family family, double parameter, double margin, dixon_metric** out) {
  return guarded([&] {
    require(out, "null argument");
    *out = nullptr;
    MetricSpec spec;
    switch (family) {
      case DIXON_MINKOWSKI: spec = MetricSpec::minkowski(); break;
      case DIXON_SCHWARZSCHILD: spec = MetricSpec::schwarzschild(parameter, margin); break;
      case DIXON_DE_SITTER: spec = MetricSpec::de_sitter(parameter, margin); break;
      default: fail(ErrorCode::InvalidArgument, "unknown metric family");
    }
    *out = new dixon_metric{spec};
  });
}

void dixon_metric_free(dixon_metric* m) { delete m; }

int dixon_metric_contains(const dixon_metric* m, const double x[4]) { return m && x && m->spec.contains(vec(x)); }

int dixon_metric_components(const dixon_metric* m, const double x[4], double g[16]) {
  return guarded([&] {
    require(m && x && g, "null argument");
    const GeometryJet j = geometry_jet(m->spec, vec(x), JetDepth::Metric);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) g[4 * a + b] = j.g[a][b];
  });
}

int dixon_geometry_jet(const dixon_metric* m, const double x[4], double* gamma, double* riemann,
                       double* nabla_riemann) {
  return guarded([&] {
    require(m && x, "null argument");
    const JetDepth depth = nabla_riemann ? JetDepth::NablaRiemann : riemann ? JetDepth::Riemann : JetDepth::Christoffel;
    const GeometryJet j = geometry_jet(m->spec, vec(x), depth);
    std::size_t n = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c) {
          if (gamma) gamma[n] = j.gamma[a][b][c];
          ++n;
        }
    n = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          for (int d = 0; d < 4; ++d) {
            if (riemann) riemann[n] = j.riemann[a][b][c][d];
            if (nabla_riemann)
              for (int e = 0; e < 4; ++e) nabla_riemann[4 * n + e] = j.nabla_riemann[e][a][b][c][d];
            ++n;
          }
  });
}

int dixon_kretschmann(const dixon_metric* m, const double x[4], double* out) {
  return guarded([&] {
    require(m && x && out, "null argument");
    *out = kretschmann(geometry_jet(m->spec, vec(x), JetDepth::Riemann));
  });
}

int dixon_geodesic(const dixon_metric* m, const double x0[4], const double v0[4], double s_end, double h,
                   double* rows, size_t capacity, size_t* n_out) {
  return guarded([&] {
    require(m && x0 && v0 && n_out, "null argument");
    StepControl ctl;
    ctl.h = h;
    const Curve c = integrate_geodesic(m->spec, vec(x0), vec(v0), s_end, ctl);
    *n_out = c.size();
    if (!rows) return;
    require(capacity >= c.size(), "row buffer too small");
    for (std::size_t i = 0; i < c.size(); ++i) {
      double* r = rows + 9 * i;
      r[0] = c.s[i];
      for (int k = 0; k < 4; ++k) {
        r[1 + k] = c.x[i][k];
        r[5 + k] = c.v[i][k];
      }
    }
  });
}

int dixon_worldline_geodesic(const dixon_metric* m, const double x0[4], const double u0[4], double sigma_begin,
                             double sigma_end, double h, dixon_worldline** out) {
  return guarded([&] {
    require(m && x0 && u0 && out, "null argument");
    *out = nullptr;
    WorldlineFrame f = geodesic_worldline(m->spec, vec(x0), vec(u0), sigma_begin, sigma_end, h);
    *out = new dixon_worldline{std::move(f)};
  });
}

size_t dixon_worldline_size(const dixon_worldline* w) { return w ? w->f.size() : 0; }

int dixon_worldline_sample(const dixon_worldline* w, size_t i, double* sigma, double* x, double* xdot, double* N,
                           double* e) {
  return guarded([&] {
    require(w && i < w->f.size(), "node index out of range");
    const FrameSample s = w->f.sample(i);
    if (sigma) *sigma = w->f.sigma(i);
    for (int k = 0; k < 4; ++k) {
      if (x) x[k] = s.x[k];
      if (xdot) xdot[k] = s.xdot[k];
      if (N) N[k] = s.N[k];
      if (e)
        for (int a = 0; a < 4; ++a) e[4 * a + k] = s.e[a][k];
    }
  });
}

void dixon_worldline_free(dixon_worldline* w) { delete w; }

size_t dixon_state_size(void) { return QuadrupoleState::kSize; }

int dixon_random_state(uint64_t seed, double scale, double state[100]) {
  return guarded([&] {
    require(state, "null argument");
    const auto f = random_consistent_state(seed, scale).flat();
    std::copy(f.begin(), f.end(), state);
  });
}

int dixon_embed_dipole(const dixon_worldline* w, double m, const double X[4], const double P[4], const double S[16],
                       double state[100]) {
  return guarded([&] {
    require(w && X && P && S && state, "null argument");
    DipoleState d;
    d.m = m;
    d.X = vec(X);
    d.P = vec(P);
    d.S = mat(S);
    const auto f = embed_dipole(d, w->f.sample(0)).flat();
    std::copy(f.begin(), f.end(), state);
  });
}

double dixon_constraint_residual(const double state[100]) {
  return state ? constraint_residual(QuadrupoleState::from_flat(state)) : 0.0;
}

int dixon_evolve(const dixon_worldline* w, const double state0[100], double h, int closure, dixon_trajectory** out) {
  return guarded([&] {
    require(w && state0 && out, "null argument");
    require(closure == 0 || closure == 1, "closure must be 0 (frozen) or 1 (parallel)");
    *out = nullptr;
    ConstitutiveClosure cl;
    if (closure == 1) cl.policy = ConstitutiveClosure::Policy::ParallelTransport;
    EvolveOptions eo;
    eo.h = h;
    QuadrupoleTrajectory t = evolve(QuadrupoleState::from_flat(state0), w->f, cl, eo);
    *out = new dixon_trajectory{std::move(t)};
  });
}

size_t dixon_trajectory_size(const dixon_trajectory* t) { return t ? t->t.states.size() : 0; }

int dixon_trajectory_state(const dixon_trajectory* t, size_t i, double* sigma, double state[100]) {
  return guarded([&] {
    require(t && i < t->t.states.size(), "node index out of range");
    if (sigma) *sigma = t->t.frame.sigma(i);
    if (state) {
      const auto f = t->t.states[i].flat();
      std::copy(f.begin(), f.end(), state);
    }
  });
}

int dixon_trajectory_divergence(const dixon_trajectory* t, int n_tests, unsigned seed, double* residual) {
  return guarded([&] {
    require(t && residual, "null argument");
    *residual = divergence_residual(t->t.components(), t->t.frame, n_tests, seed).max_normalized;
  });
}

int dixon_trajectory_write_csv(const dixon_trajectory* t, const char* path) {
  return guarded([&] {
    require(t && path, "null argument");
    std::ofstream os(path);
    if (!os) fail(ErrorCode::Io, std::string("cannot write ") + path);
    t->t.write_csv(os);
    if (!os) fail(ErrorCode::Io, std::string("failed writing ") + path);
  });
}

void dixon_trajectory_free(dixon_trajectory* t) { delete t; }

int dixon_mpd(const dixon_metric* m, const double x0[4], const double u0[4], double mass, const double X[4],
              const double P[4], const double S[16], double span, double h, double* rows, size_t capacity,
              size_t* n_out) {
  return guarded([&] {
    require(m && x0 && u0 && X && P && S && n_out, "null argument");
    DipoleState d;
    d.m = mass;
    d.X = vec(X);
    d.P = vec(P);
    d.S = mat(S);
    const DipoleTrajectory tr = mpd_evolve(m->spec, vec(x0), vec(u0), d, span, h);
    *n_out = tr.states.size();
    if (!rows) return;
    require(capacity >= tr.states.size(), "row buffer too small");
    for (std::size_t i = 0; i < tr.states.size(); ++i) {
      double* r = rows + 29 * i;
      const DipoleState& s = tr.states[i];
      for (int k = 0; k < 4; ++k) {
        r[k] = tr.x[i][k];
        r[5 + k] = s.X[k];
        r[9 + k] = s.P[k];
        for (int l = 0; l < 4; ++l) r[13 + 4 * k + l] = s.S[k][l];
      }
      r[4] = s.m;
    }
  });
}

int dixon_counting_audit(dixon_counts* out) {
  return guarded([&] {
    require(out, "null argument");
    const CountingAudit a = counting_audit();
    out->raw = a.raw;
    out->orthogonal = a.orthogonal;
    out->constraint_rank = a.constraint_rank;
    out->dof = a.dof;
    out->selector_rank = a.selector_rank;
    out->free_count = a.free;
    out->symmetry_rank = a.symmetry_rank;
    out->symmetry_conflict = a.symmetry_conflict;
  });
}

}  // extern "C"
