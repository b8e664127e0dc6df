#ifndef DIXON_DIXON_H
#define DIXON_DIXON_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DIXON_API __declspec(dllexport)
#else
#define DIXON_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes.  DIXON_OK is zero; every other value names a library error. */
typedef enum dixon_status {
  DIXON_OK = 0,
  DIXON_E_INVALID_ARGUMENT = 1,
  DIXON_E_OUT_OF_DOMAIN = 2,
  DIXON_E_DEPTH_UNAVAILABLE = 3,
  DIXON_E_LEFT_DOMAIN = 4,
  DIXON_E_STEP_UNDERFLOW = 5,
  DIXON_E_NULL_TANGENT = 6,
  DIXON_E_DEGENERATE_FRAME = 7,
  DIXON_E_NOT_ORTHOGONAL = 8,
  DIXON_E_OUTSIDE_TUBE = 9,
  DIXON_E_AMBIGUOUS_FOLD = 10,
  DIXON_E_UNSUPPORTED_ORDER = 11,
  DIXON_E_UNSUPPORTED_WORLDLINE = 12,
  DIXON_E_GRID_TOO_COARSE = 13,
  DIXON_E_NO_CONVERGENCE = 14,
  DIXON_E_CONSTRAINT_VIOLATED = 15,
  DIXON_E_CONSTRAINT_DRIFT = 16,
  DIXON_E_NON_GEODESIC_WORLDLINE = 17,
  DIXON_E_QUADRATURE_NOT_CONVERGED = 18,
  DIXON_E_SLOPE_TOO_SHALLOW = 19,
  DIXON_E_CONFIG_PARSE = 20,
  DIXON_E_IO = 21,
  DIXON_E_INTERNAL = 100
} dixon_status;

typedef enum dixon_run_status { DIXON_RUN_OK = 0, DIXON_RUN_WARNING = 1, DIXON_RUN_FAILED = 2 } dixon_run_status;

typedef enum dixon_family { DIXON_MINKOWSKI = 0, DIXON_SCHWARZSCHILD = 1, DIXON_DE_SITTER = 2 } dixon_family;

/* Message of the most recent failure on the calling thread. */
DIXON_API const char* dixon_last_error(void);
DIXON_API const char* dixon_status_name(int status);
DIXON_API const char* dixon_version(void);

/* ---- scenarios ---- */

typedef struct dixon_scenario dixon_scenario;
typedef struct dixon_result dixon_result;
typedef struct dixon_sweep dixon_sweep;

DIXON_API int dixon_scenario_load(const char* path, dixon_scenario** out);
DIXON_API int dixon_scenario_parse(const char* text, const char* source_name, dixon_scenario** out);
DIXON_API int dixon_scenario_set(dixon_scenario* s, const char* assignment);
DIXON_API int dixon_scenario_set_output(dixon_scenario* s, const char* dir);
DIXON_API int dixon_scenario_set_seed(dixon_scenario* s, uint64_t seed);
/* Pointer valid until the scenario is modified or freed. */
DIXON_API const char* dixon_scenario_kind(const dixon_scenario* s);
DIXON_API int dixon_scenario_run(const dixon_scenario* s, dixon_result** out);
DIXON_API void dixon_scenario_free(dixon_scenario* s);

DIXON_API dixon_run_status dixon_result_status(const dixon_result* r);
DIXON_API const char* dixon_result_summary_json(const dixon_result* r);
DIXON_API const char* dixon_result_output_dir(const dixon_result* r);
DIXON_API size_t dixon_result_check_count(const dixon_result* r);
/* Fills name (may be NULL), passed, value and advisory flag of check i. */
DIXON_API int dixon_result_check(const dixon_result* r, size_t i, const char** name, int* passed, double* value,
                                 int* advisory);
DIXON_API void dixon_result_free(dixon_result* r);

DIXON_API int dixon_sweep_run(const dixon_scenario* base, const char* grid_path, int workers, dixon_sweep** out);
DIXON_API dixon_run_status dixon_sweep_status(const dixon_sweep* s);
DIXON_API size_t dixon_sweep_point_count(const dixon_sweep* s);
DIXON_API size_t dixon_sweep_failed_count(const dixon_sweep* s);
DIXON_API const char* dixon_sweep_failed(const dixon_sweep* s, size_t i);
DIXON_API const char* dixon_sweep_summary_json(const dixon_sweep* s);
DIXON_API void dixon_sweep_free(dixon_sweep* s);

/* ---- geometry ---- */

typedef struct dixon_metric dixon_metric;

/* parameter is the mass (Schwarzschild) or the Hubble rate (de Sitter); margin
   is the horizon margin and is ignored for Minkowski. */
DIXON_API int dixon_metric_create(dixon_family family, double parameter, double margin, dixon_metric** out);
DIXON_API void dixon_metric_free(dixon_metric* m);
DIXON_API int dixon_metric_contains(const dixon_metric* m, const double x[4]);
/* g[16] row-major. */
DIXON_API int dixon_metric_components(const dixon_metric* m, const double x[4], double g[16]);
/* Any of the outputs may be NULL: gamma[64] holds Gamma^a_{bc} at (a*4+b)*4+c,
   riemann[256] holds R^a_{bcd} at ((a*4+b)*4+c)*4+d, and nabla_riemann[1024]
   holds nabla_e R^a_{bcd} at (((a*4+b)*4+c)*4+d)*4+e. */
DIXON_API int dixon_geometry_jet(const dixon_metric* m, const double x[4], double* gamma, double* riemann,
                                 double* nabla_riemann);
DIXON_API int dixon_kretschmann(const dixon_metric* m, const double x[4], double* out);

/* Fixed-step RK4 geodesic; writes up to capacity samples of (s, x[4], v[4]) into
   rows (9 doubles each) and the sample count into n_out. */
DIXON_API int dixon_geodesic(const dixon_metric* m, const double x0[4], const double v0[4], double s_end, double h,
                             double* rows, size_t capacity, size_t* n_out);

/* ---- worldlines and dynamics ---- */

typedef struct dixon_worldline dixon_worldline;
typedef struct dixon_trajectory dixon_trajectory;

/* Geodesic worldline with the tangent Dixon vector on a uniform grid. */
DIXON_API int dixon_worldline_geodesic(const dixon_metric* m, const double x0[4], const double u0[4],
                                       double sigma_begin, double sigma_end, double h, dixon_worldline** out);
DIXON_API size_t dixon_worldline_size(const dixon_worldline* w);
/* x[4], xdot[4], N[4] and the frame e[16] (row a = e_a) at node i; any may be NULL. */
DIXON_API int dixon_worldline_sample(const dixon_worldline* w, size_t i, double* sigma, double* x, double* xdot,
                                     double* N, double* e);
DIXON_API void dixon_worldline_free(dixon_worldline* w);

/* Quadrupole state: 100 frame components (xi2[10], xi3[30], xi4[60]). */
DIXON_API size_t dixon_state_size(void);
DIXON_API int dixon_random_state(uint64_t seed, double scale, double state[100]);
/* Embeds (m, X[4], P[4], S[16]) at node 0 of the worldline. */
DIXON_API int dixon_embed_dipole(const dixon_worldline* w, double m, const double X[4], const double P[4],
                                 const double S[16], double state[100]);
DIXON_API double dixon_constraint_residual(const double state[100]);

/* closure: 0 frozen in frame, 1 parallel transport. */
DIXON_API int dixon_evolve(const dixon_worldline* w, const double state0[100], double h, int closure,
                           dixon_trajectory** out);
DIXON_API size_t dixon_trajectory_size(const dixon_trajectory* t);
DIXON_API int dixon_trajectory_state(const dixon_trajectory* t, size_t i, double* sigma, double state[100]);
DIXON_API int dixon_trajectory_divergence(const dixon_trajectory* t, int n_tests, unsigned seed, double* residual);
DIXON_API int dixon_trajectory_write_csv(const dixon_trajectory* t, const char* path);
DIXON_API void dixon_trajectory_free(dixon_trajectory* t);

/* MPD integration; rows of 4 + 1 + 4 + 4 + 16 doubles (x, m, X, P, S) per node. */
DIXON_API int dixon_mpd(const dixon_metric* m, const double x0[4], const double u0[4], double mass, const double X[4],
                        const double P[4], const double S[16], double span, double h, double* rows, size_t capacity,
                        size_t* n_out);

typedef struct dixon_counts {
  int raw, orthogonal, constraint_rank, dof, selector_rank, free_count, symmetry_rank, symmetry_conflict;
} dixon_counts;
DIXON_API int dixon_counting_audit(dixon_counts* out);

#ifdef __cplusplus
}
#endif

#endif
