#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "dixon/multipole.hpp"

namespace dixon {

// Frame components of a stress-energy quadrupole at one sigma, stored in the
// canonical layout of DixonComponents: xi2[mu], xi3[mu * 3 + a - 1],
// xi4[mu * 6 + rho] with mu a symmetric frame pair and rho a symmetric
// spatial pair.  Frame index 0 is the N-contracted slot.
struct QuadrupoleState {
  std::array<double, 10> xi2{};
  std::array<double, 30> xi3{};
  std::array<double, 60> xi4{};

  static constexpr int kSize = 100;

  double x2(int m, int n) const;
  double x3(int m, int n, int a) const;
  double x4(int m, int n, int a, int b) const;
  void set2(int m, int n, double v);
  void set3(int m, int n, int a, double v);
  void set4(int m, int n, int a, int b, double v);

  double* data() { return xi2.data(); }
  std::array<double, kSize> flat() const;
  static QuadrupoleState from_flat(const double* v);
  double max_abs() const;
};

// Evolved slots are those whose frame pair contains the N-contracted index 0.
bool is_evolved_slot(int flat_index);

// max |xi^{mu(abc)}| over the 40 constraint components.
double constraint_residual(const QuadrupoleState& s);
// max |xi^{(abc)}| over the purely spatial order-one components; the
// constraint is preserved by the flow only when this vanishes.
double closure_consistency(const QuadrupoleState& s);
// Orthogonal projection (in canonical coordinates) onto xi^{mu(abc)} = 0.
void project_constraint(QuadrupoleState& s);
// Orthogonal projection onto the stronger unprojected symmetry xi^{mu(nu rho sigma)} = 0.
void project_unprojected_symmetry(QuadrupoleState& s);

// Seeded random state with entries in [-scale, scale], projected onto the
// constraint and with the symmetric part of the spatial order-one slots removed.
QuadrupoleState random_consistent_state(unsigned long long seed, double scale = 1.0);

struct CountingAudit {
  int raw = 0;                   // symmetric components before orthogonality to N
  int orthogonality_rank = 0;    // rank of N_rho xi^{mu nu rho} = 0, N_rho xi^{mu nu rho sigma} = 0
  int orthogonal = 0;            // raw - orthogonality_rank
  int constraint_rank = 0;       // rank of xi^{mu(abc)} = 0 on the orthogonal components
  int dof = 0;                   // orthogonal - constraint_rank
  int selector_rank = 0;         // rank of the evolved-slot selector
  int free = 0;                  // dof - selector_rank
  int selector_rank_on_surface = 0;  // rank of the selector restricted to the constraint surface
  int symmetry_rank = 0;         // rank of the unprojected symmetry constraint
  int symmetry_conflict = 0;     // symmetry_rank - constraint_rank
};
CountingAudit counting_audit();

// pi^rho_alpha = delta - Cdot^rho N_alpha
Mat4 spatial_projector(const Vec4& xdot, const Vec4& N);

// Frame curvature with the sign opposite to GeometryJet::riemann, in
// frame components: R[A][B][C][D] = R^A_{BCD}, dR[E][A][B][C][D] = nabla_E R^A_{BCD}.
struct FrameCurvature {
  Tensor4 R{};
  Tensor5 dR{};
};
FrameCurvature frame_curvature(const GeometryJet& jet, const FrameSample& fr);

using Mat3 = std::array<std::array<double, 3>, 3>;

struct RhsOptions {
  double constraint_tol = 1e-8;
  // When set, the N-contracted quadrupole slots rotate rigidly with this
  // antisymmetric spatial angular velocity instead of following the
  // divergence-free law (Dixon's rotational proposal).
  const Mat3* rotation = nullptr;
};

// Frame derivatives d/dsigma of all 100 slots: evolved slots from the
// divergence-free equations, free slots copied from free_rates.
QuadrupoleState rhs_adapted(const QuadrupoleState& s, const FrameCurvature& R, const QuadrupoleState& free_rates,
                            const RhsOptions& opt = {});

// The same derivatives from the covariant chart-component equations.
QuadrupoleState rhs_tensorial(const QuadrupoleState& s, const GeometryJet& jet, const FrameSample& fr, const Mat4& pi,
                              const QuadrupoleState& free_rates, const RhsOptions& opt = {});

struct ConstitutiveClosure {
  enum class Policy { FrozenInFrame, ParallelTransport, Callback };
  Policy policy = Policy::FrozenInFrame;
  // Callback policy: given sigma and the current state, write the free slots
  // of `values` and their sigma-derivatives into `rates`.
  std::function<void(double sigma, const QuadrupoleState& current, QuadrupoleState& values, QuadrupoleState& rates)>
      callback;
};

struct EvolveOptions {
  double h = 1e-3;
  bool project = true;
  double constraint_tol = 1e-8;
  double drift_limit = 1e-6;
  enum class Law { Divergence, Rotational, SymmetryConstraint };
  Law law = Law::Divergence;
  Mat3 omega{};  // used by the rotational law
};

struct QuadrupoleTrajectory {
  WorldlineFrame frame;
  std::vector<QuadrupoleState> states;
  std::vector<double> constraint_log;  // constraint residual before projection, per node

  DixonComponents components() const;
  void write_csv(std::ostream& os) const;
};

// RK4 in sigma over the span of `frame`, integrating the worldline, its
// parallel frame and the quadrupole jointly.  The frame must be geodesic with
// a parallel Dixon vector; it supplies the initial point, tangent and triad.
QuadrupoleTrajectory evolve(const QuadrupoleState& s0, const WorldlineFrame& frame,
                            const ConstitutiveClosure& closure = {}, const EvolveOptions& opt = {});

// ---------------------------------------------------------------- dipoles

struct DipoleState {
  double m = 0.0;
  Vec4 X{}, P{};
  Mat4 S{};
};

struct DipoleRates {
  double dm = 0.0;
  Vec4 dX{}, dP{};  // covariant derivatives along the worldline
  Mat4 dS{};
};

// MPD equations on a geodesic.  `acceleration` is the worldline's covariant
// acceleration; anything above tol raises NonGeodesicWorldline.
DipoleRates mpd_rhs(const DipoleState& d, const GeometryJet& jet, const Vec4& xdot, const Vec4& acceleration = {},
                    double tol = 1e-8);

struct DipoleTrajectory {
  std::vector<double> s;
  std::vector<Vec4> x, v;
  std::vector<DipoleState> states;
};

// Direct chart-component RK4 integration of the geodesic and MPD system.
DipoleTrajectory mpd_evolve(const MetricSpec& spec, const Vec4& x0, const Vec4& u0, const DipoleState& d0,
                            double sigma_span, double h);

QuadrupoleState embed_dipole(const DipoleState& d, const FrameSample& fr);
DipoleState dipole_from_state(const QuadrupoleState& s, const FrameSample& fr);

// ---------------------------------------------------------------- divergence probes

struct DivergenceReport {
  std::vector<double> values;      // J[nabla phi] per test covector
  std::vector<double> magnitudes;  // absolute-sum scale per test covector
  double max_abs = 0.0;
  double max_normalized = 0.0;  // the residual norm: max |value| / magnitude
};

// nabla_mu T^{mu nu}[phi_nu] = -T^{mu nu}[nabla_mu phi_nu] for a seeded battery
// of smooth covectors windowed in chart time.  The window covers the fractions
// [window_lo, window_hi] of the worldline's chart-time range.
DivergenceReport divergence_residual(const DixonComponents& J, const WorldlineFrame& f, int n_tests = 6,
                                     unsigned seed = 1, double window_lo = 0.1, double window_hi = 0.9);

enum class ConjectureMode { RotationalDynamics, SymmetryConstraint };

struct ConjectureOptions {
  std::vector<double> h = {1e-2, 5e-3, 2.5e-3};
  Mat3 omega{};
  int n_tests = 6;
  unsigned seed = 1;
};

struct ConjectureReport {
  ConjectureMode mode = ConjectureMode::RotationalDynamics;
  std::vector<double> h;
  std::vector<double> residual;   // normalized divergence residual of the alternative dynamics
  std::vector<double> reference;  // the same for divergence-free evolution at each h
  double plateau = 0.0;           // residual at the finest h
  double converged = 0.0;         // reference residual at the finest h
  int conflict_dimension = 0;     // symmetry mode only
  bool converges = false;         // alternative residual falls by at least 8x per halving
};

ConjectureReport dixon_conjecture_check(const QuadrupoleState& s0, const WorldlineFrame& f, ConjectureMode mode,
                                        const ConjectureOptions& opt = {});

}  // namespace dixon
