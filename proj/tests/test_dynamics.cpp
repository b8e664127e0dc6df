#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dixon/dynamics.hpp"

using namespace dixon;

namespace {

Vec4 unit_tangent(const MetricSpec& spec, const Vec4& x, double ur, double uth, double uph) {
  const Mat4 g = metric(spec, x);
  const double s = g[1][1] * ur * ur + g[2][2] * uth * uth + g[3][3] * uph * uph;
  return {std::sqrt((1.0 + s) / -g[0][0]), ur, uth, uph};
}

Vec4 circular_tangent(double M, double r) {
  const double ut = 1.0 / std::sqrt(1.0 - 3.0 * M / r);
  return {ut, 0.0, 0.0, std::sqrt(M / (r * r * r)) * ut};
}

WorldlineFrame schw_frame(double span, double h, double M = 1.0) {
  const auto spec = MetricSpec::schwarzschild(M);
  const Vec4 x0{0.0, 6.0, 1.2, 0.3};
  return geodesic_worldline(spec, x0, unit_tangent(spec, x0, 0.05, 0.02, 0.03), 0.0, span, h);
}

// Random state obeying the constraint and the closure consistency condition.
QuadrupoleState random_state(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> U(-scale, scale);
  QuadrupoleState s;
  for (double& v : s.xi2) v = U(rng);
  for (double& v : s.xi3) v = U(rng);
  for (double& v : s.xi4) v = U(rng);
  project_constraint(s);
  QuadrupoleState t = s;
  for (int a = 1; a < 4; ++a)
    for (int b = a; b < 4; ++b)
      for (int c = 1; c < 4; ++c) {
        const double sym = (s.x3(a, b, c) + s.x3(b, c, a) + s.x3(c, a, b)) / 3.0;
        t.set3(a, b, c, s.x3(a, b, c) - sym);
      }
  return t;
}

QuadrupoleState random_free_rates(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  QuadrupoleState r;
  for (int k = 0; k < QuadrupoleState::kSize; ++k)
    if (!is_evolved_slot(k)) r.data()[k] = U(rng);
  project_constraint(r);
  return r;
}

double max_diff(const QuadrupoleState& a, const QuadrupoleState& b) {
  const auto fa = a.flat(), fb = b.flat();
  double m = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) m = std::max(m, std::abs(fa[k] - fb[k]));
  return m;
}

}  // namespace

TEST_CASE("counting audit") {
  const CountingAudit a = counting_audit();
  CHECK(a.raw == 150);
  CHECK(a.orthogonal == 100);
  CHECK(a.constraint_rank == 40);
  CHECK(a.dof == 60);
  CHECK(a.selector_rank == 40);
  CHECK(a.free == 20);
  CHECK(a.selector_rank_on_surface == 30);
  // 40 spatial-triple rows plus 24 rows xi^{mu 0 ab} = 0; the ten mu = 0
  // spatial-triple rows already lie in the span of the latter.
  CHECK(a.symmetry_rank == 54);
  CHECK(a.symmetry_conflict == 14);
}

TEST_CASE("state layout and slot classes") {
  QuadrupoleState s;
  s.set4(2, 0, 3, 1, 1.5);
  CHECK(s.x4(0, 2, 1, 3) == 1.5);
  s.set3(3, 1, 2, -2.0);
  CHECK(s.x3(1, 3, 2) == -2.0);
  int evolved = 0;
  for (int k = 0; k < QuadrupoleState::kSize; ++k) evolved += is_evolved_slot(k);
  CHECK(evolved == 40);
  CHECK_THROWS_AS(is_evolved_slot(100), Error);
  const auto f = s.flat();
  CHECK(max_diff(QuadrupoleState::from_flat(f.data()), s) == 0.0);
}

TEST_CASE("constraint projectors") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  QuadrupoleState s;
  for (int k = 0; k < QuadrupoleState::kSize; ++k) s.data()[k] = U(rng);
  CHECK(constraint_residual(s) > 1e-3);
  QuadrupoleState p = s;
  project_constraint(p);
  CHECK(constraint_residual(p) < 1e-14);
  QuadrupoleState pp = p;
  project_constraint(pp);
  CHECK(max_diff(p, pp) < 1e-14);
  // lower orders untouched
  for (int k = 0; k < 40; ++k) CHECK(p.data()[k] == s.data()[k]);

  QuadrupoleState q = s;
  project_unprojected_symmetry(q);
  CHECK(constraint_residual(q) < 1e-14);
  for (int mu = 0; mu < 4; ++mu)
    for (int a = 1; a < 4; ++a)
      for (int b = a; b < 4; ++b) CHECK(std::abs(q.x4(mu, 0, a, b)) < 1e-14);
}

TEST_CASE("adapted and tensorial right-hand sides agree") {
  std::mt19937_64 rng(11);
  const auto f = schw_frame(2.0, 0.05);
  double worst = 0.0, worst_pp = 0.0;
  for (std::size_t node : {0, 13, 40}) {
    const FrameSample fr = f.sample(node);
    const auto jet = geometry_jet(f.spec, fr.x, JetDepth::NablaRiemann);
    const FrameCurvature fc = frame_curvature(jet, fr);
    const Mat4 pi = spatial_projector(fr.xdot, fr.N);
    const Mat4 pipi = matmul(pi, pi);
    for (int trial = 0; trial < 4; ++trial) {
      const QuadrupoleState s = random_state(rng);
      const QuadrupoleState fr_rates = random_free_rates(rng);
      const auto a = rhs_adapted(s, fc, fr_rates);
      const auto t = rhs_tensorial(s, jet, fr, pi, fr_rates);
      const auto t2 = rhs_tensorial(s, jet, fr, pipi, fr_rates);
      worst = std::max(worst, max_diff(a, t) / std::max(1.0, a.max_abs()));
      worst_pp = std::max(worst_pp, max_diff(t, t2) / std::max(1.0, t.max_abs()));
    }
  }
  MESSAGE("adapted vs tensorial " << worst << ", pi vs pi.pi " << worst_pp);
  CHECK(worst < 1e-10);
  CHECK(worst_pp < 1e-13);
}

TEST_CASE("right-hand side rejects constraint violations") {
  const auto f = schw_frame(0.5, 0.05);
  const FrameSample fr = f.sample(0);
  const auto jet = geometry_jet(f.spec, fr.x, JetDepth::NablaRiemann);
  QuadrupoleState s;
  s.set4(1, 1, 1, 1, 1.0);
  CHECK_THROWS_AS(rhs_adapted(s, frame_curvature(jet, fr), {}), Error);
  CHECK_THROWS_AS(rhs_tensorial(s, jet, fr, spatial_projector(fr.xdot, fr.N), {}), Error);
}

TEST_CASE("dipole dictionary reproduces the MPD equations") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const auto f = schw_frame(1.0, 0.05);
  for (std::size_t node : {0, 10}) {
    const FrameSample fr = f.sample(node);
    const auto jet = geometry_jet(f.spec, fr.x, JetDepth::NablaRiemann);
    DipoleState d;
    d.m = 0.7;
    for (int a = 1; a < 4; ++a) {
      d.X = axpy(U(rng), fr.e[a], d.X);
      d.P = axpy(U(rng), fr.e[a], d.P);
      for (int b = a + 1; b < 4; ++b) {
        const double w = U(rng);
        for (int m = 0; m < 4; ++m)
          for (int n = 0; n < 4; ++n) d.S[m][n] += w * (fr.e[a][m] * fr.e[b][n] - fr.e[b][m] * fr.e[a][n]);
      }
    }
    const QuadrupoleState s = embed_dipole(d, fr);
    const DipoleState back = dipole_from_state(s, fr);
    CHECK(std::abs(back.m - d.m) < 1e-14);
    CHECK(max_abs(back.X - d.X) < 1e-12);
    CHECK(max_abs(back.P - d.P) < 1e-12);
    CHECK(max_abs_diff(back.S, d.S) < 1e-12);

    const auto rates = rhs_adapted(s, frame_curvature(jet, fr), {});
    const DipoleRates mpd = mpd_rhs(d, jet, fr.xdot);
    for (int a = 1; a < 4; ++a) {
      CHECK(std::abs(rates.x3(0, 0, a) - dot(fr.theta[a], mpd.dX)) < 1e-12);
      CHECK(std::abs(rates.x2(0, a) - dot(fr.theta[a], mpd.dP)) < 1e-12);
      for (int b = 1; b < 4; ++b) CHECK(std::abs(rates.x3(b, 0, a)) < 1e-14);
    }
    CHECK(std::abs(rates.x2(0, 0)) < 1e-12);
  }
  CHECK_THROWS_AS(mpd_rhs({}, geometry_jet(f.spec, f.sample(0).x, JetDepth::Riemann), f.sample(0).xdot,
                          Vec4{0.0, 1e-3, 0.0, 0.0}),
                  Error);
}

TEST_CASE("monopole is conserved on a circular orbit") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const auto f = geodesic_worldline(spec, {0.0, 10.0, M_PI / 2, 0.0}, circular_tangent(1.0, 10.0), 0.0, 20.0, 0.01);
  QuadrupoleState s;
  s.set2(0, 0, -2.0);
  EvolveOptions opt;
  opt.h = 0.01;
  const auto tr = evolve(s, f, {}, opt);
  double drift = 0.0;
  for (const auto& st : tr.states) drift = std::max(drift, max_diff(st, s));
  CHECK(drift <= 1e-10);
  CHECK(tr.states.size() == 2001);
  CHECK(std::abs(tr.frame.C.x.back()[1] - 10.0) < 1e-9);
}

TEST_CASE("dipole evolution matches an independent MPD integration") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const Vec4 x0{0.0, 8.0, 1.3, 0.2};
  const Vec4 u0 = unit_tangent(spec, x0, 0.02, 0.01, 0.03);
  const auto f = geodesic_worldline(spec, x0, u0, 0.0, 2.0, 0.01);
  const FrameSample f0 = f.sample(0);
  DipoleState d;
  d.m = 1.0;
  d.X = axpy(0.3, f0.e[1], 0.2 * f0.e[2]);
  d.P = axpy(-0.1, f0.e[3], 0.05 * f0.e[1]);
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n) d.S[m][n] = 0.4 * (f0.e[1][m] * f0.e[2][n] - f0.e[2][m] * f0.e[1][n]);
  EvolveOptions opt;
  opt.h = 0.01;
  const auto tr = evolve(embed_dipole(d, f0), f, {}, opt);
  const auto mpd = mpd_evolve(spec, x0, u0, d, 2.0, 0.01);
  REQUIRE(mpd.states.size() == tr.states.size());
  double err = 0.0;
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    const auto e = embed_dipole(mpd.states[i], tr.frame.sample(i));
    err = std::max(err, max_diff(e, tr.states[i]));
  }
  MESSAGE("dipole vs MPD " << err);
  CHECK(err < 1e-9);
}

TEST_CASE("evolve preconditions") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  Curve c;
  for (int i = 0; i <= 20; ++i) {
    const double s = 0.05 * i;
    c.s.push_back(s);
    c.x.push_back({1.2 * s, 8.0 + 0.02 * s * s, 1.2, 0.0});
    c.v.push_back({1.2, 0.04 * s, 0.0, 0.0});
  }
  const auto bent = build_worldline(spec, c, DixonChoice::Tangent);
  CHECK_THROWS_AS(evolve({}, bent, {}), Error);

  const auto f = schw_frame(0.5, 0.05);
  QuadrupoleState bad;
  bad.set4(1, 1, 1, 1, 1.0);
  CHECK_THROWS_AS(evolve(bad, f, {}), Error);

  // without projection an inconsistent closure lets the constraint drift
  std::mt19937_64 rng(2);
  QuadrupoleState s = random_state(rng);
  s.set3(1, 1, 1, 0.5);
  EvolveOptions opt;
  opt.h = 0.05;
  opt.project = false;
  opt.drift_limit = 1e-4;
  CHECK_THROWS_AS(evolve(s, f, {}, opt), Error);
}

TEST_CASE("callback closure drives the free components") {
  std::mt19937_64 rng(9);
  const auto f = schw_frame(0.5, 0.05);
  const QuadrupoleState s0 = random_state(rng, 0.1);
  ConstitutiveClosure cl;
  cl.policy = ConstitutiveClosure::Policy::Callback;
  cl.callback = [](double sigma, const QuadrupoleState&, QuadrupoleState& values, QuadrupoleState& rates) {
    values.set2(1, 2, std::sin(sigma));
    rates.set2(1, 2, std::cos(sigma));
  };
  EvolveOptions opt;
  opt.h = 0.05;
  const auto tr = evolve(s0, f, cl, opt);
  CHECK(std::abs(tr.states.back().x2(1, 2) - std::sin(0.5)) < 1e-14);
  ConstitutiveClosure frozen;
  const auto tf = evolve(s0, f, frozen, opt);
  CHECK(std::abs(tf.states.back().x2(1, 2) - s0.x2(1, 2)) < 1e-14);

  std::ostringstream os;
  tr.write_csv(os);
  CHECK(os.str().find("xi4_00_11") != std::string::npos);
  const DixonComponents J = tr.components();
  CHECK(J.sigma.size() == tr.states.size());
  const int mu[2] = {1, 2};
  CHECK(J.value(0, J.sigma.size() - 1, mu, nullptr) == tr.states.back().x2(1, 2));
}

TEST_CASE("divergence residual converges at fourth order") {
  std::mt19937_64 rng(21);
  const QuadrupoleState s0 = random_state(rng, 0.1);
  const double M = 0.01, r = 20.0 * M;
  const auto spec = MetricSpec::schwarzschild(M, M);
  std::vector<double> res;
  for (double h : {0.01, 0.005}) {
    const auto f = geodesic_worldline(spec, {0.0, r, M_PI / 2, 0.0}, circular_tangent(M, r), 0.0, 10.0, h);
    EvolveOptions opt;
    opt.h = h;
    const auto tr = evolve(s0, f, {}, opt);
    res.push_back(divergence_residual(tr.components(), tr.frame).max_normalized);
  }
  MESSAGE("divergence residuals " << res[0] << " " << res[1] << " ratio " << res[0] / res[1]);
  CHECK(res[0] / res[1] > 10.0);
  CHECK(res[0] / res[1] < 22.0);
}

TEST_CASE("alternative dynamics do not conserve stress-energy") {
  std::mt19937_64 rng(8);
  const QuadrupoleState s0 = random_state(rng, 0.1);
  const double M = 0.01, r = 20.0 * M;
  const auto spec = MetricSpec::schwarzschild(M, M);
  const auto f = geodesic_worldline(spec, {0.0, r, M_PI / 2, 0.0}, circular_tangent(M, r), 0.0, 4.0, 0.01);
  ConjectureOptions opt;
  opt.h = {0.01, 0.005};
  opt.n_tests = 2;
  const auto rot = dixon_conjecture_check(s0, f, ConjectureMode::RotationalDynamics, opt);
  CHECK_FALSE(rot.converges);
  CHECK(rot.plateau > 1e3 * rot.converged);
  const auto sym = dixon_conjecture_check(s0, f, ConjectureMode::SymmetryConstraint, opt);
  CHECK(sym.conflict_dimension == 14);
  CHECK_FALSE(sym.converges);
  CHECK(sym.plateau > 1e3 * sym.converged);
  MESSAGE("rotational plateau " << rot.plateau << " vs " << rot.converged << "; symmetry plateau " << sym.plateau);
}
