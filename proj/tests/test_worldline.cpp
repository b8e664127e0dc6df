#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dixon/worldline.hpp"

using namespace dixon;

namespace {

// Proper-time tangent of the equatorial circular orbit at radius r.
Vec4 circular_tangent(double M, double r) {
  const double ut = 1.0 / std::sqrt(1.0 - 3.0 * M / r);
  const double omega = std::sqrt(M / (r * r * r));
  return {ut, 0.0, 0.0, omega * ut};
}

double mat_err(const Mat4& a, const Mat4& b) { return max_abs_diff(a, b); }

WorldlineFrame schw_orbit_frame(double span = 4.0, double h = 1e-2) {
  const auto spec = MetricSpec::schwarzschild(1.0);
  return geodesic_worldline(spec, {0.0, 10.0, M_PI / 2, 0.0}, circular_tangent(1.0, 10.0), 0.0, span, h);
}

}  // namespace

TEST_CASE("straight lines and constant curves") {
  const auto spec = MetricSpec::minkowski();
  const auto c = integrate_geodesic(spec, {0, 0, 0, 0}, {1.0, 0.3, 0, 0}, 10.0);
  CHECK(c.complete);
  CHECK(max_abs(c.x.back() - Vec4{10.0, 3.0, 0.0, 0.0}) < 1e-12);
  const auto sch = MetricSpec::schwarzschild(1.0);
  const auto k = integrate_geodesic(sch, {0, 7, 1, 0}, {0, 0, 0, 0}, 3.0);
  for (const auto& x : k.x) CHECK(max_abs(x - Vec4{0, 7, 1, 0}) == 0.0);
}

TEST_CASE("circular schwarzschild orbit stays at r = 10") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const double r = 10.0;
  const Vec4 u = circular_tangent(1.0, r);
  CHECK(u[3] / u[0] == doctest::Approx(std::pow(10.0, -1.5)).epsilon(1e-14));
  const double period = 2.0 * M_PI / (u[3]);  // proper time per orbit
  StepControl ctl;
  ctl.h = 1e-2;
  const auto c = integrate_geodesic(spec, {0.0, r, M_PI / 2, 0.0}, u, period, ctl);
  double dr = 0.0, dnorm = 0.0;
  const double n0 = metric_dot(metric(spec, c.x[0]), c.v[0], c.v[0]);
  for (std::size_t i = 0; i < c.size(); ++i) {
    dr = std::fmax(dr, std::fabs(c.x[i][1] - r));
    dnorm = std::fmax(dnorm, std::fabs(metric_dot(metric(spec, c.x[i]), c.v[i], c.v[i]) - n0));
  }
  CHECK(dr <= 1e-8);
  CHECK(dnorm <= 1e-10);
  CHECK(c.x.back()[3] == doctest::Approx(2.0 * M_PI).epsilon(1e-9));

  StepControl ad;
  ad.method = StepControl::Method::RK45;
  ad.h = 0.1;
  const auto a = integrate_geodesic(spec, {0.0, r, M_PI / 2, 0.0}, u, period, ad);
  double dra = 0.0;
  for (const auto& x : a.x) dra = std::fmax(dra, std::fabs(x[1] - r));
  CHECK(dra <= 1e-8);
  CHECK(a.size() < c.size());
  CHECK(geodesic_residual(spec, c) < 1e-8);
}

TEST_CASE("leaving the domain stops the integration") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  // radial infall from rest at r = 4
  const auto c = integrate_geodesic(spec, {0.0, 4.0, 1.0, 0.0}, {1.0 / std::sqrt(0.5), 0, 0, 0}, 50.0);
  CHECK_FALSE(c.complete);
  CHECK_THROWS_AS(c.require_complete(), Error);
  CHECK(c.x.back()[1] > 2.1);
  for (std::size_t i = 1; i < c.size(); ++i) CHECK(c.s[i] > c.s[i - 1]);
}

TEST_CASE("backward integration returns an increasing parameter") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const auto c = integrate_geodesic(spec, {0.0, 10.0, 1.0, 0.0}, circular_tangent(1.0, 10.0), -1.0);
  CHECK(c.s.front() == doctest::Approx(-1.0));
  CHECK(c.s.back() == 0.0);
  CHECK_NOTHROW(c.validate());
  std::ostringstream os;
  c.write_csv(os);
  CHECK(os.str().rfind("s,x0,x1,x2,x3,v0,v1,v2,v3\n", 0) == 0);
}

TEST_CASE("worldline frames") {
  SUBCASE("minkowski t axis") {
    const auto f = geodesic_worldline(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0, 0, 0}, 0.0, 1.0, 0.1);
    const auto s = f.sample(3);
    CHECK(max_abs(s.N - Vec4{1, 0, 0, 0}) == 0.0);
    for (int a = 1; a < 4; ++a) {
      Vec4 ax{};
      ax[a] = 1.0;
      CHECK(max_abs(s.e[a] - ax) < 1e-15);
    }
  }
  SUBCASE("circular orbit normalisation") {
    const auto f = schw_orbit_frame();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto s = f.sample(i);
      CHECK(std::fabs(dot(s.N, s.xdot) - 1.0) <= 1e-12);
      for (int a = 1; a < 4; ++a) CHECK(std::fabs(dot(s.N, s.e[a])) <= 1e-12);
      CHECK(max_abs(s.theta[0] - s.N) <= 1e-12);
    }
    CHECK(f.geodesic);
    CHECK(f.parallel_frame);
  }
  SUBCASE("build_worldline from a sampled curve matches the joint integration") {
    const auto f = schw_orbit_frame(2.0, 1e-2);
    const auto g = build_worldline(f.spec, f.C, DixonChoice::Tangent);
    CHECK(g.geodesic);
    CHECK(g.parallel_frame);
    double d = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
      for (int a = 1; a < 4; ++a) d = std::fmax(d, max_abs(f.e[i][a] - g.e[i][a]));
    CHECK(d < 1e-9);
  }
  SUBCASE("custom lightlike Dixon vector is accepted") {
    const auto spec = MetricSpec::minkowski();
    const auto C = integrate_geodesic(spec, {0, 0, 0, 0}, {1, 0, 0, 0}, 2.0, {StepControl::Method::RK4, 0.1});
    const auto f = build_worldline(spec, C, DixonChoice::Custom, [](double, const Vec4&, const Vec4&) { return Vec4{1, 1, 0, 0}; });
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(dot(f.N[i], f.C.v[i]) == doctest::Approx(1.0));
      for (int a = 1; a < 4; ++a) CHECK(std::fabs(dot(f.N[i], f.e[i][a])) < 1e-14);
    }
    CHECK_THROWS_AS(build_worldline(spec, C, DixonChoice::Custom,
                                    [](double, const Vec4&, const Vec4&) { return Vec4{2, 0, 0, 0}; }),
                    Error);
  }
  SUBCASE("null tangent is rejected for the tangent choice") {
    const auto spec = MetricSpec::minkowski();
    const auto C = integrate_geodesic(spec, {0, 0, 0, 0}, {1, 1, 0, 0}, 1.0, {StepControl::Method::RK4, 0.1});
    try {
      build_worldline(spec, C, DixonChoice::Tangent);
      FAIL("expected NullTangent");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NullTangent);
    }
  }
}

TEST_CASE("exponential map") {
  const auto mk = geodesic_worldline(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0, 0, 0}, 0.0, 10.0, 0.1);
  CHECK(max_abs(exp_map(mk, 5.0, {0, 0.1, 0.2, 0.3}) - Vec4{5.0, 0.1, 0.2, 0.3}) < 1e-14);
  CHECK(max_abs(exp_map(mk, mk.sigma(50), {0, 0, 0, 0}) - mk.C.x[50]) == 0.0);
  try {
    exp_map(mk, 5.0, {0.1, 0.1, 0, 0});
    FAIL("expected NotOrthogonal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotOrthogonal);
  }
  const auto f = schw_orbit_frame();
  const auto s = f.sample(100);
  const Vec4 V = axpy(0.3, s.e[1], axpy(-0.2, s.e[3], 0.1 * s.e[2]));
  const Vec4 half = exp_map(f, f.sigma(100), 0.5 * V);
  const Vec4 along = shoot(f.spec, s.x, V, 0.5, 128, false).x;
  CHECK(max_abs(half - along) <= 1e-10);
}

TEST_CASE("adapted coordinates invert the exponential map") {
  const auto mk = geodesic_worldline(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0, 0, 0}, 0.0, 10.0, 0.1);
  TubeOptions big;
  big.tube_radius = 10.0;
  const auto a = adapted_coords(mk, {5, 1, 2, 3}, big);
  CHECK(a.sigma == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(a.z[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.z[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(a.z[2] == doctest::Approx(3.0).epsilon(1e-12));

  const auto f = schw_orbit_frame();
  const auto on = adapted_coords(f, f.C.x[150]);
  CHECK(on.sigma == doctest::Approx(f.sigma(150)).epsilon(1e-12));
  CHECK(std::fabs(on.z[0]) + std::fabs(on.z[1]) + std::fabs(on.z[2]) < 1e-12);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0), us(0.5, 3.5);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const double sig = us(rng);
    std::array<double, 3> z{0.25 * u(rng), 0.25 * u(rng), 0.25 * u(rng)};
    const auto fs = f.at(sig);
    Vec4 V{};
    for (int k = 0; k < 3; ++k) V = axpy(z[k], fs.e[k + 1], V);
    const Vec4 x = exp_map(f, sig, V);
    const auto b = adapted_coords(f, x);
    worst = std::fmax(worst, std::fabs(b.sigma - sig));
    for (int k = 0; k < 3; ++k) worst = std::fmax(worst, std::fabs(b.z[k] - z[k]));
  }
  CHECK(worst <= 1e-8);
  TubeOptions tight;
  tight.tube_radius = 0.1;
  const Vec4 far = exp_map(f, 2.0, 0.4 * f.at(2.0).e[1]);
  try {
    adapted_coords(f, far, tight);
    FAIL("expected OutsideTube");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutsideTube);
  }
  TubeOptions fold;
  fold.fold_check = true;
  CHECK_NOTHROW(adapted_coords(f, exp_map(f, 2.0, 0.2 * f.at(2.0).e[2]), fold));
}

TEST_CASE("radial vector") {
  const auto mk = geodesic_worldline(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0, 0, 0}, 0.0, 10.0, 0.1);
  CHECK(max_abs(radial_vector(mk, {4, 0.1, -0.2, 0.3}) - Vec4{0, 0.1, -0.2, 0.3}) < 1e-12);
  const auto f = schw_orbit_frame();
  CHECK(max_abs(radial_vector(f, f.C.x[200])) == 0.0);

  // nabla_U R = U and the symmetrised second derivative vanishes at C
  const std::size_t i = 200;
  const auto s = f.sample(i);
  Tensor3 G;
  christoffel(f.spec, s.x, G);
  const Vec4 U = axpy(0.6, s.e[1], axpy(0.3, s.e[2], -0.5 * s.e[3]));
  auto errors = [&](double h, double& e1, double& e2) {
    const Vec4 rp = radial_vector(f, axpy(h, U, s.x)), rm = radial_vector(f, axpy(-h, U, s.x));
    const Vec4 d1 = (0.5 / h) * (rp - rm);
    e1 = max_abs(d1 - U);
    const Vec4 d2 = (1.0 / (h * h)) * (rp + rm);
    Vec4 gu{};
    for (int m = 0; m < 4; ++m)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) gu[m] += G[m][a][b] * U[a] * U[b];
    const Vec4 proj = axpy(-dot(s.N, gu), s.xdot, gu);
    e2 = max_abs(d2 + 2.0 * gu - proj);
  };
  double a1, a2, b1, b2;
  errors(0.04, a1, a2);
  errors(0.02, b1, b2);
  CHECK(std::log2(a1 / b1) >= 1.9);
  CHECK(std::log2(a2 / b2) >= 1.9);
}

TEST_CASE("propagator laws") {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const auto f = schw_orbit_frame();
  const auto s = f.sample(50);
  const Vec4 V = axpy(0.3, s.e[1], 0.2 * s.e[2]);
  const auto geo = integrate_geodesic(spec, s.x, V, 1.0, {StepControl::Method::RK4, 1e-3});
  const auto p01 = propagate(spec, geo, 0.0, 0.4);
  const auto p12 = propagate(spec, geo, 0.4, 1.0);
  const auto p02 = propagate(spec, geo, 0.0, 1.0);
  CHECK(mat_err(matmul(p12.Pi, p01.Pi), p02.Pi) <= 1e-9);
  const auto p10 = propagate(spec, geo, 0.4, 0.0);
  CHECK(mat_err(matmul(p10.Pi, p01.Pi), identity4()) <= 1e-9);
  CHECK(mat_err(propagate(spec, geo, 0.3, 0.3).Pi, identity4()) == 0.0);
  const Vec4 a{0.3, 0.1, -0.2, 0.05}, b{-0.1, 0.4, 0.2, 0.01};
  const double gp = metric_dot(metric(spec, p02.p), a, b);
  const double gq = metric_dot(metric(spec, p02.q), matvec(p02.Pi, a), matvec(p02.Pi, b));
  CHECK(std::fabs(gp - gq) <= 1e-9);
  // the same segment with doubled speed and half the parameter
  const auto e1 = shoot(spec, s.x, V, 1.0, 1000, true);
  const auto e2 = shoot(spec, s.x, 2.0 * V, 0.5, 1000, true);
  CHECK(mat_err(e1.Pi, e2.Pi) <= 1e-10);
  const auto flat = integrate_geodesic(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0.5, 0, 0}, 2.0);
  CHECK(mat_err(propagate(MetricSpec::minkowski(), flat, 0.0, 2.0).Pi, identity4()) == 0.0);
}

TEST_CASE("transport field back to the worldline") {
  const auto f = schw_orbit_frame();
  CHECK(mat_err(pibar_field(f, f.C.x[120]), identity4()) == 0.0);
  const auto s = f.sample(120);
  const Vec4 V = axpy(0.3, s.e[1], -0.25 * s.e[3]);
  // along H(t) = exp(t V): d/dt Pibar_mu - Gamma^l_{r mu} Hdot^r Pibar_l = 0
  const double t0 = 0.6, h = 1e-3;
  auto pb = [&](double t) { return pibar_field(f, exp_map(f, f.sigma(120), t * V)); };
  const Mat4 Pp = pb(t0 + h), Pm = pb(t0 - h);
  const auto end = shoot(f.spec, s.x, t0 * V, 1.0, 256, false);
  Tensor3 G;
  christoffel(f.spec, end.x, G);
  const Mat4 P0 = pb(t0);
  double worst = 0.0;
  for (int nu = 0; nu < 4; ++nu)
    for (int mu = 0; mu < 4; ++mu) {
      double v = (Pp[nu][mu] - Pm[nu][mu]) / (2 * h);
      for (int l = 0; l < 4; ++l)
        for (int r = 0; r < 4; ++r) v -= G[l][r][mu] * (end.v[r] / t0) * P0[nu][l];
      worst = std::fmax(worst, std::fabs(v));
    }
  CHECK(worst <= 1e-6);
  const auto mk = geodesic_worldline(MetricSpec::minkowski(), {0, 0, 0, 0}, {1, 0, 0, 0}, 0.0, 10.0, 0.1);
  CHECK(mat_err(pibar_field(mk, {3, 0.1, 0.2, -0.1}), identity4()) == 0.0);
}
