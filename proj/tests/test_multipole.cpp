#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dixon/multipole.hpp"

using namespace dixon;

namespace {

// Unit timelike tangent with the given spatial components at x.
Vec4 unit_tangent(const MetricSpec& spec, const Vec4& x, double ur, double uth, double uph) {
  const Mat4 g = metric(spec, x);
  const double s = g[1][1] * ur * ur + g[2][2] * uth * uth + g[3][3] * uph * uph;
  return {std::sqrt((1.0 + s) / -g[0][0]), ur, uth, uph};
}

WorldlineFrame schw_frame(double s0, double s1, double h) {
  const auto spec = MetricSpec::schwarzschild(1.0);
  const Vec4 x0{0.0, 6.0, 1.2, 0.3};
  const Vec4 u = unit_tangent(spec, x0, 0.05, 0.02, 0.03);
  return geodesic_worldline(spec, x0, u, s0, s1, h);
}

std::vector<double> grid_of(const WorldlineFrame& f) {
  std::vector<double> s(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) s[i] = f.sigma(i);
  return s;
}

// Smooth random covariant field of rank 1 or 2.
struct RandomField {
  int rank = 2;
  std::array<double, 16> c0{}, w{}, ph{};
  std::array<Vec4, 16> lin{};
  template <class T>
  void operator()(const std::array<T, 4>& x, T* out) const {
    using std::sin;
    const int n = rank == 2 ? 16 : 4;
    for (int q = 0; q < n; ++q) {
      T v = T(c0[q]);
      for (int l = 0; l < 4; ++l) v = v + lin[q][l] * sin(w[q] * x[l] + ph[q]);
      out[q] = v;
    }
  }
};

RandomField random_field(std::mt19937& rng, int rank = 2) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  RandomField f;
  f.rank = rank;
  for (int q = 0; q < 16; ++q) {
    f.c0[q] = U(rng);
    f.w[q] = 0.3 + 0.5 * std::abs(U(rng));
    f.ph[q] = 3.0 * U(rng);
    for (int l = 0; l < 4; ++l) f.lin[q][l] = U(rng);
  }
  return f;
}

DixonComponents random_components(std::mt19937& rng, const std::vector<double>& sigma, int rank = 2) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto J = DixonComponents::zeros(rank, 2, sigma);
  for (int k = 0; k <= 2; ++k) {
    const std::size_t b = J.block(k);
    for (std::size_t c = 0; c < b; ++c) {
      const double A = U(rng), B = U(rng), om = 2.0 + 3.0 * std::abs(U(rng)), p = 3.0 * U(rng);
      for (std::size_t i = 0; i < sigma.size(); ++i) J.data[k][i * b + c] = A + B * std::sin(om * sigma[i] + p);
    }
  }
  return J;
}

}  // namespace

TEST_CASE("flat-top bumps") {
  for (int profile : {1, 2}) {
    const auto b = FlatTopBump::make(profile);
    double integral = 0.0;
    const int n = 200000;
    const double h = 2.0 * b.w_sup / n;
    for (int i = 0; i <= n; ++i) {
      const double u = -b.w_sup + i * h;
      integral += (i == 0 || i == n ? 0.5 : 1.0) * b(u) * h;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(b(0.0) == 1.0);
    CHECK(b(0.9 * b.w_flat) == 1.0);
    CHECK(b(b.w_sup) == 0.0);
    CHECK(b(-0.5) == b(0.5));
    // profile 1 is C^3 at the junctions, profile 2 is C^2: third differences
    // across a junction shrink like h^4 and h^3 respectively
    for (double u0 : {b.w_flat, b.w_sup}) {
      auto third = [&](double d) { return std::abs(b(u0 + 2 * d) - 3 * b(u0 + d) + 3 * b(u0) - b(u0 - d)); };
      CHECK(std::log2(third(2e-3) / third(1e-3)) > (profile == 1 ? 3.7 : 2.7));
    }
  }
  CHECK(FlatTopBump::make(1).amplitude == doctest::Approx(-105.0));
  CHECK_THROWS_AS(FlatTopBump::make(3), Error);
}

TEST_CASE("canonical indices and storage") {
  CHECK(n_mu(2) == 10);
  CHECK(n_mu(1) == 4);
  CHECK(n_rho(1) == 3);
  CHECK(n_rho(2) == 6);
  CHECK(mu_tuple(2, 1) == std::vector<int>{0, 1});
  CHECK(rho_tuple(2, 5) == std::vector<int>{3, 3});
  for (int c = 0; c < 10; ++c) CHECK(mu_canon(2, mu_tuple(2, c).data()) == c);
  const int ab[2] = {3, 1}, ba[2] = {1, 3};
  CHECK(rho_canon(2, ab) == rho_canon(2, ba));

  auto J = DixonComponents::zeros(2, 2, {0.0, 0.5, 1.0});
  CHECK(J.block(0) == 10);
  CHECK(J.block(1) == 30);
  CHECK(J.block(2) == 60);
  const int mu[2] = {2, 1}, rho[2] = {2, 3};
  J.set(2, 1, mu, rho, 4.5);
  const int mu2[2] = {1, 2}, rho2[2] = {3, 2};
  CHECK(J.value(2, 1, mu2, rho2) == 4.5);

  const std::string text = components_to_json(J);
  const auto back = components_from_json(text);
  CHECK(back.sigma == J.sigma);
  for (int k = 0; k <= 2; ++k) CHECK(back.data[k] == J.data[k]);
  CHECK_THROWS_AS(components_from_json("{\"schema\": \"other\"}"), Error);
  CHECK_THROWS_AS(components_from_json("not json"), Error);
  CHECK_THROWS_AS(DixonComponents::zeros(2, 3, {0.0}), Error);
}

TEST_CASE("simpson weights") {
  for (int n : {3, 4, 7, 10}) {
    std::vector<double> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[i] = i + 0.3 * std::sin(1.7 * i);
    const auto w = simpson_weights(s);
    double q = 0.0;
    for (int i = 0; i < n; ++i) q += w[i] * (1.0 + s[i] + s[i] * s[i]);
    const double a = s.front(), b = s.back();
    const double exact = (b - a) + (b * b - a * a) / 2 + (b * b * b - a * a * a) / 3;
    CHECK(q == doctest::Approx(exact).epsilon(1e-12));
  }
}

TEST_CASE("adapted patch is a Fermi chart along a geodesic") {
  SUBCASE("flat") {
    const auto f = geodesic_worldline(MetricSpec::minkowski(), {0, 1, 2, 3}, {1, 0, 0, 0}, 0.0, 1.0, 0.1);
    const auto p = build_patch(f, 3);
    for (int A = 0; A < 4; ++A)
      for (int B = 0; B < 4; ++B)
        for (int C = 0; C < 4; ++C) CHECK(p.gamma[A][B][C].is_zero());
    for (int n = 0; n < 4; ++n)
      for (int A = 0; A < 4; ++A) CHECK(std::abs(p.pibar[n][A].c[0] - (n == A)) < 1e-15);
    CHECK(p.x[1].c[0] == doctest::Approx(1.0));
    CHECK(p.x[0].c[1] == doctest::Approx(1.0));
  }
  SUBCASE("schwarzschild") {
    const auto f = schw_frame(0.0, 0.5, 0.01);
    const auto p = build_patch(f, 20);
    const auto jet = geometry_jet(f.spec, p.frame.x, JetDepth::Riemann);
    // frame components R^A_{BCD} (curvature convention of the geometry jet)
    auto Rf = [&](int A, int B, int C, int D) {
      double acc = 0.0;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          for (int c = 0; c < 4; ++c)
            for (int d = 0; d < 4; ++d)
              acc += p.frame.theta[A][a] * jet.riemann[a][b][c][d] * p.frame.e[B][b] * p.frame.e[C][c] *
                     p.frame.e[D][d];
      return acc;
    };
    double worst_c = 0.0, worst_tidal = 0.0, worst_spatial = 0.0;
    for (int A = 0; A < 4; ++A)
      for (int B = 0; B < 4; ++B)
        for (int C = 0; C < 4; ++C) {
          const auto& G = p.gamma[A][B][C];
          worst_c = std::max({worst_c, std::abs(G.c[0]), std::abs(G.c[1])});  // value and d/dsigma on C
          for (int b = 1; b < 4; ++b) {
            if (B == 0 && C == 0 && A > 0) worst_tidal = std::max(worst_tidal, std::abs(G.c[1 + b] - Rf(A, 0, b, 0)));
            if (A > 0 && B > 0 && C > 0)
              worst_spatial = std::max(
                  worst_spatial, std::abs(G.c[1 + b] + (Rf(A, B, C, b) + Rf(A, C, B, b)) / 3.0));
          }
        }
    CHECK(worst_c < 1e-12);
    CHECK(worst_tidal < 1e-12);
    CHECK(worst_spatial < 1e-12);
  }
  SUBCASE("non-geodesic worldlines are refused") {
    const auto spec = MetricSpec::minkowski();
    Curve c;
    for (int i = 0; i <= 10; ++i) {
      const double s = 0.1 * i;
      c.s.push_back(s);
      c.x.push_back({s, 0.1 * s * s, 0, 0});
      c.v.push_back({1, 0.2 * s, 0, 0});
    }
    const auto f = build_worldline(spec, c, DixonChoice::Tangent);
    CHECK_FALSE(f.geodesic);
    try {
      build_patch(f, 2);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnsupportedWorldline);
    }
  }
}

TEST_CASE("chart jets agree with the adapted engine") {
  std::mt19937 rng(7);
  const auto f = schw_frame(0.0, 0.4, 0.01);
  const auto sigma = grid_of(f);
  for (int trial = 0; trial < 5; ++trial) {
    const int rank = trial % 2 ? 1 : 2;
    const auto J = random_components(rng, sigma, rank);
    const auto phi = TestTensor::from_chart(make_chart_field(rank, random_field(rng, rank)));
    const auto a = apply(J, f, phi);
    ApplyOptions opt;
    opt.force_adapted = true;
    const auto b = apply(J, f, phi, opt);
    CHECK(std::abs(a.value - b.value) <= 1e-10 * std::max(1.0, std::abs(a.value)));
    CHECK_FALSE(a.grid_too_coarse);
  }
}

TEST_CASE("split laws") {
  std::mt19937 rng(11);
  const auto f = schw_frame(0.0, 0.2, 0.01);
  const auto sigma = grid_of(f);
  const auto J = random_components(rng, sigma);
  PatchCache cache(f);
  for (int trial = 0; trial < 20; ++trial) {
    const auto phi = TestTensor::from_chart(make_chart_field(2, random_field(rng)));
    std::array<std::vector<double>, 4> S;
    for (int r = 0; r <= 3; ++r) S[r] = dixon_split(J, cache, phi, r);
    double scale = 1.0;
    for (double v : S[0]) scale = std::max(scale, std::abs(v));
    const double tol = 1e-7 * scale;
    // completeness
    const double whole = apply(J, f, phi).value;
    CHECK(std::abs(S[0][0] + S[0][1] + S[0][2] - whole) <= tol);
    for (int k = 0; k <= 2; ++k) {
      CHECK(std::abs(S[1][k] - k * S[0][k]) <= tol);  // ladder
      for (int r = 0; r <= 3; ++r) {
        double expect = 0.0;  // k!/(k-r)!, zero once r > k
        if (r <= k) {
          expect = 1.0;
          for (int q = 0; q < r; ++q) expect *= (k - q);
        }
        CHECK(std::abs(S[r][k] - expect * S[0][k]) <= tol);
      }
    }
  }
}

TEST_CASE("linearity") {
  std::mt19937 rng(5);
  const auto f = schw_frame(0.0, 0.2, 0.01);
  const auto sigma = grid_of(f);
  const auto J = random_components(rng, sigma);
  const auto a = random_field(rng), b = random_field(rng);
  const double ca = 0.7, cb = -1.3;
  auto combo = [a, b, ca, cb](const auto& x, auto* out) {
    using T = std::decay_t<decltype(out[0])>;
    std::array<T, 16> ta{}, tb{};
    a(x, ta.data());
    b(x, tb.data());
    for (int q = 0; q < 16; ++q) out[q] = ca * ta[q] + cb * tb[q];
  };
  const double va = apply(J, f, TestTensor::from_chart(make_chart_field(2, a))).value;
  const double vb = apply(J, f, TestTensor::from_chart(make_chart_field(2, b))).value;
  const double vc = apply(J, f, TestTensor::from_chart(make_chart_field(2, combo))).value;
  CHECK(std::abs(vc - (ca * va + cb * vb)) <= 1e-12 * std::max(1.0, std::abs(vc)));
}

TEST_CASE("symmetrized covariant derivatives") {
  std::mt19937 rng(3);
  const auto spec = MetricSpec::schwarzschild(1.0);
  const Vec4 x{0.0, 6.0, 1.1, 0.4};
  const auto fld = make_chart_field(2, random_field(rng));
  const std::vector<Vec4> dirs{{1.0, 0.1, 0.0, 0.02}, {0.3, -0.2, 0.05, 0.0}, {0.0, 0.1, 0.1, 0.1}};
  for (int k = 1; k <= 3; ++k) {
    const std::vector<Vec4> d(dirs.begin(), dirs.begin() + k);
    const auto exact = sym_cov_deriv(spec, *fld, k, x, d);
    const double h1 = k == 3 ? 2e-2 : 1e-2;
    const auto e1 = sym_cov_deriv(spec, *fld, k, x, d, DerivativeStrategy::FiniteDifference, h1);
    const auto e2 = sym_cov_deriv(spec, *fld, k, x, d, DerivativeStrategy::FiniteDifference, h1 / 2);
    double r1 = 0.0, r2 = 0.0;
    for (std::size_t q = 0; q < exact.size(); ++q) {
      r1 = std::max(r1, std::abs(e1[q] - exact[q]));
      r2 = std::max(r2, std::abs(e2[q] - exact[q]));
    }
    CHECK(r2 < 1e-4);
    CHECK(std::log2(r1 / r2) > 1.8);
  }
  // order is independent of direction order for the symmetrized derivative
  const auto s12 = sym_cov_deriv(spec, *fld, 2, x, {dirs[0], dirs[1]});
  const auto s21 = sym_cov_deriv(spec, *fld, 2, x, {dirs[1], dirs[0]});
  for (std::size_t q = 0; q < s12.size(); ++q) CHECK(s12[q] == doctest::Approx(s21[q]).epsilon(1e-13));
  CHECK_THROWS_AS(sym_cov_deriv(spec, *fld, 4, x, {dirs[0], dirs[0], dirs[0], dirs[0]}), Error);
}

TEST_CASE("component extraction round trip") {
  std::mt19937 rng(23);
  const double h = 1.0 / 1280.0;
  const auto f = schw_frame(0.0, 0.6, h);
  const auto sigma = grid_of(f);
  const auto J = random_components(rng, sigma);
  const double s0 = f.sigma(f.nearest(0.3));
  PatchCache cache(f);
  for (int profile : {1, 2}) {
    ExtractOptions opt;
    opt.profile = profile;
    const std::vector<std::tuple<int, std::vector<int>, std::vector<int>>> picks = {
        {0, {0, 0}, {}}, {0, {1, 3}, {}}, {1, {0, 2}, {1}}, {1, {2, 2}, {3}}, {2, {0, 1}, {1, 2}}, {2, {3, 3}, {2, 2}}};
    for (const auto& [k, mu, rho] : picks) {
      const auto ex = extract_component(J, cache, s0, k, mu, rho, opt);
      const double truth = J.value(k, f.nearest(s0), mu.data(), rho.data());
      CHECK(std::abs(ex.value - truth) <= 1e-4);
      CHECK(ex.order >= 1.0);
    }
  }
  // off-order probe: a pure quadrupole is invisible to the order-0 and order-1 extractors
  auto Q = DixonComponents::zeros(2, 2, sigma);
  for (std::size_t i = 0; i < sigma.size(); ++i)
    for (std::size_t c = 0; c < Q.block(2); ++c) Q.data[2][i * Q.block(2) + c] = J.data[2][i * J.block(2) + c];
  const auto z0 = extract_component(Q, cache, s0, 0, {0, 1}, {});
  const auto z1 = extract_component(Q, cache, s0, 1, {1, 1}, {2});
  CHECK(std::abs(z0.value) < 1e-8);
  CHECK(std::abs(z1.value) < 1e-8);
}

TEST_CASE("extraction errors") {
  const auto f = schw_frame(0.0, 0.6, 0.01);
  const auto J = DixonComponents::zeros(2, 2, grid_of(f));
  PatchCache cache(f);
  try {
    extract_component(J, cache, 0.3, 0, {0, 0}, {});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GridTooCoarse);
  }
  ExtractOptions wide;
  wide.eps = {0.4, 0.2};
  CHECK_THROWS_AS(extract_component(J, cache, 0.3, 0, {0, 0}, {}, wide), Error);
  CHECK_THROWS_AS(extract_component(J, cache, 0.3, 3, {0, 0}, {1, 1, 1}), Error);
}

TEST_CASE("coarse grids raise the quadrature warning") {
  const auto f = schw_frame(0.0, 2.0, 0.25);
  auto J = DixonComponents::zeros(2, 0, grid_of(f));
  for (std::size_t i = 0; i < J.sigma.size(); ++i) J.data[0][i * 10] = std::sin(9.0 * J.sigma[i]);
  auto fld = make_chart_field(2, [](const auto& x, auto* out) { out[0] = x[0] * x[0] * x[0] * x[0]; });
  const auto r = apply(J, f, TestTensor::from_chart(fld));
  CHECK(r.grid_too_coarse);
}
