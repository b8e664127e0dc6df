#include "dixon/worldline.hpp"

#include <algorithm>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace dixon {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Gamma^m_{ab} u^a w^b
Vec4 contract_gamma(const Tensor3& G, const Vec4& u, const Vec4& w) {
  Vec4 r{};
  for (int m = 0; m < 4; ++m) {
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
      if (u[a] == 0.0) continue;
      for (int b = 0; b < 4; ++b) acc += G[m][a][b] * u[a] * w[b];
    }
    r[m] = acc;
  }
  return r;
}

// Gamma^l_{a m} u^a omega_l, the covector transport term
Vec4 contract_gamma_covector(const Tensor3& G, const Vec4& u, const Vec4& om) {
  Vec4 r{};
  for (int m = 0; m < 4; ++m) {
    double acc = 0.0;
    for (int l = 0; l < 4; ++l)
      for (int a = 0; a < 4; ++a) acc += G[l][a][m] * u[a] * om[l];
    r[m] = acc;
  }
  return r;
}

struct Hermite {
  double h, t;
  double h00, h10, h01, h11, d00, d10, d01, d11;
  Hermite(double s0, double s1, double s) {
    h = s1 - s0;
    t = (s - s0) / h;
    const double t2 = t * t, t3 = t2 * t;
    h00 = 2 * t3 - 3 * t2 + 1;
    h10 = t3 - 2 * t2 + t;
    h01 = -2 * t3 + 3 * t2;
    h11 = t3 - t2;
    d00 = (6 * t2 - 6 * t) / h;
    d10 = 3 * t2 - 4 * t + 1;
    d01 = (-6 * t2 + 6 * t) / h;
    d11 = 3 * t2 - 2 * t;
  }
  Vec4 value(const Vec4& p0, const Vec4& m0, const Vec4& p1, const Vec4& m1) const {
    Vec4 r;
    for (int i = 0; i < 4; ++i) r[i] = h00 * p0[i] + h10 * h * m0[i] + h01 * p1[i] + h11 * h * m1[i];
    return r;
  }
  Vec4 slope(const Vec4& p0, const Vec4& m0, const Vec4& p1, const Vec4& m1) const {
    Vec4 r;
    for (int i = 0; i < 4; ++i) r[i] = d00 * p0[i] + d10 * m0[i] + d01 * p1[i] + d11 * m1[i];
    return r;
  }
};

std::size_t bracket(const std::vector<double>& s, double t) {
  auto it = std::upper_bound(s.begin(), s.end(), t);
  std::size_t i = (it == s.begin()) ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
  return std::min(i, s.size() - 2);
}

bool in_range(const std::vector<double>& s, double t) {
  const double lo = std::min(s.front(), s.back()), hi = std::max(s.front(), s.back());
  const double slack = 1e-12 * std::max(1.0, std::fabs(hi - lo));
  return t >= lo - slack && t <= hi + slack;
}

// Geodesic state with optional propagator columns.
struct GeoState {
  Vec4 x, v;
  Mat4 P;
};

template <bool WithPi>
GeoState geo_rhs(const MetricSpec& spec, const GeoState& y) {
  Tensor3 G;
  christoffel(spec, y.x, G);
  GeoState d;
  d.x = y.v;
  const Vec4 a = contract_gamma(G, y.v, y.v);
  d.v = {-a[0], -a[1], -a[2], -a[3]};
  if constexpr (WithPi) {
    Mat4 M{};  // M[m][l] = Gamma^m_{a l} v^a
    for (int m = 0; m < 4; ++m)
      for (int l = 0; l < 4; ++l) {
        double acc = 0.0;
        for (int q = 0; q < 4; ++q) acc += G[m][q][l] * y.v[q];
        M[m][l] = acc;
      }
    const Mat4 MP = matmul(M, y.P);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) d.P[i][j] = -MP[i][j];
  }
  return d;
}

template <bool WithPi>
GeoState geo_axpy(double a, const GeoState& d, const GeoState& y) {
  GeoState r;
  r.x = axpy(a, d.x, y.x);
  r.v = axpy(a, d.v, y.v);
  if constexpr (WithPi)
    for (int i = 0; i < 4; ++i) r.P[i] = axpy(a, d.P[i], y.P[i]);
  return r;
}

template <bool WithPi>
bool rk4_step(const MetricSpec& spec, GeoState& y, double h) {
  const GeoState k1 = geo_rhs<WithPi>(spec, y);
  const GeoState y2 = geo_axpy<WithPi>(0.5 * h, k1, y);
  if (!spec.contains(y2.x)) return false;
  const GeoState k2 = geo_rhs<WithPi>(spec, y2);
  const GeoState y3 = geo_axpy<WithPi>(0.5 * h, k2, y);
  if (!spec.contains(y3.x)) return false;
  const GeoState k3 = geo_rhs<WithPi>(spec, y3);
  const GeoState y4 = geo_axpy<WithPi>(h, k3, y);
  if (!spec.contains(y4.x)) return false;
  const GeoState k4 = geo_rhs<WithPi>(spec, y4);
  GeoState out = y;
  const double w1 = h / 6.0, w2 = h / 3.0;
  for (int i = 0; i < 4; ++i) {
    out.x[i] += w1 * (k1.x[i] + k4.x[i]) + w2 * (k2.x[i] + k3.x[i]);
    out.v[i] += w1 * (k1.v[i] + k4.v[i]) + w2 * (k2.v[i] + k3.v[i]);
    if constexpr (WithPi)
      for (int j = 0; j < 4; ++j) out.P[i][j] += w1 * (k1.P[i][j] + k4.P[i][j]) + w2 * (k2.P[i][j] + k3.P[i][j]);
  }
  if (!spec.contains(out.x)) return false;
  y = out;
  return true;
}

int steps_for(double span, double h) {
  if (!(h > 0.0)) fail(ErrorCode::InvalidArgument, "step size must be positive");
  const double n = std::ceil(std::fabs(span) / h - 1e-9);
  return std::max(1, static_cast<int>(n));
}

void make_increasing(Curve& c) {
  if (c.s.size() > 1 && c.s.back() < c.s.front()) {
    std::reverse(c.s.begin(), c.s.end());
    std::reverse(c.x.begin(), c.x.end());
    std::reverse(c.v.begin(), c.v.end());
  }
}

using OdeState = std::array<double, 8>;

Curve integrate_adaptive(const MetricSpec& spec, const Vec4& x0, const Vec4& v0, double s_end, const StepControl& ctl) {
  namespace odeint = boost::numeric::odeint;
  auto sys = [&spec](const OdeState& y, OdeState& dy, double) {
    Tensor3 G;
    const Vec4 x{y[0], y[1], y[2], y[3]}, v{y[4], y[5], y[6], y[7]};
    christoffel(spec, x, G);
    const Vec4 a = contract_gamma(G, v, v);
    for (int i = 0; i < 4; ++i) {
      dy[i] = v[i];
      dy[4 + i] = -a[i];
    }
  };
  auto stepper = odeint::make_controlled(ctl.atol, ctl.rtol, odeint::runge_kutta_dopri5<OdeState>());
  Curve c;
  OdeState y{x0[0], x0[1], x0[2], x0[3], v0[0], v0[1], v0[2], v0[3]};
  double s = 0.0;
  const double dir = s_end >= 0.0 ? 1.0 : -1.0;
  double dt = dir * std::min(ctl.h, std::fabs(s_end) > 0 ? std::fabs(s_end) : ctl.h);
  auto push = [&]() {
    c.s.push_back(s);
    c.x.push_back({y[0], y[1], y[2], y[3]});
    c.v.push_back({y[4], y[5], y[6], y[7]});
  };
  push();
  if (s_end == 0.0) return c;
  while (dir * (s_end - s) > 0.0) {
    if (dir * (s + dt - s_end) > 0.0) dt = s_end - s;
    OdeState trial = y;
    double st = s, dtt = dt;
    const auto res = stepper.try_step(sys, trial, st, dtt);
    if (res == odeint::success) {
      const Vec4 xn{trial[0], trial[1], trial[2], trial[3]};
      if (!spec.contains(xn)) {
        stepper.reset();
        dt *= 0.5;
        if (std::fabs(dt) < ctl.h_min) {
          c.complete = false;
          c.stop_reason = "LeftDomain at s=" + num(s);
          make_increasing(c);
          return c;
        }
        continue;
      }
      y = trial;
      s = st;
      dt = dtt;
      push();
    } else {
      dt = dtt;
      if (std::fabs(dt) < ctl.h_min) fail(ErrorCode::StepUnderflow, "adaptive step fell below h_min at s=" + num(s));
    }
  }
  make_increasing(c);
  return c;
}

Vec4 project_out(const Vec4& w, const Vec4& N, const Vec4& xdot) {
  const double k = dot(N, w);
  return axpy(-k, xdot, w);
}

// Spatial triad in N-perp from the chart axes, orthonormalised with g where possible.
std::array<Vec4, 3> initial_triad(const Mat4& g, const Vec4& N, const Vec4& xdot) {
  std::array<Vec4, 3> out{};
  int found = 0;
  bool use_g = true;
  for (int attempt = 0; attempt < 2 && found < 3; ++attempt) {
    found = 0;
    for (int k = 1; k <= 4 && found < 3; ++k) {
      Vec4 w{};
      w[k % 4] = 1.0;
      w = project_out(w, N, xdot);
      for (int j = 0; j < found; ++j) {
        const double c = use_g ? metric_dot(g, out[j], w) : dot(out[j], w);
        w = axpy(-c, out[j], w);
      }
      const double n2 = use_g ? metric_dot(g, w, w) : dot(w, w);
      if (!(n2 > 1e-10)) {
        if (use_g && n2 < -1e-10) break;
        continue;
      }
      const double inv = 1.0 / std::sqrt(n2);
      out[found++] = inv * w;
    }
    if (found < 3) use_g = false;
  }
  if (found < 3) fail(ErrorCode::DegenerateFrame, "could not build a spatial triad in N-perp");
  return out;
}

std::array<Vec4, 4> dual_basis(const std::array<Vec4, 4>& e) {
  Mat4 E{};  // columns are basis vectors
  for (int A = 0; A < 4; ++A)
    for (int m = 0; m < 4; ++m) E[m][A] = e[A][m];
  Mat4 Ei;
  if (!invert4(E, Ei)) fail(ErrorCode::DegenerateFrame, "frame matrix is singular");
  std::array<Vec4, 4> th;
  for (int A = 0; A < 4; ++A) th[A] = Ei[A];
  return th;
}

double frame_condition(const std::array<Vec4, 4>& e, const std::array<Vec4, 4>& th) {
  double a = 0.0, b = 0.0;
  for (int A = 0; A < 4; ++A) {
    a = std::fmax(a, max_abs(e[A]));
    b = std::fmax(b, max_abs(th[A]));
  }
  return a * b;
}

Vec4 tangent_dixon_vector(const Mat4& g, const Vec4& xdot) {
  const double n = -metric_dot(g, xdot, xdot);
  const double scale = dot(xdot, xdot);
  if (!(n > 1e-12 * std::max(scale, 1e-300))) fail(ErrorCode::NullTangent, "tangent Dixon vector needs a timelike tangent");
  const Vec4 low = lower(g, xdot);
  return (-1.0 / n) * low;
}

}  // namespace

// ---------------------------------------------------------------- Curve

Vec4 Curve::point_at(double t) const {
  if (s.size() == 1) return x[0];
  if (!in_range(s, t)) fail(ErrorCode::InvalidArgument, "parameter " + num(t) + " outside curve range");
  const std::size_t i = bracket(s, t);
  if (t == s[i]) return x[i];
  if (t == s[i + 1]) return x[i + 1];
  const Hermite H(s[i], s[i + 1], t);
  return H.value(x[i], v[i], x[i + 1], v[i + 1]);
}

Vec4 Curve::tangent_at(double t) const {
  if (s.size() == 1) return v[0];
  if (!in_range(s, t)) fail(ErrorCode::InvalidArgument, "parameter " + num(t) + " outside curve range");
  const std::size_t i = bracket(s, t);
  if (t == s[i]) return v[i];
  if (t == s[i + 1]) return v[i + 1];
  const Hermite H(s[i], s[i + 1], t);
  return H.slope(x[i], v[i], x[i + 1], v[i + 1]);
}

void Curve::validate() const {
  if (s.empty() || s.size() != x.size() || s.size() != v.size())
    fail(ErrorCode::InvalidArgument, "curve arrays are empty or inconsistent");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (!(s[i] > s[i - 1])) fail(ErrorCode::InvalidArgument, "curve parameter is not strictly increasing");
}

void Curve::require_complete() const {
  if (!complete) fail(ErrorCode::LeftDomain, stop_reason);
}

void Curve::write_csv(std::ostream& os) const {
  os << "s,x0,x1,x2,x3,v0,v1,v2,v3\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << s[i];
    for (double c : x[i]) os << ',' << c;
    for (double c : v[i]) os << ',' << c;
    os << '\n';
  }
}

// ---------------------------------------------------------------- geodesics

Curve integrate_geodesic(const MetricSpec& spec, const Vec4& x0, const Vec4& v0, double s_end, const StepControl& ctl) {
  if (!spec.contains(x0)) fail(ErrorCode::OutOfDomain, "geodesic start point outside the domain");
  if (ctl.method == StepControl::Method::RK45) return integrate_adaptive(spec, x0, v0, s_end, ctl);
  Curve c;
  c.s.push_back(0.0);
  c.x.push_back(x0);
  c.v.push_back(v0);
  if (s_end == 0.0) return c;
  const int n = steps_for(s_end, ctl.h);
  const double h = s_end / n;
  GeoState y{x0, v0, {}};
  for (int k = 1; k <= n; ++k) {
    if (!rk4_step<false>(spec, y, h)) {
      c.complete = false;
      c.stop_reason = "LeftDomain at s=" + num(c.s.back());
      make_increasing(c);
      return c;
    }
    c.s.push_back(k == n ? s_end : k * h);
    c.x.push_back(y.x);
    c.v.push_back(y.v);
  }
  make_increasing(c);
  return c;
}

double geodesic_residual(const MetricSpec& spec, const Curve& c) {
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    const double h = c.s[i + 1] - c.s[i];
    GeoState y{c.x[i], c.v[i], {}};
    if (!rk4_step<false>(spec, y, h)) return INFINITY;
    const double dev = std::fmax(max_abs(y.x - c.x[i + 1]), max_abs(y.v - c.v[i + 1]) * std::fabs(h));
    worst = std::fmax(worst, dev / (h * h));
  }
  return worst;
}

GeodesicEnd shoot(const MetricSpec& spec, const Vec4& x0, const Vec4& v0, double s, int n_steps, bool with_propagator) {
  if (!spec.contains(x0)) fail(ErrorCode::OutOfDomain, "geodesic start point outside the domain");
  GeoState y{x0, v0, identity4()};
  const int n = std::max(1, n_steps);
  const double h = s / n;
  for (int k = 0; k < n; ++k) {
    const bool ok = with_propagator ? rk4_step<true>(spec, y, h) : rk4_step<false>(spec, y, h);
    if (!ok) fail(ErrorCode::LeftDomain, "geodesic left the domain at s=" + num(k * h));
  }
  return {y.x, y.v, with_propagator ? y.P : identity4()};
}

Propagator propagate(const MetricSpec& spec, const Curve& geodesic, double s0, double s1, double h) {
  Propagator p;
  p.p = geodesic.point_at(s0);
  const Vec4 v = geodesic.tangent_at(s0);
  if (s1 == s0) {
    p.q = p.p;
    p.Pi = identity4();
    return p;
  }
  const int n = steps_for(s1 - s0, h);
  const GeodesicEnd end = shoot(spec, p.p, v, s1 - s0, n, true);
  p.q = end.x;
  p.Pi = end.Pi;
  return p;
}

// ---------------------------------------------------------------- worldline frames

FrameSample WorldlineFrame::sample(std::size_t i) const {
  FrameSample s;
  s.x = C.x[i];
  s.xdot = C.v[i];
  s.N = N[i];
  s.e = e[i];
  s.theta = theta[i];
  return s;
}

std::size_t WorldlineFrame::nearest(double sig) const {
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t i = 0; i < C.size(); ++i) {
    const double d = std::fabs(C.s[i] - sig);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

FrameSample WorldlineFrame::at(double sig) const {
  if (C.size() == 1) return sample(0);
  if (!in_range(C.s, sig)) fail(ErrorCode::OutsideTube, "sigma " + num(sig) + " outside the worldline range");
  const std::size_t i = bracket(C.s, sig);
  if (sig == C.s[i]) return sample(i);
  if (sig == C.s[i + 1]) return sample(i + 1);
  const Hermite H(C.s[i], C.s[i + 1], sig);
  FrameSample out;
  out.x = H.value(C.x[i], C.v[i], C.x[i + 1], C.v[i + 1]);
  out.xdot = H.slope(C.x[i], C.v[i], C.x[i + 1], C.v[i + 1]);
  const Mat4 g = metric(spec, out.x);
  // slopes of the transported quantities
  auto slopes = [&](std::size_t k, std::array<Vec4, 4>& de, Vec4& dN) {
    if (parallel_frame) {
      Tensor3 G;
      christoffel(spec, C.x[k], G);
      for (int a = 1; a < 4; ++a) {
        const Vec4 t = contract_gamma(G, C.v[k], e[k][a]);
        de[a] = {-t[0], -t[1], -t[2], -t[3]};
      }
      dN = contract_gamma_covector(G, C.v[k], N[k]);
    } else {
      const std::size_t lo = (k == 0) ? 0 : k - 1, hi = std::min(k + 1, C.size() - 1);
      const double ds = C.s[hi] - C.s[lo];
      for (int a = 1; a < 4; ++a) de[a] = (1.0 / ds) * (e[hi][a] - e[lo][a]);
      dN = (1.0 / ds) * (N[hi] - N[lo]);
    }
  };
  std::array<Vec4, 4> de0{}, de1{};
  Vec4 dN0{}, dN1{};
  slopes(i, de0, dN0);
  slopes(i + 1, de1, dN1);
  out.N = (choice == DixonChoice::Tangent) ? tangent_dixon_vector(g, out.xdot) : H.value(N[i], dN0, N[i + 1], dN1);
  out.e[0] = out.xdot;
  for (int a = 1; a < 4; ++a) out.e[a] = project_out(H.value(e[i][a], de0[a], e[i + 1][a], de1[a]), out.N, out.xdot);
  out.theta = dual_basis(out.e);
  return out;
}

WorldlineFrame build_worldline(const MetricSpec& spec, const Curve& C, DixonChoice choice, const CovectorFn& custom,
                               const WorldlineOptions& opt) {
  C.validate();
  if (choice == DixonChoice::Custom && !custom) fail(ErrorCode::InvalidArgument, "custom Dixon vector needs a covector function");
  WorldlineFrame f;
  f.spec = spec;
  f.C = C;
  f.choice = choice;
  const std::size_t n = C.size();
  f.N.resize(n);
  f.e.resize(n);
  f.theta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!spec.contains(C.x[i])) fail(ErrorCode::OutOfDomain, "worldline sample outside the domain");
    const Mat4 g = metric(spec, C.x[i]);
    if (choice == DixonChoice::Tangent) {
      f.N[i] = tangent_dixon_vector(g, C.v[i]);
    } else {
      f.N[i] = custom(C.s[i], C.x[i], C.v[i]);
      if (std::fabs(dot(f.N[i], C.v[i]) - 1.0) > opt.tol_frame)
        fail(ErrorCode::InvalidArgument, "custom Dixon vector violates N.xdot = 1 at sigma=" + num(C.s[i]));
    }
  }
  // transport the triad and a copy of N(0) along C, re-projecting into N-perp
  const Mat4 g0 = metric(spec, C.x[0]);
  const auto triad = initial_triad(g0, f.N[0], C.v[0]);
  std::array<Vec4, 3> cur = triad;
  Vec4 Ncur = f.N[0];
  double n_dev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      const double s0 = C.s[i - 1], s1 = C.s[i], h = s1 - s0;
      auto rhs = [&](double s, const std::array<Vec4, 3>& y, const Vec4& om, std::array<Vec4, 3>& dy, Vec4& dom) {
        const Vec4 x = C.point_at(s), u = C.tangent_at(s);
        Tensor3 G;
        christoffel(spec, x, G);
        for (int a = 0; a < 3; ++a) {
          const Vec4 t = contract_gamma(G, u, y[a]);
          dy[a] = {-t[0], -t[1], -t[2], -t[3]};
        }
        dom = contract_gamma_covector(G, u, om);
      };
      std::array<Vec4, 3> k1, k2, k3, k4, tmp;
      Vec4 m1, m2, m3, m4;
      rhs(s0, cur, Ncur, k1, m1);
      for (int a = 0; a < 3; ++a) tmp[a] = axpy(0.5 * h, k1[a], cur[a]);
      rhs(s0 + 0.5 * h, tmp, axpy(0.5 * h, m1, Ncur), k2, m2);
      for (int a = 0; a < 3; ++a) tmp[a] = axpy(0.5 * h, k2[a], cur[a]);
      rhs(s0 + 0.5 * h, tmp, axpy(0.5 * h, m2, Ncur), k3, m3);
      for (int a = 0; a < 3; ++a) tmp[a] = axpy(h, k3[a], cur[a]);
      rhs(s1, tmp, axpy(h, m3, Ncur), k4, m4);
      for (int a = 0; a < 3; ++a)
        for (int m = 0; m < 4; ++m) cur[a][m] += h / 6.0 * (k1[a][m] + 2 * k2[a][m] + 2 * k3[a][m] + k4[a][m]);
      for (int m = 0; m < 4; ++m) Ncur[m] += h / 6.0 * (m1[m] + 2 * m2[m] + 2 * m3[m] + m4[m]);
      for (int a = 0; a < 3; ++a) cur[a] = project_out(cur[a], f.N[i], C.v[i]);
    }
    n_dev = std::fmax(n_dev, max_abs(Ncur - f.N[i]));
    f.e[i][0] = C.v[i];
    for (int a = 0; a < 3; ++a) f.e[i][a + 1] = cur[a];
    f.theta[i] = dual_basis(f.e[i]);
    if (frame_condition(f.e[i], f.theta[i]) > 1e8) fail(ErrorCode::DegenerateFrame, "frame matrix is ill-conditioned");
  }
  f.geodesic = geodesic_residual(spec, C) <= opt.tol_geodesic;
  f.parallel_frame = f.geodesic && n_dev <= 1e-8 * std::max(1.0, max_abs(f.N[0]));
  return f;
}

WorldlineFrame geodesic_worldline(const MetricSpec& spec, const Vec4& x0, const Vec4& u0, double sigma_begin,
                                  double sigma_end, double h, DixonChoice choice, const std::optional<Vec4>& custom_N0) {
  if (!spec.contains(x0)) fail(ErrorCode::OutOfDomain, "worldline start point outside the domain");
  if (!(sigma_end > sigma_begin)) fail(ErrorCode::InvalidArgument, "worldline span must be positive");
  const Mat4 g0 = metric(spec, x0);
  Vec4 N0;
  if (choice == DixonChoice::Tangent) {
    N0 = tangent_dixon_vector(g0, u0);
  } else {
    if (!custom_N0) fail(ErrorCode::InvalidArgument, "custom Dixon vector needs an initial covector");
    N0 = *custom_N0;
    if (std::fabs(dot(N0, u0) - 1.0) > 1e-10) fail(ErrorCode::InvalidArgument, "custom Dixon vector violates N.xdot = 1");
  }
  const auto triad = initial_triad(g0, N0, u0);
  // state: x, v, e1, e2, e3, N
  using S = std::array<Vec4, 6>;
  auto rhs = [&spec](const S& y) {
    Tensor3 G;
    christoffel(spec, y[0], G);
    S d;
    d[0] = y[1];
    for (int k = 1; k < 5; ++k) {
      const Vec4 t = contract_gamma(G, y[1], y[k]);
      d[k] = {-t[0], -t[1], -t[2], -t[3]};
    }
    d[5] = contract_gamma_covector(G, y[1], y[5]);
    return d;
  };
  auto add = [](const S& y, double a, const S& d) {
    S r;
    for (int k = 0; k < 6; ++k) r[k] = axpy(a, d[k], y[k]);
    return r;
  };
  const int n = steps_for(sigma_end - sigma_begin, h);
  const double hh = (sigma_end - sigma_begin) / n;
  S y{x0, u0, triad[0], triad[1], triad[2], N0};
  WorldlineFrame f;
  f.spec = spec;
  f.choice = choice;
  f.geodesic = true;
  f.parallel_frame = true;
  auto record = [&](double s) {
    f.C.s.push_back(s);
    f.C.x.push_back(y[0]);
    f.C.v.push_back(y[1]);
    const Vec4 N = (choice == DixonChoice::Tangent) ? tangent_dixon_vector(metric(spec, y[0]), y[1]) : y[5];
    f.N.push_back(N);
    std::array<Vec4, 4> e{y[1], project_out(y[2], N, y[1]), project_out(y[3], N, y[1]), project_out(y[4], N, y[1])};
    f.e.push_back(e);
    f.theta.push_back(dual_basis(e));
  };
  record(sigma_begin);
  for (int k = 1; k <= n; ++k) {
    const S k1 = rhs(y);
    const S y2 = add(y, 0.5 * hh, k1);
    const S k2 = rhs(y2);
    const S y3 = add(y, 0.5 * hh, k2);
    const S k3 = rhs(y3);
    const S y4 = add(y, hh, k3);
    const S k4 = rhs(y4);
    if (!spec.contains(y2[0]) || !spec.contains(y4[0])) fail(ErrorCode::LeftDomain, "worldline left the domain");
    for (int q = 0; q < 6; ++q)
      for (int m = 0; m < 4; ++m) y[q][m] += hh / 6.0 * (k1[q][m] + 2 * k2[q][m] + 2 * k3[q][m] + k4[q][m]);
    if (!spec.contains(y[0])) fail(ErrorCode::LeftDomain, "worldline left the domain");
    record(k == n ? sigma_end : sigma_begin + k * hh);
  }
  return f;
}

// ---------------------------------------------------------------- tube maps

Vec4 exp_map(const WorldlineFrame& f, double sigma, const Vec4& V, const TubeOptions& opt) {
  const FrameSample s = f.at(sigma);
  const double vn = max_abs(V);
  if (std::fabs(dot(s.N, V)) > opt.tol_orthogonal * std::max(1.0, vn))
    fail(ErrorCode::NotOrthogonal, "exp_map tangent is not orthogonal to N (N.V = " + num(dot(s.N, V)) + ")");
  double z2 = 0.0;
  for (int a = 1; a < 4; ++a) z2 += dot(s.theta[a], V) * dot(s.theta[a], V);
  if (std::sqrt(z2) > opt.tube_radius) fail(ErrorCode::OutsideTube, "exp_map tangent exceeds the tube radius");
  if (vn == 0.0) return s.x;
  return shoot(f.spec, s.x, V, 1.0, opt.exp_steps, false).x;
}

namespace {

Vec4 exp_adapted(const WorldlineFrame& f, const std::array<double, 4>& q, const TubeOptions& opt) {
  const FrameSample s = f.at(q[0]);
  Vec4 V{};
  for (int a = 1; a < 4; ++a) V = axpy(q[a], s.e[a], V);
  if (max_abs(V) == 0.0) return s.x;
  return shoot(f.spec, s.x, V, 1.0, opt.exp_steps, false).x;
}

bool newton_solve(const WorldlineFrame& f, const Vec4& x, std::array<double, 4> q, const TubeOptions& opt,
                  AdaptedPoint& out) {
  const double lo = std::min(f.C.s.front(), f.C.s.back()), hi = std::max(f.C.s.front(), f.C.s.back());
  auto residual = [&](const std::array<double, 4>& qq, Vec4& F) -> bool {
    if (qq[0] < lo || qq[0] > hi) return false;
    try {
      F = exp_adapted(f, qq, opt) - x;
    } catch (const Error&) {
      return false;
    }
    return true;
  };
  Vec4 F;
  if (!residual(q, F)) return false;
  double fn = max_abs(F);
  const double scale = std::max(1.0, max_abs(x));
  for (int it = 0; it < opt.newton_max_iter; ++it) {
    if (fn <= opt.newton_tol * scale) {
      out.sigma = q[0];
      out.z = {q[1], q[2], q[3]};
      out.iterations = it;
      out.residual = fn;
      return true;
    }
    Mat4 Jm{};
    for (int k = 0; k < 4; ++k) {
      const double dq = 1e-6 * std::max(1.0, std::fabs(q[k]));
      auto qp = q, qm = q;
      qp[k] += dq;
      qm[k] -= dq;
      Vec4 Fp, Fm;
      if (!residual(qp, Fp) || !residual(qm, Fm)) {
        qp = q;
        qp[k] += dq;
        if (!residual(qp, Fp)) {
          qp[k] = q[k] - dq;
          if (!residual(qp, Fp)) return false;
          for (int m = 0; m < 4; ++m) Jm[m][k] = (F[m] - Fp[m]) / dq;
          continue;
        }
        for (int m = 0; m < 4; ++m) Jm[m][k] = (Fp[m] - F[m]) / dq;
        continue;
      }
      for (int m = 0; m < 4; ++m) Jm[m][k] = (Fp[m] - Fm[m]) / (2 * dq);
    }
    Mat4 Ji;
    if (!invert4(Jm, Ji)) return false;
    const Vec4 step = matvec(Ji, F);
    double lam = 1.0;
    bool accepted = false;
    for (int d = 0; d < 30; ++d) {
      std::array<double, 4> qn;
      for (int k = 0; k < 4; ++k) qn[k] = q[k] - lam * step[k];
      Vec4 Fn;
      if (residual(qn, Fn) && max_abs(Fn) < fn) {
        q = qn;
        F = Fn;
        fn = max_abs(Fn);
        accepted = true;
        break;
      }
      lam *= 0.5;
    }
    if (!accepted) {
      if (fn <= 10 * opt.newton_tol * scale) {
        out.sigma = q[0];
        out.z = {q[1], q[2], q[3]};
        out.iterations = it;
        out.residual = fn;
        return true;
      }
      return false;
    }
  }
  if (fn <= opt.newton_tol * scale) {
    out.sigma = q[0];
    out.z = {q[1], q[2], q[3]};
    out.iterations = opt.newton_max_iter;
    out.residual = fn;
    return true;
  }
  return false;
}

}  // namespace

AdaptedPoint adapted_coords(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt) {
  if (!f.spec.contains(x)) fail(ErrorCode::OutOfDomain, "point outside the chart domain");
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = max_abs(x - f.C.x[i]);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  const FrameSample s = f.sample(best);
  const Vec4 d = x - s.x;
  std::array<double, 4> q{f.sigma(best) + dot(s.N, d), dot(s.theta[1], d), dot(s.theta[2], d), dot(s.theta[3], d)};
  const double lo = std::min(f.C.s.front(), f.C.s.back()), hi = std::max(f.C.s.front(), f.C.s.back());
  q[0] = std::clamp(q[0], lo, hi);
  AdaptedPoint out;
  if (!newton_solve(f, x, q, opt, out)) fail(ErrorCode::OutsideTube, "Newton inversion of the exponential map did not converge");
  if (opt.fold_check) {
    AdaptedPoint alt;
    std::array<double, 4> q2{f.sigma(best), 0.0, 0.0, 0.0};
    if (newton_solve(f, x, q2, opt, alt)) {
      const double dz = std::fmax(std::fabs(alt.sigma - out.sigma),
                                  std::fmax(std::fabs(alt.z[0] - out.z[0]), std::fmax(std::fabs(alt.z[1] - out.z[1]), std::fabs(alt.z[2] - out.z[2]))));
      if (dz > 1e-6) fail(ErrorCode::AmbiguousFold, "two seeds reach distinct adapted coordinates");
    }
  }
  const double zr = std::sqrt(out.z[0] * out.z[0] + out.z[1] * out.z[1] + out.z[2] * out.z[2]);
  if (zr > opt.tube_radius) fail(ErrorCode::OutsideTube, "point lies outside the configured tube radius");
  return out;
}

Vec4 radial_vector(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt) {
  const AdaptedPoint a = adapted_coords(f, x, opt);
  const FrameSample s = f.at(a.sigma);
  Vec4 V{};
  for (int k = 0; k < 3; ++k) V = axpy(a.z[k], s.e[k + 1], V);
  if (max_abs(V) == 0.0) return Vec4{};
  return shoot(f.spec, s.x, V, 1.0, opt.exp_steps, false).v;
}

Mat4 pibar_field(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt) {
  const AdaptedPoint a = adapted_coords(f, x, opt);
  const FrameSample s = f.at(a.sigma);
  Vec4 V{};
  for (int k = 0; k < 3; ++k) V = axpy(a.z[k], s.e[k + 1], V);
  if (max_abs(V) == 0.0) return identity4();
  const GeodesicEnd end = shoot(f.spec, s.x, V, 1.0, opt.exp_steps, true);
  Mat4 inv;
  if (!invert4(end.Pi, inv)) fail(ErrorCode::DegenerateFrame, "singular propagator");
  return inv;
}

}  // namespace dixon
