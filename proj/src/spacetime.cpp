#include "dixon/spacetime.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace dixon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using ad::Taylor;

template <int D>
using TMat = std::array<std::array<Taylor<D>, 4>, 4>;
template <int D>
using TGamma = std::array<std::array<std::array<Taylor<D>, 4>, 4>, 4>;
template <int D>
using TRiemann = std::array<TGamma<D>, 4>;

std::string point_str(const Vec4& x) {
  std::ostringstream os;
  os.precision(17);
  os << "(" << x[0] << ", " << x[1] << ", " << x[2] << ", " << x[3] << ")";
  return os.str();
}

// f(r) and f'(r) of the static spherical families.
void lapse(const MetricSpec& s, double r, double& f, double& fp) {
  if (s.family == Family::Schwarzschild) {
    f = 1.0 - 2.0 * s.mass / r;
    fp = 2.0 * s.mass / (r * r);
  } else {
    const double h2 = s.hubble * s.hubble;
    f = 1.0 - h2 * r * r;
    fp = -2.0 * h2 * r;
  }
}

// R^a_{bcd} as Taylor numbers valid to degree D-2 from Christoffels valid to D-1.
template <int D>
void riemann_taylor(const TGamma<D>& G, TRiemann<D>& R) {
  std::array<TGamma<D>, 4> dG;  // dG[c][a][d][b] = d_c Gamma^a_{db}
  for (int c = 0; c < 4; ++c)
    for (int a = 0; a < 4; ++a)
      for (int d = 0; d < 4; ++d)
        for (int b = 0; b < 4; ++b) dG[c][a][d][b] = G[a][d][b].is_zero() ? Taylor<D>() : G[a][d][b].derivative(c);
  std::array<std::array<std::array<bool, 4>, 4>, 4> nz{};
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c) nz[a][b][c] = !G[a][b][c].is_zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          Taylor<D> r = dG[c][a][d][b] - dG[d][a][c][b];
          for (int e = 0; e < 4; ++e) {
            if (nz[a][c][e] && nz[e][d][b]) r.fma(G[a][c][e], G[e][d][b]);
            if (nz[a][d][e] && nz[e][c][b]) r.fma(-1.0, G[a][d][e], G[e][c][b]);
          }
          R[a][b][c][d] = r;
        }
}

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::Minkowski: return "minkowski";
    case Family::Schwarzschild: return "schwarzschild";
    case Family::DeSitter: return "de-sitter";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "minkowski" || s == "Minkowski-Cartesian") return Family::Minkowski;
  if (s == "schwarzschild" || s == "Schwarzschild-SchwarzschildCoords") return Family::Schwarzschild;
  if (s == "de-sitter" || s == "desitter" || s == "deSitter-static") return Family::DeSitter;
  fail(ErrorCode::InvalidArgument, "unknown metric family '" + s + "'");
}

MetricSpec MetricSpec::minkowski() {
  MetricSpec s;
  s.family = Family::Minkowski;
  for (auto& d : s.domain) d = {-kInf, kInf};
  return s;
}

MetricSpec MetricSpec::schwarzschild(double mass, double horizon_margin) {
  MetricSpec s;
  s.family = Family::Schwarzschild;
  s.mass = mass;
  s.horizon_margin = horizon_margin;
  s.domain[0] = {-kInf, kInf};
  s.domain[1] = {2.0 * mass + horizon_margin, kInf};
  s.domain[2] = {s.pole_margin, M_PI - s.pole_margin};
  s.domain[3] = {-kInf, kInf};
  s.validate();
  return s;
}

MetricSpec MetricSpec::de_sitter(double hubble, double horizon_margin) {
  MetricSpec s;
  s.family = Family::DeSitter;
  s.hubble = hubble;
  s.horizon_margin = horizon_margin;
  s.domain[0] = {-kInf, kInf};
  s.domain[1] = {0.0, hubble > 0.0 ? 1.0 / hubble - horizon_margin : kInf};
  s.domain[2] = {s.pole_margin, M_PI - s.pole_margin};
  s.domain[3] = {-kInf, kInf};
  s.validate();
  return s;
}

void MetricSpec::validate() const {
  if (mass < 0.0) fail(ErrorCode::InvalidArgument, "mass must be non-negative");
  if (hubble < 0.0) fail(ErrorCode::InvalidArgument, "Hubble rate must be non-negative");
  if (family != Family::Minkowski && !(horizon_margin > 0.0))
    fail(ErrorCode::InvalidArgument, "horizon margin must be positive");
  if (family == Family::DeSitter && hubble > 0.0 && domain[1].second <= domain[1].first)
    fail(ErrorCode::InvalidArgument, "horizon margin leaves an empty de Sitter domain");
}

bool MetricSpec::contains(const Vec4& x) const {
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(x[i])) return false;
    if (!(x[i] > domain[i].first && x[i] < domain[i].second)) return false;
  }
  return true;
}

Mat4 metric(const MetricSpec& spec, const Vec4& x) {
  std::array<std::array<double, 4>, 4> g;
  metric_components<double>(spec, x, g);
  return g;
}

void christoffel(const MetricSpec& spec, const Vec4& x, Tensor3& G) {
  for (auto& a : G)
    for (auto& b : a) b = {0.0, 0.0, 0.0, 0.0};
  if (spec.family == Family::Minkowski) return;
  const double r = x[1], th = x[2];
  double f, fp;
  lapse(spec, r, f, fp);
  const double s = std::sin(th), c = std::cos(th);
  G[0][0][1] = G[0][1][0] = fp / (2.0 * f);
  G[1][0][0] = 0.5 * f * fp;
  G[1][1][1] = -fp / (2.0 * f);
  G[1][2][2] = -r * f;
  G[1][3][3] = -r * f * s * s;
  G[2][1][2] = G[2][2][1] = 1.0 / r;
  G[2][3][3] = -s * c;
  G[3][1][3] = G[3][3][1] = 1.0 / r;
  G[3][2][3] = G[3][3][2] = c / s;
}

template <int D>
void christoffel_taylor(const MetricSpec& spec, const Vec4& x0, TGamma<D>& G) {
  std::array<Taylor<D>, 4> X;
  for (int v = 0; v < 4; ++v) X[v] = Taylor<D>::variable(v, x0[v]);
  TMat<D> g;
  metric_components<Taylor<D>>(spec, X, g);
  std::array<Taylor<D>, 4> ginv;  // diagonal families
  for (int i = 0; i < 4; ++i) ginv[i] = ad::inv(g[i][i]);
  // d_l g_{mm}
  std::array<std::array<Taylor<D>, 4>, 4> dg;
  for (int l = 0; l < 4; ++l)
    for (int m = 0; m < 4; ++m) dg[l][m] = g[m][m].derivative(l);
  for (int s = 0; s < 4; ++s)
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        Taylor<D> acc;
        if (s == n) acc += dg[m][s];
        if (s == m) acc += dg[n][s];
        if (m == n) acc -= dg[s][m];
        G[s][m][n] = acc.is_zero() ? Taylor<D>() : 0.5 * (ginv[s] * acc);
      }
}

template void christoffel_taylor<1>(const MetricSpec&, const Vec4&, TGamma<1>&);
template void christoffel_taylor<2>(const MetricSpec&, const Vec4&, TGamma<2>&);
template void christoffel_taylor<3>(const MetricSpec&, const Vec4&, TGamma<3>&);
template void christoffel_taylor<4>(const MetricSpec&, const Vec4&, TGamma<4>&);

namespace {

void riemann_values(const MetricSpec& spec, const Vec4& x, Tensor4& R) {
  TGamma<2> G;
  christoffel_taylor<2>(spec, x, G);
  TRiemann<2> RT;
  riemann_taylor<2>(G, RT);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) R[a][b][c][d] = RT[a][b][c][d].c[0];
}

void covariant_riemann_derivative(const Tensor3& G, const Tensor4& R, const Tensor5& dR, Tensor5& out) {
  for (int e = 0; e < 4; ++e)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          for (int d = 0; d < 4; ++d) {
            double v = dR[e][a][b][c][d];
            for (int f = 0; f < 4; ++f) {
              v += G[a][e][f] * R[f][b][c][d];
              v -= G[f][e][b] * R[a][f][c][d];
              v -= G[f][e][c] * R[a][b][f][d];
              v -= G[f][e][d] * R[a][b][c][f];
            }
            out[e][a][b][c][d] = v;
          }
}

}  // namespace

GeometryJet geometry_jet(const MetricSpec& spec, const Vec4& x, JetDepth depth, const JetOptions& opt) {
  if (!spec.contains(x)) fail(ErrorCode::OutOfDomain, "point " + point_str(x) + " is outside the chart domain");
  GeometryJet j;
  j.point = x;
  j.depth = depth;
  j.g = metric(spec, x);
  j.g_inv = Mat4{};
  for (int i = 0; i < 4; ++i) j.g_inv[i][i] = 1.0 / j.g[i][i];
  j.omega = std::sqrt(-(j.g[0][0] * j.g[1][1] * j.g[2][2] * j.g[3][3]));
  if (depth == JetDepth::Metric) return j;
  christoffel(spec, x, j.gamma);
  if (depth == JetDepth::Christoffel) return j;
  if (depth == JetDepth::Riemann || opt.fd_nabla_riemann) riemann_values(spec, x, j.riemann);
  if (depth == JetDepth::Riemann) return j;

  Tensor5 dR{};
  if (opt.fd_nabla_riemann) {
    const double h = opt.h_geom;
    for (int e = 0; e < 4; ++e) {
      Vec4 xp = x, xm = x;
      xp[e] += h;
      xm[e] -= h;
      if (!spec.contains(xp) || !spec.contains(xm))
        fail(ErrorCode::DepthUnavailable, "finite-difference stencil leaves the domain at " + point_str(x));
      Tensor4 Rp, Rm;
      riemann_values(spec, xp, Rp);
      riemann_values(spec, xm, Rm);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          for (int c = 0; c < 4; ++c)
            for (int d = 0; d < 4; ++d) dR[e][a][b][c][d] = (Rp[a][b][c][d] - Rm[a][b][c][d]) / (2.0 * h);
    }
    j.nabla_riemann_from_fd = true;
  } else {
    TGamma<3> G;
    christoffel_taylor<3>(spec, x, G);
    TRiemann<3> RT;
    riemann_taylor<3>(G, RT);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          for (int d = 0; d < 4; ++d) {
            j.riemann[a][b][c][d] = RT[a][b][c][d].c[0];
            for (int e = 0; e < 4; ++e) dR[e][a][b][c][d] = RT[a][b][c][d].c[1 + e];
          }
  }
  covariant_riemann_derivative(j.gamma, j.riemann, dR, j.nabla_riemann);
  return j;
}

double FdReport::max_residual() const {
  return std::max({gamma_residual, riemann_residual, nabla_riemann_residual});
}

FdReport fd_validate_jet(const MetricSpec& spec, const Vec4& x, double h) {
  if (!(h > 0.0)) fail(ErrorCode::InvalidArgument, "h_geom must be positive");
  const GeometryJet jet = geometry_jet(spec, x, JetDepth::NablaRiemann);
  std::array<Vec4, 4> xp, xm;
  for (int e = 0; e < 4; ++e) {
    xp[e] = x;
    xm[e] = x;
    xp[e][e] += h;
    xm[e][e] -= h;
    if (!spec.contains(xp[e]) || !spec.contains(xm[e]))
      fail(ErrorCode::DepthUnavailable, "finite-difference stencil leaves the domain at " + point_str(x));
  }
  FdReport rep;
  // Gamma from differences of the metric
  Tensor3 dg{};  // dg[l][m][n] = d_l g_{mn}
  for (int l = 0; l < 4; ++l) {
    const Mat4 gp = metric(spec, xp[l]), gm = metric(spec, xm[l]);
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) dg[l][m][n] = (gp[m][n] - gm[m][n]) / (2.0 * h);
  }
  for (int s = 0; s < 4; ++s)
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        double v = 0.0;
        for (int l = 0; l < 4; ++l) v += 0.5 * jet.g_inv[s][l] * (dg[m][l][n] + dg[n][l][m] - dg[l][m][n]);
        rep.gamma_residual = std::fmax(rep.gamma_residual, std::fabs(v - jet.gamma[s][m][n]));
      }
  // Riemann from differences of the closed-form Christoffels
  std::array<Tensor3, 4> dG{};
  for (int c = 0; c < 4; ++c) {
    Tensor3 Gp, Gm;
    christoffel(spec, xp[c], Gp);
    christoffel(spec, xm[c], Gm);
    for (int a = 0; a < 4; ++a)
      for (int d = 0; d < 4; ++d)
        for (int b = 0; b < 4; ++b) dG[c][a][d][b] = (Gp[a][d][b] - Gm[a][d][b]) / (2.0 * h);
  }
  const Tensor3& G = jet.gamma;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          double v = dG[c][a][d][b] - dG[d][a][c][b];
          for (int e = 0; e < 4; ++e) v += G[a][c][e] * G[e][d][b] - G[a][d][e] * G[e][c][b];
          rep.riemann_residual = std::fmax(rep.riemann_residual, std::fabs(v - jet.riemann[a][b][c][d]));
        }
  // nabla R from differences of the closed-form Riemann tensor
  JetOptions o;
  o.h_geom = h;
  o.fd_nabla_riemann = true;
  const GeometryJet fd = geometry_jet(spec, x, JetDepth::NablaRiemann, o);
  for (int e = 0; e < 4; ++e)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          for (int d = 0; d < 4; ++d)
            rep.nabla_riemann_residual = std::fmax(
                rep.nabla_riemann_residual, std::fabs(fd.nabla_riemann[e][a][b][c][d] - jet.nabla_riemann[e][a][b][c][d]));
  return rep;
}

double JetAudit::worst_algebraic() const {
  return std::max({metric_inverse, gamma_symmetry, riemann_antisym_first, riemann_antisym_last, riemann_pair_symmetry,
                   first_bianchi, metric_compatibility, einstein});
}

JetAudit audit_jet(const MetricSpec& spec, const GeometryJet& j) {
  JetAudit a;
  const Mat4 prod = matmul(j.g, j.g_inv);
  a.metric_inverse = max_abs_diff(prod, identity4());

  Eigen::Matrix4d gm;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) gm(i, k) = j.g[i][k];
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(gm);
  for (int i = 0; i < 4; ++i)
    if (es.eigenvalues()(i) < 0.0) ++a.negative_eigenvalues;

  if (j.depth == JetDepth::Metric) return a;
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n)
      for (int r = 0; r < 4; ++r)
        a.gamma_symmetry = std::fmax(a.gamma_symmetry, std::fabs(j.gamma[m][n][r] - j.gamma[m][r][n]));

  // metric compatibility from an exact first-order expansion of g
  {
    std::array<Taylor<1>, 4> X;
    for (int v = 0; v < 4; ++v) X[v] = Taylor<1>::variable(v, j.point[v]);
    TMat<1> g;
    metric_components<Taylor<1>>(spec, X, g);
    for (int l = 0; l < 4; ++l)
      for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) {
          double v = g[m][n].c[1 + l];
          for (int s = 0; s < 4; ++s) v -= j.gamma[s][l][m] * j.g[s][n] + j.gamma[s][l][n] * j.g[m][s];
          a.metric_compatibility = std::fmax(a.metric_compatibility, std::fabs(v));
        }
  }
  if (j.depth == JetDepth::Christoffel) return a;

  Tensor4 Rl{};  // R_{abcd}
  for (int p = 0; p < 4; ++p)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          double v = 0.0;
          for (int e = 0; e < 4; ++e) v += j.g[p][e] * j.riemann[e][b][c][d];
          Rl[p][b][c][d] = v;
          a.riemann_scale = std::fmax(a.riemann_scale, std::fabs(v));
        }
  for (int p = 0; p < 4; ++p)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          a.riemann_antisym_first = std::fmax(a.riemann_antisym_first, std::fabs(Rl[p][b][c][d] + Rl[b][p][c][d]));
          a.riemann_antisym_last = std::fmax(a.riemann_antisym_last, std::fabs(Rl[p][b][c][d] + Rl[p][b][d][c]));
          a.riemann_pair_symmetry = std::fmax(a.riemann_pair_symmetry, std::fabs(Rl[p][b][c][d] - Rl[c][d][p][b]));
          const double bianchi = j.riemann[p][b][c][d] + j.riemann[p][c][d][b] + j.riemann[p][d][b][c];
          a.first_bianchi = std::fmax(a.first_bianchi, std::fabs(bianchi));
        }
  const double lambda = (spec.family == Family::DeSitter) ? 3.0 * spec.hubble * spec.hubble : 0.0;
  for (int b = 0; b < 4; ++b)
    for (int d = 0; d < 4; ++d) {
      double ric = 0.0;
      for (int p = 0; p < 4; ++p) ric += j.riemann[p][b][p][d];
      a.einstein = std::fmax(a.einstein, std::fabs(ric - lambda * j.g[b][d]));
    }
  if (j.depth != JetDepth::NablaRiemann) return a;
  for (int e = 0; e < 4; ++e)
    for (int p = 0; p < 4; ++p)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          for (int d = 0; d < 4; ++d) {
            const double v = j.nabla_riemann[e][p][b][c][d] + j.nabla_riemann[c][p][b][d][e] + j.nabla_riemann[d][p][b][e][c];
            a.second_bianchi = std::fmax(a.second_bianchi, std::fabs(v));
          }
  return a;
}

double kretschmann(const GeometryJet& j) {
  // R_{abcd} R^{abcd} with diagonal or general metric
  Tensor4 lo{}, up{};
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          double v = 0.0;
          for (int e = 0; e < 4; ++e) v += j.g[a][e] * j.riemann[e][b][c][d];
          lo[a][b][c][d] = v;
        }
  // raise b, c, d on R^a_{bcd}
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          double v = 0.0;
          for (int p = 0; p < 4; ++p)
            for (int q = 0; q < 4; ++q) {
              if (j.g_inv[b][p] == 0.0 || j.g_inv[c][q] == 0.0) continue;
              for (int s = 0; s < 4; ++s) v += j.g_inv[b][p] * j.g_inv[c][q] * j.g_inv[d][s] * j.riemann[a][p][q][s];
            }
          up[a][b][c][d] = v;
        }
  double k = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) k += lo[a][b][c][d] * up[a][b][c][d];
  return k;
}

Vec4 sample_point(const MetricSpec& spec, double u0, double u1, double u2, double u3) {
  auto lerp = [](double a, double b, double u) { return a + (b - a) * u; };
  switch (spec.family) {
    case Family::Minkowski:
      return {lerp(-10, 10, u0), lerp(-10, 10, u1), lerp(-10, 10, u2), lerp(-10, 10, u3)};
    case Family::Schwarzschild: {
      const double m = spec.mass > 0.0 ? spec.mass : 1.0;
      const double rmin = std::max(2.5 * m, spec.domain[1].first + 0.1 * m);
      return {lerp(-10, 10, u0), lerp(rmin, 20.0 * m, u1), lerp(0.2, M_PI - 0.2, u2), lerp(0.0, 2.0 * M_PI, u3)};
    }
    case Family::DeSitter: {
      const double rmax = spec.hubble > 0.0 ? std::min(0.9 / spec.hubble, spec.domain[1].second - 1e-3) : 20.0;
      return {lerp(-10, 10, u0), lerp(0.05 * rmax, rmax, u1), lerp(0.2, M_PI - 0.2, u2), lerp(0.0, 2.0 * M_PI, u3)};
    }
  }
  return {};
}

}  // namespace dixon
