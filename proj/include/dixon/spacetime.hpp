#pragma once

#include <array>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "dixon/errors.hpp"
#include "dixon/taylor.hpp"
#include "dixon/tensor.hpp"

namespace dixon {

enum class Family { Minkowski, Schwarzschild, DeSitter };

const char* family_name(Family f);
Family family_from_string(const std::string& s);

// An analytic spacetime together with the open chart domain on which it is
// evaluated.  Minkowski uses Cartesian (t, x, y, z); Schwarzschild and de
// Sitter use static spherical charts (t, r, theta, phi).
struct MetricSpec {
  Family family = Family::Minkowski;
  double mass = 0.0;    // M >= 0, geometric units
  double hubble = 0.0;  // H >= 0
  double horizon_margin = 0.1;
  double pole_margin = 1e-3;  // keeps theta away from the coordinate poles
  std::array<std::pair<double, double>, 4> domain{};

  static MetricSpec minkowski();
  static MetricSpec schwarzschild(double mass, double horizon_margin = 0.1);
  static MetricSpec de_sitter(double hubble, double horizon_margin = 0.1);

  bool contains(const Vec4& x) const;
  void validate() const;
  bool diagonal() const { return true; }
};

// Metric components of each family, written once for every scalar type so
// the same expressions give values (double) and exact derivatives (Taylor).
template <class T>
void metric_components(const MetricSpec& s, const std::array<T, 4>& x, std::array<std::array<T, 4>, 4>& g) {
  for (auto& row : g)
    for (auto& e : row) e = T(0.0);
  switch (s.family) {
    case Family::Minkowski:
      g[0][0] = T(-1.0);
      g[1][1] = T(1.0);
      g[2][2] = T(1.0);
      g[3][3] = T(1.0);
      return;
    case Family::Schwarzschild:
    case Family::DeSitter: {
      using std::sin;
      using ad::sin;
      const T& r = x[1];
      T f = (s.family == Family::Schwarzschild) ? T(1.0) - (2.0 * s.mass) / r
                                                : T(1.0) - (s.hubble * s.hubble) * (r * r);
      const T r2 = r * r;
      const T st = sin(x[2]);
      g[0][0] = -f;
      g[1][1] = 1.0 / f;
      g[2][2] = r2;
      g[3][3] = r2 * (st * st);
      return;
    }
  }
}

enum class JetDepth { Metric = 0, Christoffel = 1, Riemann = 2, NablaRiemann = 3 };

// Pointwise differential-geometric data.  Index conventions:
//   gamma[m][n][r]            = Gamma^m_{n r}
//   riemann[a][b][c][d]       = R^a_{b c d}, with
//        R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb}
//   nabla_riemann[e][a][b][c][d] = nabla_e R^a_{bcd}
// With this convention [nabla_c, nabla_d] V^a = R^a_{bcd} V^b.
struct GeometryJet {
  Vec4 point{};
  JetDepth depth = JetDepth::Metric;
  Mat4 g{}, g_inv{};
  double omega = 0.0;
  Tensor3 gamma{};
  Tensor4 riemann{};
  Tensor5 nabla_riemann{};
  bool nabla_riemann_from_fd = false;
};

struct JetOptions {
  double h_geom = 1e-4;
  bool fd_nabla_riemann = false;  // use central differences of the closed-form Riemann tensor
};

GeometryJet geometry_jet(const MetricSpec& spec, const Vec4& x, JetDepth depth, const JetOptions& opt = {});

// Christoffel symbols only: the hot path of every ODE right-hand side.
void christoffel(const MetricSpec& spec, const Vec4& x, Tensor3& gamma);
Mat4 metric(const MetricSpec& spec, const Vec4& x);

struct FdReport {
  double gamma_residual = 0.0;          // closed-form Gamma vs central differences of g
  double riemann_residual = 0.0;        // closed-form Riemann vs differences of closed-form Gamma
  double nabla_riemann_residual = 0.0;  // closed-form nabla R vs differences of closed-form R
  double max_residual() const;
};

FdReport fd_validate_jet(const MetricSpec& spec, const Vec4& x, double h_geom);

// Invariant audit of one jet; every entry is a max-abs residual.
struct JetAudit {
  double metric_inverse = 0.0;
  double gamma_symmetry = 0.0;
  double riemann_antisym_first = 0.0;
  double riemann_antisym_last = 0.0;
  double riemann_pair_symmetry = 0.0;
  double first_bianchi = 0.0;
  double second_bianchi = 0.0;
  double metric_compatibility = 0.0;
  double einstein = 0.0;  // Ricci - Lambda g
  double riemann_scale = 0.0;
  int negative_eigenvalues = 0;
  double worst_algebraic() const;  // every identity except the second Bianchi one
};

JetAudit audit_jet(const MetricSpec& spec, const GeometryJet& jet);

// Scalar curvature invariant R_{abcd} R^{abcd}.
double kretschmann(const GeometryJet& jet);

// Taylor expansion of the Christoffel symbols about x0, valid to degree D-1.
template <int D>
void christoffel_taylor(const MetricSpec& spec, const Vec4& x0, std::array<std::array<std::array<ad::Taylor<D>, 4>, 4>, 4>& G);

// Random admissible chart point drawn from a bounded sampling box inside the domain.
Vec4 sample_point(const MetricSpec& spec, double u0, double u1, double u2, double u3);

}  // namespace dixon
