#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dixon/spacetime.hpp"

namespace dixon {

// A sampled curve with cubic Hermite interpolation between samples.
struct Curve {
  std::vector<double> s;
  std::vector<Vec4> x;
  std::vector<Vec4> v;
  bool complete = true;  // false when integration stopped at the domain boundary
  std::string stop_reason;

  std::size_t size() const { return s.size(); }
  double s_begin() const { return s.front(); }
  double s_end() const { return s.back(); }
  Vec4 point_at(double t) const;
  Vec4 tangent_at(double t) const;
  void validate() const;  // strictly increasing parameter
  void require_complete() const;
  void write_csv(std::ostream& os) const;
};

struct StepControl {
  enum class Method { RK4, RK45 };
  Method method = Method::RK4;
  double h = 1e-3;  // fixed step, or the initial step for RK45
  double rtol = 1e-11;
  double atol = 1e-13;
  double h_min = 1e-12;
};

// Integrates x'' = -Gamma(x', x') from (x0, v0) over s in [0, s_end] (s_end may be negative).
Curve integrate_geodesic(const MetricSpec& spec, const Vec4& x0, const Vec4& v0, double s_end,
                         const StepControl& ctl = {});

// Largest mismatch between consecutive samples and one RK4 geodesic step, divided by
// the squared step, so it measures an acceleration away from geodesic motion.
double geodesic_residual(const MetricSpec& spec, const Curve& c);

// Parallel propagator along a geodesic: Pi[mu][nu] maps vectors at p to vectors at q.
struct Propagator {
  Vec4 p{}, q{};
  Mat4 Pi{};
};

// Transport from s0 to s1 along the geodesic through the curve's data at s0.
Propagator propagate(const MetricSpec& spec, const Curve& geodesic, double s0, double s1, double h = 1e-3);

// Geodesic from x0 with tangent v0 up to parameter s (fixed RK4 with n steps),
// carrying the propagator from x0 along.
struct GeodesicEnd {
  Vec4 x{}, v{};
  Mat4 Pi{};
};
GeodesicEnd shoot(const MetricSpec& spec, const Vec4& x0, const Vec4& v0, double s, int n_steps, bool with_propagator);

enum class DixonChoice { Tangent, Custom };
using CovectorFn = std::function<Vec4(double sigma, const Vec4& x, const Vec4& xdot)>;

struct FrameSample {
  Vec4 x{}, xdot{}, N{};
  std::array<Vec4, 4> e{};      // e[0] = xdot, e[1..3] span N-perp
  std::array<Vec4, 4> theta{};  // dual basis; theta[0] = N
};

struct WorldlineFrame {
  MetricSpec spec;
  Curve C;
  DixonChoice choice = DixonChoice::Tangent;
  std::vector<Vec4> N;
  std::vector<std::array<Vec4, 4>> e;
  std::vector<std::array<Vec4, 4>> theta;
  bool geodesic = false;        // C satisfies the geodesic equation
  bool parallel_frame = false;  // e_a and N are parallel along C

  std::size_t size() const { return C.size(); }
  double sigma(std::size_t i) const { return C.s[i]; }
  FrameSample sample(std::size_t i) const;
  FrameSample at(double sigma) const;  // Hermite-interpolated between samples
  std::size_t nearest(double sigma) const;
};

struct WorldlineOptions {
  double tol_geodesic = 1e-8;
  double tol_frame = 1e-10;
};

WorldlineFrame build_worldline(const MetricSpec& spec, const Curve& C, DixonChoice choice,
                               const CovectorFn& custom = {}, const WorldlineOptions& opt = {});

// A geodesic worldline with its frame integrated in one RK4 sweep on a uniform grid.
WorldlineFrame geodesic_worldline(const MetricSpec& spec, const Vec4& x0, const Vec4& u0, double sigma_begin,
                                  double sigma_end, double h, DixonChoice choice = DixonChoice::Tangent,
                                  const std::optional<Vec4>& custom_N0 = std::nullopt);

struct TubeOptions {
  double tube_radius = 0.5;
  double tol_orthogonal = 1e-9;
  int exp_steps = 256;
  int newton_max_iter = 50;
  double newton_tol = 1e-10;
  bool fold_check = false;
};

Vec4 exp_map(const WorldlineFrame& f, double sigma, const Vec4& V, const TubeOptions& opt = {});

struct AdaptedPoint {
  double sigma = 0.0;
  std::array<double, 3> z{};
  int iterations = 0;
  double residual = 0.0;
};

AdaptedPoint adapted_coords(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt = {});

Vec4 radial_vector(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt = {});

// Pibar[nu][mu]: the propagator from x back to C(sigma(x)); nu lives at C, mu at x.
Mat4 pibar_field(const WorldlineFrame& f, const Vec4& x, const TubeOptions& opt = {});

}  // namespace dixon
