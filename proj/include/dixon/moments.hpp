#pragma once

#include <memory>
#include <vector>

#include "dixon/multipole.hpp"

namespace dixon {

// A tensor density of weight one supported near the worldline, described in
// Dixon adapted coordinates (sigma, z).  Its components are taken in the frame
// parallel transported radially out of C(sigma), so transporting it back to
// the worldline leaves the components unchanged.  The profile is an
// anisotropic Gaussian truncated on the box |z^a - c^a(sigma)| <= cutoff * w_a,
// scaled by 1/eps^3 and stretched by eps when squeezed.
struct BodyField {
  int rank = 2;
  std::vector<double> tensor;  // canonical components (see mu_tuple), n_mu(rank) entries
  std::array<double, 3> center{};
  std::array<double, 3> velocity{};  // d center / d sigma
  std::array<double, 3> width{0.1, 0.1, 0.1};
  double total = 1.0;   // integral of the truncated profile over z
  double cutoff = 6.0;  // support half-width in units of the axis width
  double eps = 1.0;     // squeeze already applied

  static BodyField gaussian(int rank, std::vector<double> tensor, const std::array<double, 3>& width,
                            const std::array<double, 3>& center = {}, double total = 1.0);

  void validate() const;
  std::array<double, 3> center_at(double sigma) const;
  // Support box at sigma (after squeezing).
  std::array<std::array<double, 2>, 3> support(double sigma) const;
  double support_radius(double sigma) const;
  double profile(double sigma, const std::array<double, 3>& z) const;
  // Full 4^rank frame components at (sigma, z), first index most significant.
  void value(double sigma, const std::array<double, 3>& z, double* out) const;
  // Chart components at a point of the Dixon tube.
  std::vector<double> chart_value(const WorldlineFrame& f, const Vec4& x, const TubeOptions& tube = {}) const;
};

BodyField squeeze(const BodyField& U, double eps);

struct MomentOptions {
  int nodes = 32;  // Gauss-Legendre nodes per axis
  int check_nodes = 40;  // second level for the refinement check; 0 disables it
  double tol = 1e-10;    // relative to the absolute moment scale
  TubeOptions tube;
};

// xi^{mu.. rho1..rhok}(sigma) = (-1)^k int z^rho1 .. z^rhok U^mu.. d^3 z, canonical
// layout mu_c * n_rho(k) + rho_c.
std::vector<double> moment_integral(const BodyField& U, const WorldlineFrame& f, double sigma, int k,
                                    const MomentOptions& opt = {});

// Moments through max_order at every node of the worldline.
DixonComponents moment_components(const BodyField& U, const WorldlineFrame& f, int max_order = 2,
                                  const MomentOptions& opt = {});

// Seeded covariant test tensors a + sum_l b_l sin(k_l x^l + p_l) per component.
std::vector<std::shared_ptr<const ChartField>> expansion_battery(int rank, int n, unsigned seed = 1,
                                                                 double k_min = 0.5, double k_max = 2.0);

struct ExpansionOptions {
  int sigma_nodes = 9;  // Simpson nodes over the worldline span
  int z_nodes = 32;
  int shoot_steps = 16;
  double floor = 1e-12;  // relative error treated as exact
  double slope_margin = 0.2;
  bool throw_on_shallow = true;
  TubeOptions tube;
};

struct ExpansionReport {
  int order = 0;
  std::vector<double> eps;
  std::vector<std::vector<double>> brute;   // [test][eps]: int U_eps phi d sigma d^3 z
  std::vector<std::vector<double>> series;  // [test][eps]: truncated moment series
  std::vector<double> scale;                // [test]: absolute size of the integrand
  std::vector<double> error;                // [eps]: max over tests of |brute - series| / scale
  std::vector<double> slopes;               // [test], fitted in log eps; empty entries at the floor are NaN
  double slope = 0.0;                       // smallest fitted slope
  bool at_floor = false;                    // every error below the floor
  bool passed = false;
};

std::vector<ExpansionReport> verify_expansion(const BodyField& U, const WorldlineFrame& f,
                                              const std::vector<std::shared_ptr<const ChartField>>& battery,
                                              const std::vector<double>& eps_ladder, const std::vector<int>& orders,
                                              const ExpansionOptions& opt = {});

ExpansionReport verify_expansion(const BodyField& U, const WorldlineFrame& f,
                                 const std::vector<std::shared_ptr<const ChartField>>& battery,
                                 const std::vector<double>& eps_ladder, int order, const ExpansionOptions& opt = {});

}  // namespace dixon
