#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dixon/local_jet.hpp"
#include "dixon/worldline.hpp"

namespace dixon {

using T3 = ad::Taylor<3>;

// Even, compactly supported window: 1 on |u| <= w_flat, 0 beyond w_sup, with a
// polynomial shoulder in between whose integral makes the total integral 1.
// Profile 1 uses a degree-7 smoothstep with a t^4 (1-t)^4 correction bump,
// profile 2 a degree-5 smoothstep with a t^3 (1-t)^3 bump and narrower widths.
struct FlatTopBump {
  int profile = 1;
  double w_flat = 0.25;
  double w_sup = 1.0;
  double amplitude = 0.0;

  static FlatTopBump make(int profile = 1);
  static FlatTopBump make(int profile, double w_flat, double w_sup);
  double operator()(double u) const;
};

// Covariant tensor field given by chart components.  The callback is invoked
// with doubles, Taylor<2> and Taylor<3> coordinates and fills 4^rank
// components (first index most significant); `out` arrives zeroed.
class ChartField {
 public:
  explicit ChartField(int rank) : rank_(rank) {}
  virtual ~ChartField() = default;
  int rank() const { return rank_; }
  virtual void eval(const std::array<double, 4>& x, double* out) const = 0;
  virtual void eval(const std::array<T2, 4>& x, T2* out) const = 0;
  virtual void eval(const std::array<T3, 4>& x, T3* out) const = 0;

 private:
  int rank_;
};

template <class F>
class LambdaField final : public ChartField {
 public:
  LambdaField(int rank, F f) : ChartField(rank), f_(std::move(f)) {}
  void eval(const std::array<double, 4>& x, double* out) const override { f_(x, out); }
  void eval(const std::array<T2, 4>& x, T2* out) const override { f_(x, out); }
  void eval(const std::array<T3, 4>& x, T3* out) const override { f_(x, out); }

 private:
  F f_;
};

template <class F>
std::shared_ptr<const ChartField> make_chart_field(int rank, F f) {
  return std::make_shared<LambdaField<F>>(rank, std::move(f));
}

using AdaptedFieldFn = std::function<AdaptedField(const AdaptedPatch&)>;

// A test tensor is either a chart field or a field defined node by node in
// adapted coordinates.
struct TestTensor {
  int rank = 0;
  std::shared_ptr<const ChartField> chart;
  AdaptedFieldFn adapted;

  static TestTensor from_chart(std::shared_ptr<const ChartField> f);
  static TestTensor from_adapted(int rank, AdaptedFieldFn fn);
};

// Canonical index tuples.  mu tuples are nondecreasing frame indices (0..3)
// of length `rank`; rho tuples are nondecreasing spatial indices (1..3).
int n_mu(int rank);
int n_rho(int order);
std::vector<int> mu_tuple(int rank, int canon);
std::vector<int> rho_tuple(int order, int canon);
int mu_canon(int rank, const int* idx);
int rho_canon(int order, const int* idx);

// Frame components zeta^{mu.. a1..ak}(sigma) of a Dixon multipole on a sigma grid.
// rank 2 means symmetric in the two mu indices.
struct DixonComponents {
  int rank = 2;
  int max_order = 2;
  std::vector<double> sigma;
  std::array<std::vector<double>, 3> data;

  static DixonComponents zeros(int rank, int max_order, std::vector<double> sigma);
  std::size_t block(int k) const { return static_cast<std::size_t>(n_mu(rank) * n_rho(k)); }
  double& at(int k, std::size_t i, int mu_c, int rho_c) {
    return data[k][i * block(k) + static_cast<std::size_t>(mu_c * n_rho(k) + rho_c)];
  }
  double at(int k, std::size_t i, int mu_c, int rho_c) const {
    return data[k][i * block(k) + static_cast<std::size_t>(mu_c * n_rho(k) + rho_c)];
  }
  // Full-index access; mu has `rank` entries in 0..3, rho has k entries in 1..3.
  double value(int k, std::size_t i, const int* mu, const int* rho) const;
  void set(int k, std::size_t i, const int* mu, const int* rho, double v);
  void validate() const;
};

std::string components_to_json(const DixonComponents& J);
DixonComponents components_from_json(const std::string& text);

// Covariant derivatives of a chart field at x: D[k] holds nabla_{c_k} ... nabla_{c_1} phi
// with indices (c_k, ..., c_1, mu..) flattened base 4.  kmax <= 3.
std::vector<std::vector<double>> chart_covariant_jets(const MetricSpec& spec, const ChartField& phi, const Vec4& x,
                                                      int kmax);

enum class DerivativeStrategy { Analytic, FiniteDifference };

// Symmetrized k-th covariant derivative contracted with k direction vectors,
// returning the 4^rank remaining chart components.
std::vector<double> sym_cov_deriv(const MetricSpec& spec, const ChartField& phi, int k, const Vec4& x,
                                  const std::vector<Vec4>& directions,
                                  DerivativeStrategy strategy = DerivativeStrategy::Analytic, double h_test = 1e-3);

struct ApplyOptions {
  double grid_tol = 1e-6;  // relative fine/coarse Simpson disagreement that raises the warning
  bool force_adapted = false;
};

struct ApplyResult {
  double value = 0.0;
  double coarse = 0.0;
  double disagreement = 0.0;
  bool grid_too_coarse = false;
  double magnitude = 0.0;  // quadrature of the absolute per-term products
};

// Quadrature weights on the nodes of a sigma grid (composite Simpson).
std::vector<double> simpson_weights(const std::vector<double>& s);

// Caches adapted patches of one worldline by node.
class PatchCache {
 public:
  explicit PatchCache(const WorldlineFrame& f) : f_(&f) {}
  const AdaptedPatch& get(std::size_t node);
  const WorldlineFrame& frame() const { return *f_; }

 private:
  const WorldlineFrame* f_;
  std::map<std::size_t, AdaptedPatch> cache_;
};

// J[phi].  Chart test tensors use chart covariant jets unless force_adapted.
ApplyResult apply(const DixonComponents& J, const WorldlineFrame& f, const TestTensor& phi,
                  const ApplyOptions& opt = {});

// J[nabla phi] for a chart field phi of rank J.rank - 1, the derivative index
// taking the first multipole slot.
ApplyResult apply_gradient(const DixonComponents& J, const WorldlineFrame& f, const ChartField& phi,
                           const ApplyOptions& opt = {});

// J_(r)[nabla^p_R phi] for r = 0..max_order, evaluated in adapted coordinates.
// nabla^p_R phi means R^{a1} .. R^{ap} nabla_{a1 .. ap} phi with R the radial vector.
std::vector<double> dixon_split(const DixonComponents& J, PatchCache& patches, const TestTensor& phi,
                                int radial_power = 0);

// J[nabla^p_R phi].
double apply_radial(const DixonComponents& J, PatchCache& patches, const TestTensor& phi, int radial_power);

struct ExtractOptions {
  std::vector<double> eps = {0.2, 0.1, 0.05, 0.025};
  int profile = 1;
  int nodes_per_window = 64;
  double tol = 1e-4;
};

struct Extraction {
  double value = 0.0;  // Richardson-extrapolated
  std::vector<double> eps;
  std::vector<double> estimates;
  std::vector<double> richardson;
  double order = 0.0;  // observed convergence order of the raw estimates
};

// Recovers zeta^{mu.. rho..}(sigma0) from J alone, by applying J_(k) to
// localized test tensors of width eps and extrapolating eps -> 0.
Extraction extract_component(const DixonComponents& J, PatchCache& patches, double sigma0, int k,
                             const std::vector<int>& mu, const std::vector<int>& rho, const ExtractOptions& opt = {});

}  // namespace dixon
