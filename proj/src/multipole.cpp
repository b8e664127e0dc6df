#include "dixon/multipole.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace dixon {

namespace {

std::vector<std::vector<int>> nondecreasing(int len, int lo, int hi) {
  std::vector<std::vector<int>> out;
  std::vector<int> t(static_cast<std::size_t>(len), lo);
  if (len == 0) return {{}};
  while (true) {
    out.push_back(t);
    int j = len - 1;
    while (j >= 0 && t[j] == hi) --j;
    if (j < 0) break;
    ++t[j];
    for (int q = j + 1; q < len; ++q) t[q] = t[j];
  }
  return out;
}

const std::vector<std::vector<int>>& mu_list(int rank) {
  static const std::array<std::vector<std::vector<int>>, 3> lists = {nondecreasing(0, 0, 3), nondecreasing(1, 0, 3),
                                                                     nondecreasing(2, 0, 3)};
  if (rank < 0 || rank > 2) fail(ErrorCode::InvalidArgument, "tensor rank must be 0, 1 or 2");
  return lists[rank];
}

const std::vector<std::vector<int>>& rho_list(int k) {
  static const std::array<std::vector<std::vector<int>>, 4> lists = {
      nondecreasing(0, 1, 3), nondecreasing(1, 1, 3), nondecreasing(2, 1, 3), nondecreasing(3, 1, 3)};
  if (k < 0 || k > 3) fail(ErrorCode::UnsupportedOrder, "multipole order must be between 0 and 3");
  return lists[k];
}

int find_sorted(const std::vector<std::vector<int>>& list, const int* idx, int n) {
  std::vector<int> t(idx, idx + n);
  std::sort(t.begin(), t.end());
  for (std::size_t c = 0; c < list.size(); ++c)
    if (list[c] == t) return static_cast<int>(c);
  fail(ErrorCode::InvalidArgument, "index out of range");
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

std::size_t pow4(int n) { return static_cast<std::size_t>(1) << (2 * n); }

// Convert every index of a covariant tensor from chart to frame components.
std::vector<double> to_frame(const std::vector<double>& t, int n, const std::array<Vec4, 4>& e) {
  std::vector<double> cur = t, next(t.size());
  const std::size_t total = t.size();
  for (int slot = 0; slot < n; ++slot) {
    const std::size_t stride = pow4(n - 1 - slot);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t k = 0; k < total; ++k) {
      const int A = static_cast<int>((k / stride) % 4);
      const std::size_t base = k - static_cast<std::size_t>(A) * stride;
      double acc = 0.0;
      for (int m = 0; m < 4; ++m) acc += cur[base + static_cast<std::size_t>(m) * stride] * e[A][m];
      next[k] = acc;
    }
    std::swap(cur, next);
  }
  return cur;
}

// canonical position of every full index tuple, base-4 (mu) or base-3 (rho, offset by 1)
struct CanonTables {
  std::array<std::vector<int>, 3> mu, rho;
  CanonTables() {
    for (int r = 0; r <= 2; ++r) {
      const std::size_t n = pow4(r);
      for (std::size_t q = 0; q < n; ++q) {
        std::array<int, 2> t{};
        std::size_t u = q;
        for (int j = r - 1; j >= 0; --j) {
          t[j] = static_cast<int>(u % 4);
          u /= 4;
        }
        mu[r].push_back(find_sorted(mu_list(r), t.data(), r));
      }
    }
    for (int k = 0; k <= 2; ++k) {
      const int n = k == 0 ? 1 : k == 1 ? 3 : 9;
      for (int q = 0; q < n; ++q) {
        std::array<int, 2> t{};
        int u = q;
        for (int j = k - 1; j >= 0; --j) {
          t[j] = 1 + u % 3;
          u /= 3;
        }
        rho[k].push_back(find_sorted(rho_list(k), t.data(), k));
      }
    }
  }
};

const CanonTables& canon_tables() {
  static const CanonTables t;
  return t;
}

// sum_k (-1)^k / k! zeta^{mu.. a..} F_k[a.., mu..]; F_k are frame components
// with the derivative indices first.
double contract_node(const DixonComponents& J, std::size_t i, const std::array<std::vector<double>, 3>& F,
                     bool absolute = false) {
  const CanonTables& T = canon_tables();
  double total = 0.0;
  const std::size_t nm = pow4(J.rank);
  for (int k = 0; k <= J.max_order; ++k) {
    const std::size_t na = T.rho[k].size();
    double sum = 0.0;
    for (std::size_t ia = 0; ia < na; ++ia) {
      std::size_t t = ia;
      std::size_t aflat = 0, pw = 1;
      for (int q = 0; q < k; ++q) {
        aflat += pw * (1 + t % 3);
        t /= 3;
        pw *= 4;
      }
      for (std::size_t im = 0; im < nm; ++im) {
        const double z = J.at(k, i, T.mu[J.rank][im], T.rho[k][ia]);
        if (z == 0.0) continue;
        const double t = z * F[k][aflat * nm + im];
        sum += absolute ? std::abs(t) : t;
      }
    }
    total += ((k % 2 && !absolute) ? -1.0 : 1.0) / factorial(k) * sum;
  }
  return total;
}

template <int D>
using ChartGamma = std::array<std::array<std::array<ad::Taylor<D>, 4>, 4>, 4>;

template <int D>
std::vector<ad::Taylor<D>> chart_cov_derivative(const ChartGamma<D>& G, const std::vector<ad::Taylor<D>>& psi,
                                                int r) {
  const std::size_t n = psi.size();
  std::vector<ad::Taylor<D>> out(4 * n);
  std::vector<int> idx(static_cast<std::size_t>(r));
  for (int c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t t = k;
      for (int j = r - 1; j >= 0; --j) {
        idx[j] = static_cast<int>(t % 4);
        t /= 4;
      }
      ad::Taylor<D> v = psi[k].derivative(c);
      for (int j = 0; j < r; ++j) {
        const int keep = idx[j];
        for (int m = 0; m < 4; ++m) {
          const auto& g = G[m][c][keep];
          if (g.is_zero()) continue;
          idx[j] = m;
          const auto& other = psi[flat_index(idx.data(), r)];
          if (!other.is_zero()) v.fma(-1.0, g, other);
        }
        idx[j] = keep;
      }
      out[static_cast<std::size_t>(c) * n + k] = v;
    }
  return out;
}

AdaptedField chart_to_adapted(const AdaptedPatch& p, const ChartField& phi) {
  const int r = phi.rank();
  std::vector<T2> comps(pow4(r));
  phi.eval(p.x, comps.data());
  // transform index by index with the Jacobian
  for (int slot = 0; slot < r; ++slot) {
    const std::size_t stride = pow4(r - 1 - slot);
    std::vector<T2> next(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const int A = static_cast<int>((k / stride) % 4);
      const std::size_t base = k - static_cast<std::size_t>(A) * stride;
      T2 acc;
      for (int m = 0; m < 4; ++m) {
        const T2& c = comps[base + static_cast<std::size_t>(m) * stride];
        if (!c.is_zero() && !p.jac[m][A].is_zero()) acc.fma(c, p.jac[m][A]);
      }
      next[k] = acc;
    }
    comps.swap(next);
  }
  AdaptedField out(r);
  out.c = std::move(comps);
  return out;
}

AdaptedField field_on_patch(const AdaptedPatch& p, const TestTensor& phi) {
  if (phi.adapted) {
    AdaptedField f = phi.adapted(p);
    if (f.rank != phi.rank) fail(ErrorCode::InvalidArgument, "adapted test tensor returned the wrong rank");
    return f;
  }
  if (!phi.chart) fail(ErrorCode::InvalidArgument, "empty test tensor");
  return chart_to_adapted(p, *phi.chart);
}

std::array<std::vector<double>, 3> adapted_frame_jets(const AdaptedPatch& p, const AdaptedField& chi, int kmax) {
  std::array<std::vector<double>, 3> F;
  F[0].resize(chi.c.size());
  for (std::size_t k = 0; k < chi.c.size(); ++k) F[0][k] = chi.c[k].c[0];
  if (kmax >= 1) {
    const AdaptedField d1 = covariant_derivative(p, chi);
    F[1].resize(d1.c.size());
    for (std::size_t k = 0; k < d1.c.size(); ++k) F[1][k] = d1.c[k].c[0];
    if (kmax >= 2) {
      const AdaptedField d2 = covariant_derivative(p, d1);
      F[2].resize(d2.c.size());
      for (std::size_t k = 0; k < d2.c.size(); ++k) F[2][k] = d2.c[k].c[0];
    }
  }
  return F;
}

// V_j = node integrand of J[R^j nabla^j (R^p nabla^p phi)] for j = 0..max_order
std::vector<double> node_radial_values(const DixonComponents& J, std::size_t i, const AdaptedPatch& p,
                                       const AdaptedField& phi, int radial_power_p) {
  const AdaptedField chi = radial_power(p, phi, radial_power_p);
  std::vector<double> v(static_cast<std::size_t>(J.max_order + 1));
  for (int j = 0; j <= J.max_order; ++j)
    v[j] = contract_node(J, i, adapted_frame_jets(p, radial_power(p, chi, j), J.max_order));
  return v;
}

// J_(r) from the radial series V_j = J[R^j nabla^j phi]
std::vector<double> split_from_series(const std::vector<double>& V) {
  const int n = static_cast<int>(V.size()) - 1;
  std::vector<double> out(V.size(), 0.0);
  for (int r = 0; r <= n; ++r)
    for (int j = r; j <= n; ++j)
      out[r] += (((j - r) % 2) ? -1.0 : 1.0) / (factorial(j - r) * factorial(r)) * V[j];
  return out;
}

void check_grid(const DixonComponents& J, const WorldlineFrame& f) {
  J.validate();
  if (J.sigma.size() != f.size())
    fail(ErrorCode::InvalidArgument, "components and worldline use different sigma grids");
  for (std::size_t i = 0; i < J.sigma.size(); ++i)
    if (std::abs(J.sigma[i] - f.sigma(i)) > 1e-9 * std::max(1.0, std::abs(J.sigma[i])))
      fail(ErrorCode::InvalidArgument, "components and worldline use different sigma grids");
}

}  // namespace

// ---------------------------------------------------------------- bump

FlatTopBump FlatTopBump::make(int profile) {
  if (profile == 2) return make(2, 0.15, 0.7);
  return make(profile, 0.25, 1.0);
}

FlatTopBump FlatTopBump::make(int profile, double w_flat, double w_sup) {
  if (profile != 1 && profile != 2) fail(ErrorCode::InvalidArgument, "bump profile must be 1 or 2");
  if (!(w_flat > 0.0 && w_sup > w_flat)) fail(ErrorCode::InvalidArgument, "bump widths need 0 < w_flat < w_sup");
  FlatTopBump b;
  b.profile = profile;
  b.w_flat = w_flat;
  b.w_sup = w_sup;
  // both smoothsteps integrate to 1/2 on [0, 1]; the bumps to 1/630 and 1/140
  const double L = w_sup - w_flat;
  const double ib = profile == 1 ? 1.0 / 630.0 : 1.0 / 140.0;
  b.amplitude = (0.5 - w_flat - 0.5 * L) / (L * ib);
  return b;
}

double FlatTopBump::operator()(double u) const {
  u = std::abs(u);
  if (u <= w_flat) return 1.0;
  if (u >= w_sup) return 0.0;
  const double t = (u - w_flat) / (w_sup - w_flat);
  const double s = 1.0 - t;
  if (profile == 1) {
    const double t4 = t * t * t * t;
    const double step = t4 * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t * t * t);
    return 1.0 - step + amplitude * t4 * s * s * s * s;
  }
  const double t3 = t * t * t;
  const double step = t3 * (10.0 - 15.0 * t + 6.0 * t * t);
  return 1.0 - step + amplitude * t3 * s * s * s;
}

// ---------------------------------------------------------------- tensors and indices

TestTensor TestTensor::from_chart(std::shared_ptr<const ChartField> f) {
  if (!f) fail(ErrorCode::InvalidArgument, "null chart field");
  TestTensor t;
  t.rank = f->rank();
  t.chart = std::move(f);
  return t;
}

TestTensor TestTensor::from_adapted(int rank, AdaptedFieldFn fn) {
  TestTensor t;
  t.rank = rank;
  t.adapted = std::move(fn);
  return t;
}

int n_mu(int rank) { return static_cast<int>(mu_list(rank).size()); }
int n_rho(int order) { return static_cast<int>(rho_list(order).size()); }
std::vector<int> mu_tuple(int rank, int canon) { return mu_list(rank).at(static_cast<std::size_t>(canon)); }
std::vector<int> rho_tuple(int order, int canon) { return rho_list(order).at(static_cast<std::size_t>(canon)); }
int mu_canon(int rank, const int* idx) {
  for (int q = 0; q < rank; ++q)
    if (idx[q] < 0 || idx[q] > 3) fail(ErrorCode::InvalidArgument, "frame index out of range");
  return find_sorted(mu_list(rank), idx, rank);
}
int rho_canon(int order, const int* idx) {
  for (int q = 0; q < order; ++q)
    if (idx[q] < 1 || idx[q] > 3) fail(ErrorCode::InvalidArgument, "spatial index out of range");
  return find_sorted(rho_list(order), idx, order);
}

DixonComponents DixonComponents::zeros(int rank, int max_order, std::vector<double> sigma) {
  if (rank < 1 || rank > 2) fail(ErrorCode::InvalidArgument, "components need rank 1 or 2");
  if (max_order < 0 || max_order > 2) fail(ErrorCode::UnsupportedOrder, "multipole order above 2 is not supported");
  DixonComponents J;
  J.rank = rank;
  J.max_order = max_order;
  J.sigma = std::move(sigma);
  for (int k = 0; k <= max_order; ++k) J.data[k].assign(J.sigma.size() * J.block(k), 0.0);
  return J;
}

double DixonComponents::value(int k, std::size_t i, const int* mu, const int* rho) const {
  return at(k, i, mu_canon(rank, mu), rho_canon(k, rho));
}

void DixonComponents::set(int k, std::size_t i, const int* mu, const int* rho, double v) {
  at(k, i, mu_canon(rank, mu), rho_canon(k, rho)) = v;
}

void DixonComponents::validate() const {
  if (rank < 1 || rank > 2) fail(ErrorCode::InvalidArgument, "components need rank 1 or 2");
  if (max_order < 0 || max_order > 2) fail(ErrorCode::UnsupportedOrder, "multipole order above 2 is not supported");
  if (sigma.empty()) fail(ErrorCode::InvalidArgument, "empty sigma grid");
  for (std::size_t i = 1; i < sigma.size(); ++i)
    if (!(sigma[i] > sigma[i - 1])) fail(ErrorCode::InvalidArgument, "sigma grid must increase");
  for (int k = 0; k <= max_order; ++k)
    if (data[k].size() != sigma.size() * block(k)) fail(ErrorCode::InvalidArgument, "component array has wrong size");
}

std::string components_to_json(const DixonComponents& J) {
  J.validate();
  nlohmann::json j;
  j["schema"] = "dixon-components/1";
  j["rank"] = J.rank;
  j["max_order"] = J.max_order;
  j["sigma"] = J.sigma;
  nlohmann::json imap, orders;
  imap["mu"] = mu_list(J.rank);
  for (int k = 0; k <= J.max_order; ++k) {
    const std::string key = std::to_string(k);
    imap["rho"][key] = rho_list(k);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < J.sigma.size(); ++i) {
      const auto b = J.data[k].begin() + static_cast<std::ptrdiff_t>(i * J.block(k));
      rows.push_back(std::vector<double>(b, b + static_cast<std::ptrdiff_t>(J.block(k))));
    }
    orders[key] = std::move(rows);
  }
  j["index_map"] = std::move(imap);
  j["orders"] = std::move(orders);
  return j.dump();
}

DixonComponents components_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCode::ConfigParse, e.what());
  }
  if (j.value("schema", std::string()) != "dixon-components/1")
    fail(ErrorCode::ConfigParse, "unknown component schema");
  try {
    DixonComponents J =
        DixonComponents::zeros(j.at("rank").get<int>(), j.at("max_order").get<int>(), j.at("sigma").get<std::vector<double>>());
    for (int k = 0; k <= J.max_order; ++k) {
      const auto& rows = j.at("orders").at(std::to_string(k));
      if (rows.size() != J.sigma.size()) fail(ErrorCode::ConfigParse, "order " + std::to_string(k) + " has wrong length");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto row = rows[i].get<std::vector<double>>();
        if (row.size() != J.block(k)) fail(ErrorCode::ConfigParse, "component row has wrong size");
        std::copy(row.begin(), row.end(), J.data[k].begin() + static_cast<std::ptrdiff_t>(i * J.block(k)));
      }
    }
    return J;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigParse, e.what());
  }
}

// ---------------------------------------------------------------- chart jets

std::vector<std::vector<double>> chart_covariant_jets(const MetricSpec& spec, const ChartField& phi, const Vec4& x,
                                                      int kmax) {
  if (kmax < 0 || kmax > 3) fail(ErrorCode::UnsupportedOrder, "chart jets are available up to third order");
  if (!spec.contains(x)) fail(ErrorCode::OutOfDomain, "chart jet point outside the domain");
  std::array<T3, 4> X;
  for (int v = 0; v < 4; ++v) X[v] = T3::variable(v, x[v]);
  const int r = phi.rank();
  std::vector<T3> level(pow4(r));
  phi.eval(X, level.data());
  ChartGamma<3> G;
  christoffel_taylor<3>(spec, x, G);
  std::vector<std::vector<double>> D(static_cast<std::size_t>(kmax + 1));
  for (int k = 0; k <= kmax; ++k) {
    D[k].resize(level.size());
    for (std::size_t q = 0; q < level.size(); ++q) D[k][q] = level[q].c[0];
    if (k < kmax) level = chart_cov_derivative<3>(G, level, r + k);
  }
  return D;
}

std::vector<double> sym_cov_deriv(const MetricSpec& spec, const ChartField& phi, int k, const Vec4& x,
                                  const std::vector<Vec4>& directions, DerivativeStrategy strategy, double h_test) {
  if (k < 0 || k > 3) fail(ErrorCode::UnsupportedOrder, "symmetrized derivatives are available up to third order");
  if (static_cast<int>(directions.size()) != k) fail(ErrorCode::InvalidArgument, "need one direction per derivative");
  const int r = phi.rank();
  const std::size_t nm = pow4(r);
  std::vector<double> out(nm, 0.0);

  if (strategy == DerivativeStrategy::Analytic) {
    const auto D = chart_covariant_jets(spec, phi, x, k);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    int count = 0;
    do {
      ++count;
      for (std::size_t ic = 0; ic < pow4(k); ++ic) {
        double w = 1.0;
        std::size_t t = ic;
        for (int q = k - 1; q >= 0; --q) {
          w *= directions[perm[q]][t % 4];
          t /= 4;
        }
        if (w == 0.0) continue;
        for (std::size_t im = 0; im < nm; ++im) out[im] += w * D[k][ic * nm + im];
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (double& v : out) v /= count;
    return out;
  }

  // Along the geodesic through x with tangent U, the k-th derivative of the
  // tensor transported back to x is the symmetrized nabla^k contracted with U.
  // Mixed directions follow by polarization.
  auto transported = [&](const Vec4& U, double s) {
    std::vector<double> v(nm);
    if (s == 0.0) {
      phi.eval(x, v.data());
      return v;
    }
    const GeodesicEnd end = shoot(spec, x, U, s, 32, true);
    std::vector<double> at(nm, 0.0);
    phi.eval(end.x, at.data());
    std::vector<double> cur = at, next(nm);
    for (int slot = 0; slot < r; ++slot) {
      const std::size_t stride = pow4(r - 1 - slot);
      for (std::size_t q = 0; q < nm; ++q) {
        const int A = static_cast<int>((q / stride) % 4);
        const std::size_t base = q - static_cast<std::size_t>(A) * stride;
        double acc = 0.0;
        for (int m = 0; m < 4; ++m) acc += cur[base + static_cast<std::size_t>(m) * stride] * end.Pi[m][A];
        next[q] = acc;
      }
      std::swap(cur, next);
    }
    return cur;
  };
  auto diagonal = [&](const Vec4& U) {
    const double h = h_test;
    std::vector<double> d(nm, 0.0);
    if (k == 0) return transported(U, 0.0);
    if (k == 1) {
      const auto p = transported(U, h), m = transported(U, -h);
      for (std::size_t q = 0; q < nm; ++q) d[q] = (p[q] - m[q]) / (2.0 * h);
    } else if (k == 2) {
      const auto p = transported(U, h), z = transported(U, 0.0), m = transported(U, -h);
      for (std::size_t q = 0; q < nm; ++q) d[q] = (p[q] - 2.0 * z[q] + m[q]) / (h * h);
    } else {
      const auto p2 = transported(U, 2 * h), p1 = transported(U, h), m1 = transported(U, -h),
                 m2 = transported(U, -2 * h);
      for (std::size_t q = 0; q < nm; ++q) d[q] = (p2[q] - 2.0 * p1[q] + 2.0 * m1[q] - m2[q]) / (2.0 * h * h * h);
    }
    return d;
  };
  if (k == 0) return diagonal(Vec4{});
  const int combos = 1 << k;
  for (int mask = 0; mask < combos; ++mask) {
    Vec4 U{};
    double sign = 1.0;
    for (int q = 0; q < k; ++q) {
      const double e = (mask >> q & 1) ? -1.0 : 1.0;
      sign *= e;
      U = axpy(e, directions[q], U);
    }
    const auto d = diagonal(U);
    for (std::size_t q = 0; q < nm; ++q) out[q] += sign * d[q];
  }
  const double norm = factorial(k) * combos;
  for (double& v : out) v /= norm;
  return out;
}

// ---------------------------------------------------------------- quadrature and apply

std::vector<double> simpson_weights(const std::vector<double>& s) {
  const std::size_t n = s.size();
  std::vector<double> w(n, 0.0);
  if (n < 2) return w;
  if (n == 2) {
    w[0] = w[1] = 0.5 * (s[1] - s[0]);
    return w;
  }
  const std::size_t intervals = n - 1;
  const std::size_t paired = intervals - intervals % 2;
  for (std::size_t i = 0; i + 2 <= paired; i += 2) {
    const double h0 = s[i + 1] - s[i], h1 = s[i + 2] - s[i + 1], hs = h0 + h1;
    w[i] += hs / 6.0 * (2.0 - h1 / h0);
    w[i + 1] += hs * hs * hs / (6.0 * h0 * h1);
    w[i + 2] += hs / 6.0 * (2.0 - h0 / h1);
  }
  if (intervals % 2) {
    // last interval from the parabola through the final three nodes
    const double h1 = s[n - 2] - s[n - 3], h2 = s[n - 1] - s[n - 2];
    w[n - 1] += (2.0 * h2 * h2 + 3.0 * h1 * h2) / (6.0 * (h1 + h2));
    w[n - 2] += (h2 * h2 + 3.0 * h1 * h2) / (6.0 * h1);
    w[n - 3] -= h2 * h2 * h2 / (6.0 * h1 * (h1 + h2));
  }
  return w;
}

const AdaptedPatch& PatchCache::get(std::size_t node) {
  auto it = cache_.find(node);
  if (it == cache_.end()) it = cache_.emplace(node, build_patch(*f_, node)).first;
  return it->second;
}

namespace {

ApplyResult integrate_nodes(const std::vector<double>& sigma, const std::vector<double>& vals,
                            const std::vector<double>& mags, const ApplyOptions& opt) {
  const std::size_t n = sigma.size();
  const auto w = simpson_weights(sigma);
  ApplyResult r;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.value += w[i] * vals[i];
    scale += std::abs(w[i] * vals[i]);
    if (!mags.empty()) r.magnitude += std::abs(w[i]) * mags[i];
  }
  std::vector<double> cs;
  std::vector<std::size_t> ci;
  for (std::size_t i = 0; i < n; i += 2) ci.push_back(i);
  if (ci.back() != n - 1) ci.push_back(n - 1);
  for (std::size_t i : ci) cs.push_back(sigma[i]);
  if (ci.size() >= 3) {
    const auto wc = simpson_weights(cs);
    for (std::size_t q = 0; q < ci.size(); ++q) r.coarse += wc[q] * vals[ci[q]];
    r.disagreement = std::abs(r.value - r.coarse) / std::max(scale, 1e-300);
    r.grid_too_coarse = r.disagreement > opt.grid_tol;
  } else {
    r.coarse = r.value;
    r.grid_too_coarse = true;
  }
  return r;
}

}  // namespace

ApplyResult apply(const DixonComponents& J, const WorldlineFrame& f, const TestTensor& phi, const ApplyOptions& opt) {
  check_grid(J, f);
  if (phi.rank != J.rank) fail(ErrorCode::InvalidArgument, "test tensor rank does not match the multipole");
  const std::size_t n = f.size();
  std::vector<double> vals(n), mags(n);
  if (phi.chart && !opt.force_adapted) {
    for (std::size_t i = 0; i < n; ++i) {
      const FrameSample s = f.sample(i);
      const auto D = chart_covariant_jets(f.spec, *phi.chart, s.x, J.max_order);
      std::array<std::vector<double>, 3> F;
      for (int k = 0; k <= J.max_order; ++k) F[k] = to_frame(D[k], k + J.rank, s.e);
      vals[i] = contract_node(J, i, F);
      mags[i] = contract_node(J, i, F, true);
    }
  } else {
    PatchCache cache(f);
    for (std::size_t i = 0; i < n; ++i) {
      const AdaptedPatch& p = cache.get(i);
      const auto F = adapted_frame_jets(p, field_on_patch(p, phi), J.max_order);
      vals[i] = contract_node(J, i, F);
      mags[i] = contract_node(J, i, F, true);
    }
  }
  return integrate_nodes(J.sigma, vals, mags, opt);
}

ApplyResult apply_gradient(const DixonComponents& J, const WorldlineFrame& f, const ChartField& phi,
                           const ApplyOptions& opt) {
  check_grid(J, f);
  if (phi.rank() + 1 != J.rank) fail(ErrorCode::InvalidArgument, "gradient rank does not match the multipole");
  const std::size_t n = f.size();
  std::vector<double> vals(n), mags(n);
  for (std::size_t i = 0; i < n; ++i) {
    const FrameSample s = f.sample(i);
    const auto D = chart_covariant_jets(f.spec, phi, s.x, J.max_order + 1);
    std::array<std::vector<double>, 3> F;
    for (int k = 0; k <= J.max_order; ++k) F[k] = to_frame(D[k + 1], k + J.rank, s.e);
    vals[i] = contract_node(J, i, F);
    mags[i] = contract_node(J, i, F, true);
  }
  return integrate_nodes(J.sigma, vals, mags, opt);
}

namespace {

std::vector<double> radial_series(const DixonComponents& J, PatchCache& patches, const TestTensor& phi, int p) {
  check_grid(J, patches.frame());
  if (phi.rank != J.rank) fail(ErrorCode::InvalidArgument, "test tensor rank does not match the multipole");
  if (p < 0) fail(ErrorCode::InvalidArgument, "negative radial power");
  const std::size_t n = J.sigma.size();
  const auto w = simpson_weights(J.sigma);
  std::vector<double> V(static_cast<std::size_t>(J.max_order + 1), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    const AdaptedPatch& pt = patches.get(i);
    const auto v = node_radial_values(J, i, pt, field_on_patch(pt, phi), p);
    for (std::size_t j = 0; j < V.size(); ++j) V[j] += w[i] * v[j];
  }
  return V;
}

}  // namespace

std::vector<double> dixon_split(const DixonComponents& J, PatchCache& patches, const TestTensor& phi, int radial_power) {
  return split_from_series(radial_series(J, patches, phi, radial_power));
}

double apply_radial(const DixonComponents& J, PatchCache& patches, const TestTensor& phi, int radial_power) {
  return radial_series(J, patches, phi, radial_power)[0];
}

// ---------------------------------------------------------------- extraction

Extraction extract_component(const DixonComponents& J, PatchCache& patches, double sigma0, int k,
                             const std::vector<int>& mu, const std::vector<int>& rho, const ExtractOptions& opt) {
  const WorldlineFrame& f = patches.frame();
  check_grid(J, f);
  if (k < 0 || k > J.max_order) fail(ErrorCode::UnsupportedOrder, "requested order exceeds the multipole order");
  if (static_cast<int>(mu.size()) != J.rank || static_cast<int>(rho.size()) != k)
    fail(ErrorCode::InvalidArgument, "index tuple lengths do not match rank and order");
  mu_canon(J.rank, mu.data());
  if (k > 0) rho_canon(k, rho.data());
  if (opt.eps.size() < 2) fail(ErrorCode::InvalidArgument, "need at least two widths for extrapolation");
  for (std::size_t q = 1; q < opt.eps.size(); ++q)
    if (!(opt.eps[q] < opt.eps[q - 1] && opt.eps[q] > 0.0)) fail(ErrorCode::InvalidArgument, "widths must decrease");

  const FlatTopBump bump = FlatTopBump::make(opt.profile);
  const std::size_t n = J.sigma.size();
  const double spacing = (J.sigma.back() - J.sigma.front()) / static_cast<double>(n - 1);
  const std::size_t centre = f.nearest(sigma0);

  // U(node) is the ladder-independent part of the node integrand of J_(k)[phi]
  std::map<std::size_t, double> U;
  auto node_value = [&](std::size_t i) {
    auto it = U.find(i);
    if (it != U.end()) return it->second;
    const AdaptedPatch& p = patches.get(i);
    AdaptedField phi(J.rank);
    T2 m(1.0);
    for (int a : rho) m = m * T2::variable(a, 0.0);
    for (std::size_t q = 0; q < phi.c.size(); ++q) {
      const int A = J.rank == 2 ? static_cast<int>(q / 4) : static_cast<int>(q);
      T2 v = m * p.pibar[mu[0]][A];
      if (J.rank == 2) v = v * p.pibar[mu[1]][q % 4];
      phi.c[q] = v;
    }
    const auto V = node_radial_values(J, i, p, phi, 0);
    double val = 0.0;
    for (int j = k; j <= J.max_order; ++j)
      val += (((j - k) % 2) ? -1.0 : 1.0) / (factorial(j - k) * factorial(k)) * V[j];
    U.emplace(i, val);
    return val;
  };

  Extraction ex;
  ex.eps = opt.eps;
  for (double eps : opt.eps) {
    const double half = eps * bump.w_sup;
    const std::size_t stride =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(2.0 * half / opt.nodes_per_window / spacing)));
    const std::size_t M = static_cast<std::size_t>(std::ceil(half / (static_cast<double>(stride) * spacing)));
    if (2 * M + 1 < 9)
      fail(ErrorCode::GridTooCoarse, "width " + std::to_string(eps) + " spans fewer than 9 grid nodes");
    if (centre < M * stride || centre + M * stride >= n)
      fail(ErrorCode::InvalidArgument, "extraction window leaves the worldline grid");
    std::vector<double> s;
    std::vector<std::size_t> idx;
    for (std::size_t q = 0; q <= 2 * M; ++q) {
      idx.push_back(centre - M * stride + q * stride);
      s.push_back(J.sigma[idx.back()]);
    }
    const auto w = simpson_weights(s);
    double est = 0.0;
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const double psi = bump((s[q] - sigma0) / eps);
      if (psi == 0.0) continue;
      // the test tensor carries (-1)^k, cancelling the sign J_(k) attaches to order k
      est += w[q] * psi / eps * ((k % 2) ? -1.0 : 1.0) * node_value(idx[q]);
    }
    ex.estimates.push_back(est);
  }
  for (std::size_t q = 0; q + 1 < ex.estimates.size(); ++q) {
    const double r2 = std::pow(opt.eps[q] / opt.eps[q + 1], 2);
    ex.richardson.push_back((r2 * ex.estimates[q + 1] - ex.estimates[q]) / (r2 - 1.0));
  }
  ex.value = ex.richardson.back();
  const std::size_t L = ex.estimates.size();
  if (L >= 3) {
    const double d1 = std::abs(ex.estimates[L - 3] - ex.estimates[L - 2]);
    const double d2 = std::abs(ex.estimates[L - 2] - ex.estimates[L - 1]);
    const double floor = 1e-13 * std::max(1.0, std::abs(ex.value));
    ex.order = (d2 <= floor) ? 10.0 : std::log(d1 / d2) / std::log(opt.eps[L - 2] / opt.eps[L - 1]);
    const double drift = std::abs(ex.richardson[L - 2] - ex.richardson[L - 3]);
    if (drift > opt.tol * std::max(1.0, std::abs(ex.value)))
      fail(ErrorCode::NoConvergence, "extrapolated estimates differ by " + std::to_string(drift));
  }
  return ex;
}

}  // namespace dixon
