#pragma once

// Truncated multivariate Taylor polynomials in four variables.
//
// A Taylor<D> holds the coefficients of all monomials y^a with |a| <= D,
// ordered by total degree and then lexicographically, so the first
// Taylor<D-1>::N coefficients of a Taylor<D> form a Taylor<D-1>.  Arithmetic
// is truncated at degree D, which makes every operation exact for the
// coefficients it keeps.  Partial derivatives drop one degree of validity.

#include <array>
#include <cmath>
#include <cstdint>

namespace dixon::ad {

constexpr int binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return static_cast<int>(r);
}

constexpr int n_monomials(int D) { return binomial(D + 4, 4); }
constexpr int n_products(int D) { return binomial(D + 8, 8); }

using Exps = std::array<int, 4>;

template <int D>
struct Layout {
  static constexpr int N = n_monomials(D);
  static constexpr int P = n_products(D);

  std::array<Exps, N> exps{};
  std::array<int, N> degree{};
  std::array<int, D + 2> degree_start{};
  // product triples (i, j, k): monomial i times monomial j is monomial k
  std::array<std::uint16_t, P> pi{}, pj{}, pk{};
  // derivative tables: for variable v, monomial k maps to dtarget[v][k] with factor dfactor[v][k]
  std::array<std::array<int, N>, 4> dtarget{};
  std::array<std::array<double, N>, 4> dfactor{};
  // integration in variable v: monomial k maps to itarget[v][k] (or -1 if truncated)
  std::array<std::array<int, N>, 4> itarget{};
  // a lower-degree parent used when building monomial powers: exps[k] = exps[parent[k]] + e_{pvar[k]}
  std::array<int, N> parent{}, pvar{};
  std::array<double, N> factorial{};  // a! = prod a_v!

  constexpr int index_of(const Exps& e) const {
    for (int k = 0; k < N; ++k)
      if (exps[k] == e) return k;
    return -1;
  }

  constexpr Layout() {
    int k = 0;
    for (int d = 0; d <= D; ++d) {
      degree_start[d] = k;
      for (int a0 = d; a0 >= 0; --a0)
        for (int a1 = d - a0; a1 >= 0; --a1)
          for (int a2 = d - a0 - a1; a2 >= 0; --a2) {
            exps[k] = {a0, a1, a2, d - a0 - a1 - a2};
            degree[k] = d;
            ++k;
          }
    }
    degree_start[D + 1] = k;
    int p = 0;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        if (degree[i] + degree[j] > D) continue;
        Exps e{};
        for (int v = 0; v < 4; ++v) e[v] = exps[i][v] + exps[j][v];
        pi[p] = static_cast<std::uint16_t>(i);
        pj[p] = static_cast<std::uint16_t>(j);
        pk[p] = static_cast<std::uint16_t>(index_of(e));
        ++p;
      }
    for (int v = 0; v < 4; ++v)
      for (int m = 0; m < N; ++m) {
        if (exps[m][v] == 0) {
          dtarget[v][m] = -1;
          dfactor[v][m] = 0.0;
        } else {
          Exps e = exps[m];
          e[v] -= 1;
          dtarget[v][m] = index_of(e);
          dfactor[v][m] = exps[m][v];
        }
        if (degree[m] == D) {
          itarget[v][m] = -1;
        } else {
          Exps e = exps[m];
          e[v] += 1;
          itarget[v][m] = index_of(e);
        }
      }
    for (int m = 0; m < N; ++m) {
      double f = 1.0;
      for (int v = 0; v < 4; ++v)
        for (int q = 2; q <= exps[m][v]; ++q) f *= q;
      factorial[m] = f;
      parent[m] = -1;
      pvar[m] = -1;
      for (int v = 0; v < 4 && m > 0; ++v)
        if (exps[m][v] > 0) {
          Exps e = exps[m];
          e[v] -= 1;
          parent[m] = index_of(e);
          pvar[m] = v;
          break;
        }
    }
  }
};

template <int D>
inline constexpr Layout<D> layout{};

template <int D>
class Taylor {
 public:
  static constexpr int N = n_monomials(D);
  std::array<double, N> c{};

  constexpr Taylor() = default;
  constexpr Taylor(double v) { c[0] = v; }  // NOLINT(google-explicit-constructor)

  // The coordinate function y_v expanded about x0.
  static Taylor variable(int v, double x0) {
    Taylor t(x0);
    t.c[1 + v] = 1.0;
    return t;
  }

  double value() const { return c[0]; }

  double coeff(const Exps& e) const {
    const int k = layout<D>.index_of(e);
    return k < 0 ? 0.0 : c[k];
  }
  // Partial derivative d^e at the expansion point.
  double partial(const Exps& e) const {
    const int k = layout<D>.index_of(e);
    return k < 0 ? 0.0 : c[k] * layout<D>.factorial[k];
  }

  Taylor derivative(int v) const {
    Taylor r;
    const auto& L = layout<D>;
    for (int m = 1; m < N; ++m) {
      const int t = L.dtarget[v][m];
      if (t >= 0) r.c[t] += L.dfactor[v][m] * c[m];
    }
    return r;
  }

  // Antiderivative in variable v vanishing on y_v = 0 (top degree truncated).
  Taylor integral(int v) const {
    Taylor r;
    const auto& L = layout<D>;
    for (int m = 0; m < N; ++m) {
      const int t = L.itarget[v][m];
      if (t >= 0) r.c[t] += c[m] / static_cast<double>(L.exps[m][v] + 1);
    }
    return r;
  }

  bool is_zero() const {
    for (double x : c)
      if (x != 0.0) return false;
    return true;
  }

  Taylor& operator+=(const Taylor& o) {
    for (int k = 0; k < N; ++k) c[k] += o.c[k];
    return *this;
  }
  Taylor& operator-=(const Taylor& o) {
    for (int k = 0; k < N; ++k) c[k] -= o.c[k];
    return *this;
  }
  Taylor& operator*=(double s) {
    for (double& x : c) x *= s;
    return *this;
  }
  Taylor& operator+=(double s) {
    c[0] += s;
    return *this;
  }
  Taylor& operator-=(double s) {
    c[0] -= s;
    return *this;
  }
  Taylor operator-() const {
    Taylor r = *this;
    for (double& x : r.c) x = -x;
    return r;
  }

  // this += a * b
  void fma(const Taylor& a, const Taylor& b) {
    const auto& L = layout<D>;
    for (int p = 0; p < L.P; ++p) c[L.pk[p]] += a.c[L.pi[p]] * b.c[L.pj[p]];
  }
  // this += s * a * b
  void fma(double s, const Taylor& a, const Taylor& b) {
    const auto& L = layout<D>;
    for (int p = 0; p < L.P; ++p) c[L.pk[p]] += s * a.c[L.pi[p]] * b.c[L.pj[p]];
  }
  // this += s * a
  void axpy(double s, const Taylor& a) {
    for (int k = 0; k < N; ++k) c[k] += s * a.c[k];
  }
};

template <int D>
inline Taylor<D> operator*(const Taylor<D>& a, const Taylor<D>& b) {
  Taylor<D> r;
  r.fma(a, b);
  return r;
}
template <int D>
inline Taylor<D> operator+(Taylor<D> a, const Taylor<D>& b) { return a += b; }
template <int D>
inline Taylor<D> operator-(Taylor<D> a, const Taylor<D>& b) { return a -= b; }
template <int D>
inline Taylor<D> operator*(double s, Taylor<D> a) { return a *= s; }
template <int D>
inline Taylor<D> operator*(Taylor<D> a, double s) { return a *= s; }
template <int D>
inline Taylor<D> operator+(Taylor<D> a, double s) { return a += s; }
template <int D>
inline Taylor<D> operator+(double s, Taylor<D> a) { return a += s; }
template <int D>
inline Taylor<D> operator-(Taylor<D> a, double s) { return a -= s; }
template <int D>
inline Taylor<D> operator-(double s, const Taylor<D>& a) { return (-a) += s; }

// f(a) given the Taylor coefficients f^(n)(a0)/n! for n = 0..D.
template <int D>
Taylor<D> compose_series(const Taylor<D>& a, const std::array<double, D + 1>& coef) {
  Taylor<D> dev = a;
  dev.c[0] = 0.0;
  // Horner: (((c_D dev + c_{D-1}) dev + ...) dev + c_0
  Taylor<D> r(coef[D]);
  for (int n = D - 1; n >= 0; --n) {
    r = r * dev;
    r.c[0] += coef[n];
  }
  return r;
}

template <int D>
Taylor<D> inv(const Taylor<D>& a) {
  std::array<double, D + 1> k{};
  const double x = 1.0 / a.c[0];
  double p = x;
  for (int n = 0; n <= D; ++n) {
    k[n] = p;
    p *= -x;
  }
  return compose_series(a, k);
}

template <int D>
inline Taylor<D> operator/(const Taylor<D>& a, const Taylor<D>& b) { return a * inv(b); }
template <int D>
inline Taylor<D> operator/(const Taylor<D>& a, double s) { return a * (1.0 / s); }
template <int D>
inline Taylor<D> operator/(double s, const Taylor<D>& b) { return s * inv(b); }

template <int D>
Taylor<D> sin(const Taylor<D>& a) {
  std::array<double, D + 1> k{};
  const double s = std::sin(a.c[0]), co = std::cos(a.c[0]);
  double f = 1.0;
  for (int n = 0; n <= D; ++n) {
    if (n > 0) f *= n;
    const double d = (n % 4 == 0) ? s : (n % 4 == 1) ? co : (n % 4 == 2) ? -s : -co;
    k[n] = d / f;
  }
  return compose_series(a, k);
}

template <int D>
Taylor<D> cos(const Taylor<D>& a) {
  std::array<double, D + 1> k{};
  const double s = std::sin(a.c[0]), co = std::cos(a.c[0]);
  double f = 1.0;
  for (int n = 0; n <= D; ++n) {
    if (n > 0) f *= n;
    const double d = (n % 4 == 0) ? co : (n % 4 == 1) ? -s : (n % 4 == 2) ? -co : s;
    k[n] = d / f;
  }
  return compose_series(a, k);
}

template <int D>
Taylor<D> exp(const Taylor<D>& a) {
  std::array<double, D + 1> k{};
  const double e = std::exp(a.c[0]);
  double f = 1.0;
  for (int n = 0; n <= D; ++n) {
    if (n > 0) f *= n;
    k[n] = e / f;
  }
  return compose_series(a, k);
}

template <int D>
Taylor<D> sqrt(const Taylor<D>& a) {
  // generalized binomial series of x^(1/2) about a0
  std::array<double, D + 1> k{};
  const double x = a.c[0];
  double coef = 1.0;
  for (int n = 0; n <= D; ++n) {
    k[n] = coef * std::pow(x, 0.5 - n);
    coef *= (0.5 - n) / (n + 1);
  }
  return compose_series(a, k);
}

template <int D>
Taylor<D> log(const Taylor<D>& a) {
  std::array<double, D + 1> k{};
  const double x = a.c[0];
  k[0] = std::log(x);
  double p = 1.0 / x;
  for (int n = 1; n <= D; ++n) {
    k[n] = ((n % 2) ? 1.0 : -1.0) * p / n;
    p /= x;
  }
  return compose_series(a, k);
}

// Truncate or extend to another degree (coefficient order is shared).
template <int E, int D>
Taylor<E> recast(const Taylor<D>& a) {
  Taylor<E> r;
  constexpr int n = (Taylor<E>::N < Taylor<D>::N) ? Taylor<E>::N : Taylor<D>::N;
  for (int k = 0; k < n; ++k) r.c[k] = a.c[k];
  return r;
}

// p(x0 + dx(y)) where p is expanded about x0 in four variables and every dx_v
// has zero constant term.
template <int D>
struct MonomialPowers {
  std::array<Taylor<D>, Taylor<D>::N> m;
  explicit MonomialPowers(const std::array<Taylor<D>, 4>& dx) {
    const auto& L = layout<D>;
    m[0] = Taylor<D>(1.0);
    for (int k = 1; k < Taylor<D>::N; ++k) m[k] = m[L.parent[k]] * dx[L.pvar[k]];
  }
  Taylor<D> compose(const Taylor<D>& p) const {
    Taylor<D> r;
    for (int k = 0; k < Taylor<D>::N; ++k)
      if (p.c[k] != 0.0) r.axpy(p.c[k], m[k]);
    return r;
  }
};

// Scalar helpers so templated field code can use the same spelling for
// doubles and Taylor numbers.
inline double value_of(double x) { return x; }
template <int D>
inline double value_of(const Taylor<D>& x) { return x.c[0]; }

}  // namespace dixon::ad
