#include "dixon/local_jet.hpp"

namespace dixon {

namespace {

constexpr int K = 3;
using T3 = ad::Taylor<K>;
using G3 = std::array<std::array<std::array<T3, 4>, 4>, 4>;

// Keep only the monomials whose degree in z (variables 1..3) equals k.
T3 z_part(const T3& a, int k) {
  T3 r;
  const auto& L = ad::layout<K>;
  for (int m = 0; m < T3::N; ++m)
    if (L.exps[m][1] + L.exps[m][2] + L.exps[m][3] == k) r.c[m] = a.c[m];
  return r;
}

// z . d/dz, the Euler operator in the spatial variables.
T3 euler(const T3& a) {
  T3 r;
  const auto& L = ad::layout<K>;
  for (int m = 0; m < T3::N; ++m) r.c[m] = a.c[m] * (L.exps[m][1] + L.exps[m][2] + L.exps[m][3]);
  return r;
}

G3 compose_gamma(const G3& G, const std::array<T3, 4>& x, const Vec4& x0) {
  std::array<T3, 4> dx;
  for (int m = 0; m < 4; ++m) {
    dx[m] = x[m];
    dx[m].c[0] -= x0[m];
  }
  const ad::MonomialPowers<K> mp(dx);
  G3 out;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = b; c < 4; ++c) {
        out[a][b][c] = G[a][b][c].is_zero() ? T3() : mp.compose(G[a][b][c]);
        out[a][c][b] = out[a][b][c];
      }
  return out;
}

// Gamma^m_{ab} u^a w^b for Taylor vectors
std::array<T3, 4> gamma_uw(const G3& G, const std::array<T3, 4>& u, const std::array<T3, 4>& w) {
  std::array<T3, 4> r;
  for (int m = 0; m < 4; ++m)
    for (int a = 0; a < 4; ++a) {
      if (u[a].is_zero()) continue;
      for (int b = 0; b < 4; ++b) {
        if (G[m][a][b].is_zero() || w[b].is_zero()) continue;
        r[m].fma(G[m][a][b] * u[a], w[b]);
      }
    }
  return r;
}

using M3 = std::array<std::array<T3, 4>, 4>;

M3 mat_mul(const M3& a, const M3& b) {
  M3 c;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) {
      if (a[i][k].is_zero()) continue;
      for (int j = 0; j < 4; ++j) c[i][j].fma(a[i][k], b[k][j]);
    }
  return c;
}

// Inverse of a Taylor matrix by a Neumann series about its constant part.
M3 invert(const M3& A) {
  Mat4 a0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a0[i][j] = A[i][j].c[0];
  Mat4 i0;
  if (!invert4(a0, i0)) fail(ErrorCode::DegenerateFrame, "adapted metric is singular");
  M3 I0, D;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      I0[i][j] = T3(i0[i][j]);
      D[i][j] = A[i][j];
      D[i][j].c[0] = 0.0;
    }
  M3 step = mat_mul(I0, D);  // inv0 * D
  for (auto& row : step)
    for (auto& e : row) e *= -1.0;
  M3 sum = I0, term = I0;
  for (int n = 1; n <= K; ++n) {
    term = mat_mul(step, term);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) sum[i][j] += term[i][j];
  }
  return sum;
}

T2 to2(const T3& a, int max_degree = 2) {
  T2 r = ad::recast<2>(a);
  const auto& L = ad::layout<2>;
  for (int m = 0; m < T2::N; ++m)
    if (L.degree[m] > max_degree) r.c[m] = 0.0;
  return r;
}

}  // namespace

AdaptedPatch build_patch(const WorldlineFrame& f, std::size_t node) {
  if (!f.geodesic || !f.parallel_frame)
    fail(ErrorCode::UnsupportedWorldline, "adapted jets need a geodesic worldline with a parallel frame and Dixon vector");
  const FrameSample s = f.sample(node);
  G3 G;
  christoffel_taylor<K>(f.spec, s.x, G);

  // C(delta), its tangent and the spatial frame along C by Picard iteration in delta
  std::array<T3, 4> C, V;
  std::array<std::array<T3, 4>, 3> E;
  const T3 d = T3::variable(0, 0.0);
  for (int m = 0; m < 4; ++m) {
    C[m] = s.x[m] + s.xdot[m] * d;
    V[m] = T3(s.xdot[m]);
    for (int a = 0; a < 3; ++a) E[a][m] = T3(s.e[a + 1][m]);
  }
  for (int it = 0; it <= K; ++it) {
    const G3 Gc = compose_gamma(G, C, s.x);
    const auto acc = gamma_uw(Gc, V, V);
    std::array<T3, 4> Vn;
    for (int m = 0; m < 4; ++m) Vn[m] = s.xdot[m] - acc[m].integral(0);
    std::array<std::array<T3, 4>, 3> En;
    for (int a = 0; a < 3; ++a) {
      const auto t = gamma_uw(Gc, V, E[a]);
      for (int m = 0; m < 4; ++m) En[a][m] = s.e[a + 1][m] - t[m].integral(0);
    }
    for (int m = 0; m < 4; ++m) C[m] = s.x[m] + Vn[m].integral(0);
    V = Vn;
    E = En;
  }

  // x(delta, z): geodesics leaving C(delta) with initial tangent z^a E_a(delta)
  std::array<T3, 4> x;
  for (int m = 0; m < 4; ++m) {
    x[m] = C[m];
    for (int a = 0; a < 3; ++a) x[m] += T3::variable(a + 1, 0.0) * E[a][m];
  }
  for (int k = 2; k <= K; ++k) {
    const G3 Gx = compose_gamma(G, x, s.x);
    std::array<T3, 4> ex;
    for (int m = 0; m < 4; ++m) ex[m] = euler(x[m]);
    const auto rhs = gamma_uw(Gx, ex, ex);
    for (int m = 0; m < 4; ++m) x[m].axpy(-1.0 / (k * (k - 1)), z_part(rhs[m], k));
  }

  M3 J;
  for (int m = 0; m < 4; ++m)
    for (int A = 0; A < 4; ++A) J[m][A] = x[m].derivative(A);

  std::array<std::array<T3, 4>, 4> g;
  metric_components<T3>(f.spec, x, g);
  M3 gt;
  for (int A = 0; A < 4; ++A)
    for (int B = A; B < 4; ++B) {
      T3 acc;
      for (int m = 0; m < 4; ++m) {
        if (J[m][A].is_zero() || J[m][B].is_zero()) continue;
        acc.fma(g[m][m] * J[m][A], J[m][B]);
      }
      gt[A][B] = acc;
      gt[B][A] = acc;
    }
  const M3 gi = invert(gt);
  std::array<M3, 4> dg;  // dg[C][A][B] = d_C gt_{AB}
  for (int c = 0; c < 4; ++c)
    for (int A = 0; A < 4; ++A)
      for (int B = 0; B < 4; ++B) dg[c][A][B] = gt[A][B].derivative(c);

  AdaptedPatch p;
  p.node = node;
  p.sigma = f.sigma(node);
  p.frame = s;
  for (int m = 0; m < 4; ++m) {
    p.x[m] = to2(x[m]);
    for (int A = 0; A < 4; ++A) p.jac[m][A] = to2(J[m][A]);
  }
  for (int A = 0; A < 4; ++A)
    for (int B = 0; B < 4; ++B)
      for (int Cc = B; Cc < 4; ++Cc) {
        T3 acc;
        for (int D = 0; D < 4; ++D) {
          const T3 t = dg[B][D][Cc] + dg[Cc][D][B] - dg[D][B][Cc];
          if (t.is_zero()) continue;
          acc.fma(0.5, gi[A][D], t);
        }
        p.gamma[A][B][Cc] = to2(acc, 1);
        p.gamma[A][Cc][B] = p.gamma[A][B][Cc];
      }

  // transport to C along the radial geodesics: k Pibar_[k] = [z^a Gamma^l_{a A} Pibar_l]_[k]
  for (int n = 0; n < 4; ++n) {
    std::array<T2, 4> pb;
    for (int A = 0; A < 4; ++A) pb[A] = T2(n == A ? 1.0 : 0.0);
    for (int k = 1; k <= 2; ++k) {
      std::array<T2, 4> next = pb;
      for (int A = 0; A < 4; ++A) {
        T2 acc;
        for (int a = 1; a < 4; ++a) {
          T2 inner;
          for (int l = 0; l < 4; ++l)
            if (!p.gamma[l][a][A].is_zero() && !pb[l].is_zero()) inner.fma(p.gamma[l][a][A], pb[l]);
          acc.fma(T2::variable(a, 0.0), inner);
        }
        const auto& L = ad::layout<2>;
        for (int m = 0; m < T2::N; ++m)
          if (L.exps[m][1] + L.exps[m][2] + L.exps[m][3] == k) next[A].c[m] = acc.c[m] / k;
      }
      pb = next;
    }
    p.pibar[n] = pb;
  }
  return p;
}

AdaptedField covariant_derivative(const AdaptedPatch& p, const AdaptedField& psi) {
  const int r = psi.rank;
  AdaptedField out(r + 1);
  const std::size_t n = psi.c.size();
  std::vector<int> idx(static_cast<std::size_t>(r));
  for (int c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t t = k;
      for (int j = r - 1; j >= 0; --j) {
        idx[j] = static_cast<int>(t % 4);
        t /= 4;
      }
      T2 v = psi.c[k].derivative(c);
      for (int j = 0; j < r; ++j) {
        const int keep = idx[j];
        for (int D = 0; D < 4; ++D) {
          const T2& G = p.gamma[D][c][keep];
          if (G.is_zero()) continue;
          idx[j] = D;
          const T2& other = psi.c[flat_index(idx.data(), r)];
          if (!other.is_zero()) v.fma(-1.0, G, other);
        }
        idx[j] = keep;
      }
      out.c[static_cast<std::size_t>(c) * n + k] = v;
    }
  return out;
}

AdaptedField radial_derivative(const AdaptedPatch& p, const AdaptedField& psi) {
  const AdaptedField d = covariant_derivative(p, psi);
  AdaptedField out(psi.rank);
  const std::size_t n = psi.c.size();
  for (int a = 1; a < 4; ++a) {
    const T2 z = T2::variable(a, 0.0);
    for (std::size_t k = 0; k < n; ++k) out.c[k].fma(z, d.c[static_cast<std::size_t>(a) * n + k]);
  }
  return out;
}

AdaptedField radial_power(const AdaptedPatch& p, const AdaptedField& psi, int j) {
  if (j == 0) return psi;
  if (j == 1) return radial_derivative(p, psi);
  AdaptedField out(psi.rank);
  if (j >= 3) return out;
  const AdaptedField d2 = covariant_derivative(p, covariant_derivative(p, psi));
  const std::size_t n = psi.c.size();
  for (int a = 1; a < 4; ++a)
    for (int b = 1; b < 4; ++b) {
      const T2 zz = T2::variable(a, 0.0) * T2::variable(b, 0.0);
      const std::size_t base = (static_cast<std::size_t>(a) * 4 + static_cast<std::size_t>(b)) * n;
      for (std::size_t k = 0; k < n; ++k)
        if (d2.c[base + k].c[0] != 0.0) out.c[k].axpy(d2.c[base + k].c[0], zz);
    }
  return out;
}

}  // namespace dixon
