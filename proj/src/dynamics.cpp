#include "dixon/dynamics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <ostream>
#include <random>

namespace dixon {

namespace {

struct Slots {
  int pair[4][4];
  int sp[4][4];  // spatial pair, indices 1..3
  Slots() {
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        const int idx[2] = {std::min(m, n), std::max(m, n)};
        pair[m][n] = mu_canon(2, idx);
        sp[m][n] = (m >= 1 && n >= 1) ? rho_canon(2, idx) : -1;
      }
  }
};

const Slots& slots() {
  static const Slots s;
  return s;
}

int slot2(int m, int n) { return slots().pair[m][n]; }
int slot3(int m, int n, int a) { return 10 + slots().pair[m][n] * 3 + a - 1; }
int slot4(int m, int n, int a, int b) { return 40 + slots().pair[m][n] * 6 + slots().sp[a][b]; }

using Mat = Eigen::MatrixXd;

// rows of xi^{mu(c a b)} = 0 on the 60 canonical order-two coordinates
Mat constraint_matrix() {
  Mat C = Mat::Zero(40, 60);
  int row = 0;
  for (int mu = 0; mu < 4; ++mu)
    for (int c = 1; c < 4; ++c)
      for (int a = c; a < 4; ++a)
        for (int b = a; b < 4; ++b) {
          C(row, slot4(mu, c, a, b) - 40) += 1.0 / 3.0;
          C(row, slot4(mu, a, b, c) - 40) += 1.0 / 3.0;
          C(row, slot4(mu, b, c, a) - 40) += 1.0 / 3.0;
          ++row;
        }
  return C;
}

Mat nullspace_projector(const Mat& C) {
  Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullV);
  const int r = static_cast<int>(svd.rank());
  const Mat V = svd.matrixV().leftCols(r);
  return Mat::Identity(C.cols(), C.cols()) - V * V.transpose();
}

const Mat& constraint_projector() {
  static const Mat P = nullspace_projector(constraint_matrix());
  return P;
}

const Mat& symmetry_projector() {
  static const Mat P = [] {
    Mat C = Mat::Zero(64, 60);
    C.topRows(40) = constraint_matrix();
    int row = 40;
    for (int mu = 0; mu < 4; ++mu)
      for (int a = 1; a < 4; ++a)
        for (int b = a; b < 4; ++b) C(row++, slot4(mu, 0, a, b) - 40) = 1.0;
    return nullspace_projector(C);
  }();
  return P;
}

void apply_projector(const Mat& P, QuadrupoleState& s) {
  Eigen::Map<Eigen::VectorXd> v(s.xi4.data(), 60);
  const Eigen::VectorXd w = P * v;
  v = w;
}

int rank_of(const Mat& A) {
  if (A.rows() == 0) return 0;
  Eigen::FullPivLU<Mat> lu(A);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}

void check_constraint(const QuadrupoleState& s, double tol) {
  const double r = constraint_residual(s);
  if (r > tol * std::max(1.0, s.max_abs()))
    fail(ErrorCode::ConstraintViolated, "quadrupole violates xi^{mu(abc)} = 0 (residual " + std::to_string(r) + ")");
}

// Transform index `slot` of an n-index tensor (4^n entries, first index most
// significant) with M: out[..A..] = sum_m M[A][m] t[..m..].
std::vector<double> transform_slot(const std::vector<double>& t, int n, int slot, const Mat4& M) {
  std::size_t stride = 1;
  for (int q = slot + 1; q < n; ++q) stride *= 4;
  std::vector<double> out(t.size(), 0.0);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const int A = static_cast<int>((k / stride) % 4);
    const std::size_t base = k - static_cast<std::size_t>(A) * stride;
    double acc = 0.0;
    for (int m = 0; m < 4; ++m) acc += M[A][m] * t[base + static_cast<std::size_t>(m) * stride];
    out[k] = acc;
  }
  return out;
}

Mat4 vectors_to_matrix(const std::array<Vec4, 4>& e) {  // M[mu][A] = e_A^mu
  Mat4 M{};
  for (int A = 0; A < 4; ++A)
    for (int m = 0; m < 4; ++m) M[m][A] = e[A][m];
  return M;
}

Mat4 covectors_to_matrix(const std::array<Vec4, 4>& th) {  // M[A][mu] = theta^A_mu
  Mat4 M{};
  for (int A = 0; A < 4; ++A) M[A] = th[A];
  return M;
}

// Full frame tensors from the canonical state
using F2 = std::array<std::array<double, 4>, 4>;
using F3 = std::array<F2, 4>;
using F4 = std::array<F3, 4>;

void unpack(const QuadrupoleState& s, F2& X2, F3& X3, F4& X4) {
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n) {
      X2[m][n] = s.x2(m, n);
      for (int a = 0; a < 4; ++a) {
        X3[m][n][a] = a == 0 ? 0.0 : s.x3(m, n, a);
        for (int b = 0; b < 4; ++b) X4[m][n][a][b] = (a == 0 || b == 0) ? 0.0 : s.x4(m, n, a, b);
      }
    }
}

template <class T>
std::vector<double> flatten(const T& t, int n) {
  std::vector<double> v(static_cast<std::size_t>(1) << (2 * n));
  const double* p = reinterpret_cast<const double*>(t.data());
  std::copy(p, p + v.size(), v.begin());
  return v;
}

// frame tensor -> chart tensor (all indices contravariant)
std::vector<double> frame_to_chart(std::vector<double> t, int n, const Mat4& E) {
  for (int q = 0; q < n; ++q) t = transform_slot(t, n, q, E);
  return t;
}

std::vector<double> chart_to_frame(std::vector<double> t, int n, const Mat4& Th) {
  for (int q = 0; q < n; ++q) t = transform_slot(t, n, q, Th);
  return t;
}

std::size_t ix(int a, int b) { return static_cast<std::size_t>(a * 4 + b); }
std::size_t ix(int a, int b, int c) { return static_cast<std::size_t>((a * 4 + b) * 4 + c); }
std::size_t ix(int a, int b, int c, int d) { return static_cast<std::size_t>(((a * 4 + b) * 4 + c) * 4 + d); }

}  // namespace

// ---------------------------------------------------------------- state

double QuadrupoleState::x2(int m, int n) const { return xi2[slot2(m, n)]; }
double QuadrupoleState::x3(int m, int n, int a) const { return xi3[slot3(m, n, a) - 10]; }
double QuadrupoleState::x4(int m, int n, int a, int b) const { return xi4[slot4(m, n, a, b) - 40]; }
void QuadrupoleState::set2(int m, int n, double v) { xi2[slot2(m, n)] = v; }
void QuadrupoleState::set3(int m, int n, int a, double v) { xi3[slot3(m, n, a) - 10] = v; }
void QuadrupoleState::set4(int m, int n, int a, int b, double v) { xi4[slot4(m, n, a, b) - 40] = v; }

std::array<double, QuadrupoleState::kSize> QuadrupoleState::flat() const {
  std::array<double, kSize> v{};
  std::copy(xi2.begin(), xi2.end(), v.begin());
  std::copy(xi3.begin(), xi3.end(), v.begin() + 10);
  std::copy(xi4.begin(), xi4.end(), v.begin() + 40);
  return v;
}

QuadrupoleState QuadrupoleState::from_flat(const double* v) {
  QuadrupoleState s;
  std::copy(v, v + 10, s.xi2.begin());
  std::copy(v + 10, v + 40, s.xi3.begin());
  std::copy(v + 40, v + 100, s.xi4.begin());
  return s;
}

double QuadrupoleState::max_abs() const {
  double m = 0.0;
  for (double x : flat()) m = std::max(m, std::abs(x));
  return m;
}

bool is_evolved_slot(int k) {
  if (k < 0 || k >= QuadrupoleState::kSize) fail(ErrorCode::InvalidArgument, "slot index out of range");
  const int pair = k < 10 ? k : k < 40 ? (k - 10) / 3 : (k - 40) / 6;
  return mu_tuple(2, pair)[0] == 0;
}

double constraint_residual(const QuadrupoleState& s) {
  double r = 0.0;
  for (int mu = 0; mu < 4; ++mu)
    for (int c = 1; c < 4; ++c)
      for (int a = c; a < 4; ++a)
        for (int b = a; b < 4; ++b)
          r = std::max(r, std::abs(s.x4(mu, c, a, b) + s.x4(mu, a, b, c) + s.x4(mu, b, c, a)) / 3.0);
  return r;
}

double closure_consistency(const QuadrupoleState& s) {
  double r = 0.0;
  for (int c = 1; c < 4; ++c)
    for (int a = c; a < 4; ++a)
      for (int b = a; b < 4; ++b) r = std::max(r, std::abs(s.x3(c, a, b) + s.x3(a, b, c) + s.x3(b, c, a)) / 3.0);
  return r;
}

void project_constraint(QuadrupoleState& s) { apply_projector(constraint_projector(), s); }
void project_unprojected_symmetry(QuadrupoleState& s) { apply_projector(symmetry_projector(), s); }

// Counting in the raw symmetric space: order one has a free index in 0..3,
// order two a symmetric pair in 0..3; the frame pair mu nu is symmetric.
QuadrupoleState random_consistent_state(unsigned long long seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-scale, scale);
  QuadrupoleState s;
  for (double& v : s.xi2) v = U(rng);
  for (double& v : s.xi3) v = U(rng);
  for (double& v : s.xi4) v = U(rng);
  project_constraint(s);
  QuadrupoleState t = s;
  for (int a = 1; a < 4; ++a)
    for (int b = a; b < 4; ++b)
      for (int c = 1; c < 4; ++c) t.set3(a, b, c, s.x3(a, b, c) - (s.x3(a, b, c) + s.x3(b, c, a) + s.x3(c, a, b)) / 3.0);
  return t;
}

CountingAudit counting_audit() {
  const int n1 = 4, n2 = 10;
  const int raw = 10 + 10 * n1 + 10 * n2;
  auto r1 = [&](int pair, int rho) { return 10 + pair * n1 + rho; };
  auto r2 = [&](int pair, int r, int s) {
    const int idx[2] = {std::min(r, s), std::max(r, s)};
    return 50 + pair * n2 + mu_canon(2, idx);
  };
  auto pr = [](int m, int n) { return slot2(m, n); };

  Mat O = Mat::Zero(50, raw);  // N_rho xi^{mu nu rho} = 0 and N_rho xi^{mu nu rho sigma} = 0; N = theta^0
  int row = 0;
  for (int p = 0; p < 10; ++p) O(row++, r1(p, 0)) = 1.0;
  for (int p = 0; p < 10; ++p)
    for (int s = 0; s < 4; ++s) O(row++, r2(p, 0, s)) = 1.0;

  Mat C = Mat::Zero(40, raw);
  row = 0;
  for (int mu = 0; mu < 4; ++mu)
    for (int c = 1; c < 4; ++c)
      for (int a = c; a < 4; ++a)
        for (int b = a; b < 4; ++b) {
          C(row, r2(pr(mu, c), a, b)) += 1.0 / 3.0;
          C(row, r2(pr(mu, a), b, c)) += 1.0 / 3.0;
          C(row, r2(pr(mu, b), c, a)) += 1.0 / 3.0;
          ++row;
        }

  Mat Sym = Mat::Zero(80, raw);  // xi^{mu(nu rho sigma)} = 0 over all index values
  row = 0;
  for (int mu = 0; mu < 4; ++mu)
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b)
        for (int c = b; c < 4; ++c) {
          const int t[3] = {a, b, c};
          const int perm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
          for (const auto& p : perm) Sym(row, r2(pr(mu, t[p[0]]), t[p[1]], t[p[2]])) += 1.0 / 6.0;
          ++row;
        }

  Mat Sel = Mat::Zero(40, raw);  // slots whose pair contains 0
  row = 0;
  for (int p = 0; p < 10; ++p) {
    if (mu_tuple(2, p)[0] != 0) continue;
    Sel(row++, p) = 1.0;
    for (int a = 1; a < 4; ++a) Sel(row++, r1(p, a)) = 1.0;
    for (int a = 1; a < 4; ++a)
      for (int b = a; b < 4; ++b) Sel(row++, r2(p, a, b)) = 1.0;
  }

  auto stack = [](const Mat& A, const Mat& B) {
    Mat M(A.rows() + B.rows(), A.cols());
    M << A, B;
    return M;
  };
  // rank of `rows` restricted to the null space of `base`
  auto restricted_rank = [&](const Mat& base, const Mat& rows) {
    Eigen::FullPivLU<Mat> lu(base);
    lu.setThreshold(1e-10);
    const Mat K = lu.kernel();
    return rank_of(rows * K);
  };

  CountingAudit a;
  a.raw = raw;
  a.orthogonality_rank = rank_of(O);
  a.orthogonal = raw - a.orthogonality_rank;
  a.constraint_rank = rank_of(stack(O, C)) - a.orthogonality_rank;
  a.dof = a.orthogonal - a.constraint_rank;
  a.selector_rank = restricted_rank(O, Sel);
  a.free = a.dof - a.selector_rank;
  a.selector_rank_on_surface = restricted_rank(stack(O, C), Sel);
  a.symmetry_rank = rank_of(stack(O, Sym)) - a.orthogonality_rank;
  a.symmetry_conflict = a.symmetry_rank - a.constraint_rank;
  return a;
}

Mat4 spatial_projector(const Vec4& xdot, const Vec4& N) {
  Mat4 p = identity4();
  for (int r = 0; r < 4; ++r)
    for (int a = 0; a < 4; ++a) p[r][a] -= xdot[r] * N[a];
  return p;
}

FrameCurvature frame_curvature(const GeometryJet& jet, const FrameSample& fr) {
  if (jet.depth < JetDepth::NablaRiemann) fail(ErrorCode::DepthUnavailable, "frame curvature needs nabla Riemann");
  const Mat4 E = transpose(vectors_to_matrix(fr.e));  // E[A][mu] = e_A^mu, for covariant slots
  const Mat4 Th = covectors_to_matrix(fr.theta);
  std::vector<double> r(256), d(1024);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int e = 0; e < 4; ++e) {
          r[ix(a, b, c, e)] = -jet.riemann[a][b][c][e];
          for (int f = 0; f < 4; ++f) d[ix(f, a, b, c) * 4 + static_cast<std::size_t>(e)] = -jet.nabla_riemann[f][a][b][c][e];
        }
  r = transform_slot(r, 4, 0, Th);
  for (int q = 1; q < 4; ++q) r = transform_slot(r, 4, q, E);
  d = transform_slot(d, 5, 0, E);
  d = transform_slot(d, 5, 1, Th);
  for (int q = 2; q < 5; ++q) d = transform_slot(d, 5, q, E);
  FrameCurvature fc;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int e = 0; e < 4; ++e) {
          fc.R[a][b][c][e] = r[ix(a, b, c, e)];
          for (int f = 0; f < 4; ++f) fc.dR[f][a][b][c][e] = d[ix(f, a, b, c) * 4 + static_cast<std::size_t>(e)];
        }
  return fc;
}

// ---------------------------------------------------------------- right-hand sides

QuadrupoleState rhs_adapted(const QuadrupoleState& s, const FrameCurvature& fc, const QuadrupoleState& free_rates,
                            const RhsOptions& opt) {
  check_constraint(s, opt.constraint_tol);
  const auto& R = fc.R;
  const auto& dR = fc.dR;
  F2 X2;
  F3 X3;
  F4 X4;
  unpack(s, X2, X3, X4);

  QuadrupoleState out;
  for (int k = 0; k < QuadrupoleState::kSize; ++k)
    if (!is_evolved_slot(k)) out.data()[k] = free_rates.flat()[static_cast<std::size_t>(k)];

  // D4[mu][nu][b][c]: full frame derivative of the order-two components
  F4 D4{};
  for (int m = 1; m < 4; ++m)
    for (int n = 1; n < 4; ++n)
      for (int b = 1; b < 4; ++b)
        for (int c = 1; c < 4; ++c) D4[m][n][b][c] = free_rates.x4(m, n, b, c);
  for (int mu = 0; mu < 4; ++mu)
    for (int b = 1; b < 4; ++b)
      for (int c = b; c < 4; ++c) {
        double v;
        if (opt.rotation) {
          const Mat3& W = *opt.rotation;
          v = 0.0;
          for (int e = 1; e < 4; ++e) {
            v += W[b - 1][e - 1] * X4[mu][0][e][c] + W[c - 1][e - 1] * X4[mu][0][b][e];
            if (mu > 0) v += W[mu - 1][e - 1] * X4[e][0][b][c];
          }
        } else {
          v = -(X3[mu][b][c] + X3[mu][c][b]);
        }
        out.set4(mu, 0, b, c, v);
        D4[mu][0][b][c] = D4[0][mu][b][c] = D4[mu][0][c][b] = D4[0][mu][c][b] = v;
      }

  for (int mu = 0; mu < 4; ++mu)
    for (int a = 1; a < 4; ++a) {
      double v = -X2[mu][a];
      for (int b = 1; b < 4; ++b)
        for (int c = 1; c < 4; ++c) {
          v += 0.5 * X4[mu][0][b][c] * R[a][b][0][c];
          for (int d = 1; d < 4; ++d) v += X4[mu][d][b][c] * R[a][b][d][c] / 6.0;
        }
      for (int rho = 0; rho < 4; ++rho)
        for (int c = 1; c < 4; ++c) {
          v += X4[rho][0][a][c] * R[mu][rho][0][c];
          for (int b = 1; b < 4; ++b) v += 0.5 * X4[rho][c][b][a] * R[mu][rho][c][b];
        }
      out.set3(mu, 0, a, v);
    }

  for (int mu = 0; mu < 4; ++mu) {
    double v = 0.0;
    for (int rho = 0; rho < 4; ++rho)
      for (int b = 1; b < 4; ++b) {
        v += X3[rho][0][b] * R[mu][rho][0][b];
        for (int a = 1; a < 4; ++a) v += 0.5 * X3[rho][a][b] * R[mu][rho][a][b];
      }
    for (int b = 1; b < 4; ++b)
      for (int c = 1; c < 4; ++c) {
        v += 0.5 * (D4[mu][0][b][c] * R[0][b][0][c] + X4[mu][0][b][c] * dR[0][0][b][0][c]);
        for (int rho = 0; rho < 4; ++rho) v -= 0.5 * X4[rho][0][b][c] * dR[c][mu][rho][0][b];
        for (int a = 1; a < 4; ++a) {
          v += (D4[mu][a][b][c] * R[0][b][a][c] + X4[mu][a][b][c] * dR[0][0][b][a][c]) / 6.0;
          for (int rho = 0; rho < 4; ++rho) v -= X4[rho][a][b][c] * dR[c][mu][rho][a][b] / 3.0;
        }
      }
    out.set2(mu, 0, v);
  }
  return out;
}

QuadrupoleState rhs_tensorial(const QuadrupoleState& s, const GeometryJet& jet, const FrameSample& fr, const Mat4& pi,
                              const QuadrupoleState& free_rates, const RhsOptions& opt) {
  if (opt.rotation) fail(ErrorCode::InvalidArgument, "the tensorial form implements the divergence-free law only");
  if (jet.depth < JetDepth::NablaRiemann) fail(ErrorCode::DepthUnavailable, "tensorial right-hand side needs nabla Riemann");
  check_constraint(s, opt.constraint_tol);
  const Mat4 E = vectors_to_matrix(fr.e);
  const Mat4 Th = covectors_to_matrix(fr.theta);
  const Vec4& u = fr.xdot;
  const Vec4& N = fr.N;

  F2 f2;
  F3 f3;
  F4 f4;
  unpack(s, f2, f3, f4);
  const auto X2 = frame_to_chart(flatten(f2, 2), 2, E);
  const auto X3 = frame_to_chart(flatten(f3, 3), 3, E);
  const auto X4 = frame_to_chart(flatten(f4, 4), 4, E);
  F4 g4{};
  for (int m = 1; m < 4; ++m)
    for (int n = 1; n < 4; ++n)
      for (int a = 1; a < 4; ++a)
        for (int b = 1; b < 4; ++b) g4[m][n][a][b] = free_rates.x4(m, n, a, b);
  const auto F4c = frame_to_chart(flatten(g4, 4), 4, E);

  auto R = [&](int a, int b, int c, int d) { return -jet.riemann[a][b][c][d]; };
  auto dR = [&](int e, int a, int b, int c, int d) { return -jet.nabla_riemann[e][a][b][c][d]; };

  // A = N_nu u^beta + pi/2, B = N_nu u^beta / 2 + pi/6, Cm = -N_nu u^beta / 2 - pi/3, indexed [beta][nu]
  Mat4 A{}, B{}, Cm{}, P6{};
  for (int b = 0; b < 4; ++b)
    for (int n = 0; n < 4; ++n) {
      const double nu = N[n] * u[b];
      A[b][n] = nu + 0.5 * pi[b][n];
      B[b][n] = 0.5 * nu + pi[b][n] / 6.0;
      Cm[b][n] = -0.5 * nu - pi[b][n] / 3.0;
      P6[b][n] = pi[b][n] / 6.0;
    }

  // L4^{mu rho sigma} = -2 pi^rho_b pi^sigma_a X3^{mu (b a)}
  std::vector<double> L4(64, 0.0);
  for (int m = 0; m < 4; ++m)
    for (int r = 0; r < 4; ++r)
      for (int sg = 0; sg < 4; ++sg) {
        double v = 0.0;
        for (int b = 0; b < 4; ++b)
          for (int a = 0; a < 4; ++a) v -= pi[r][b] * pi[sg][a] * (X3[ix(m, b, a)] + X3[ix(m, a, b)]);
        L4[ix(m, r, sg)] = v;
      }

  // L3^{mu rho} = pi^rho_alpha ( ... )
  std::vector<double> inner3(16, 0.0);
  for (int m = 0; m < 4; ++m)
    for (int al = 0; al < 4; ++al) {
      double v = -X2[ix(m, al)];
      for (int n = 0; n < 4; ++n)
        for (int l = 0; l < 4; ++l)
          for (int sg = 0; sg < 4; ++sg)
            for (int b = 0; b < 4; ++b) {
              const double w = 0.5 * N[n] * u[b] + P6[b][n];
              if (w != 0.0) v += w * X4[ix(m, n, l, sg)] * R(al, l, b, sg);
              if (A[b][n] != 0.0) v += A[b][n] * X4[ix(l, n, sg, al)] * R(m, l, b, sg);
            }
      inner3[ix(m, al)] = v;
    }
  std::vector<double> L3(16, 0.0);
  for (int m = 0; m < 4; ++m)
    for (int r = 0; r < 4; ++r)
      for (int al = 0; al < 4; ++al) L3[ix(m, r)] += pi[r][al] * inner3[ix(m, al)];

  // nabla_u X4 from the N-contracted rates and the free spatial rates
  std::vector<double> NL4(16, 0.0);  // N_k L4^{k l s}
  for (int l = 0; l < 4; ++l)
    for (int sg = 0; sg < 4; ++sg)
      for (int k = 0; k < 4; ++k) NL4[ix(l, sg)] += N[k] * L4[ix(k, l, sg)];
  std::vector<double> DX4(256, 0.0);
  for (int m = 0; m < 4; ++m)
    for (int n = 0; n < 4; ++n)
      for (int l = 0; l < 4; ++l)
        for (int sg = 0; sg < 4; ++sg) {
          double v = u[n] * L4[ix(m, l, sg)] + u[m] * L4[ix(n, l, sg)] - u[m] * u[n] * NL4[ix(l, sg)];
          for (int k = 0; k < 4; ++k)
            for (int t = 0; t < 4; ++t) v += pi[m][k] * pi[n][t] * F4c[ix(k, t, l, sg)];
          DX4[ix(m, n, l, sg)] = v;
        }

  // u^e nabla_e R^z_{l b s} contracted with N_z
  std::vector<double> NdR(64, 0.0), NR(64, 0.0);
  for (int l = 0; l < 4; ++l)
    for (int b = 0; b < 4; ++b)
      for (int sg = 0; sg < 4; ++sg) {
        double vr = 0.0, vd = 0.0;
        for (int z = 0; z < 4; ++z) {
          vr += N[z] * R(z, l, b, sg);
          for (int e = 0; e < 4; ++e) vd += N[z] * u[e] * dR(e, z, l, b, sg);
        }
        NR[ix(l, b, sg)] = vr;
        NdR[ix(l, b, sg)] = vd;
      }

  Vec4 L2{};
  for (int m = 0; m < 4; ++m) {
    double v = 0.0;
    for (int b = 0; b < 4; ++b)
      for (int n = 0; n < 4; ++n) {
        if (A[b][n] != 0.0)
          for (int r = 0; r < 4; ++r)
            for (int l = 0; l < 4; ++l) v += A[b][n] * X3[ix(r, n, l)] * R(m, r, b, l);
        if (B[b][n] != 0.0)
          for (int l = 0; l < 4; ++l)
            for (int sg = 0; sg < 4; ++sg)
              v += B[b][n] * (DX4[ix(m, n, l, sg)] * NR[ix(l, b, sg)] + X4[ix(m, n, l, sg)] * NdR[ix(l, b, sg)]);
        if (Cm[b][n] != 0.0)
          for (int r = 0; r < 4; ++r)
            for (int l = 0; l < 4; ++l)
              for (int sg = 0; sg < 4; ++sg) v += Cm[b][n] * X4[ix(r, n, l, sg)] * dR(l, m, r, b, sg);
      }
    L2[m] = v;
  }

  const auto l4 = chart_to_frame(L4, 3, Th);
  const auto l3 = chart_to_frame(L3, 2, Th);
  QuadrupoleState out;
  for (int k = 0; k < QuadrupoleState::kSize; ++k)
    if (!is_evolved_slot(k)) out.data()[k] = free_rates.flat()[static_cast<std::size_t>(k)];
  for (int M = 0; M < 4; ++M) {
    double v = 0.0;
    for (int m = 0; m < 4; ++m) v += Th[M][m] * L2[m];
    out.set2(M, 0, v);
    for (int a = 1; a < 4; ++a) {
      out.set3(M, 0, a, l3[ix(M, a)]);
      for (int b = a; b < 4; ++b) out.set4(M, 0, a, b, l4[ix(M, a, b)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------- evolution

DixonComponents QuadrupoleTrajectory::components() const {
  DixonComponents J = DixonComponents::zeros(2, 2, frame.C.s);
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::copy(states[i].xi2.begin(), states[i].xi2.end(), J.data[0].begin() + static_cast<std::ptrdiff_t>(i * 10));
    std::copy(states[i].xi3.begin(), states[i].xi3.end(), J.data[1].begin() + static_cast<std::ptrdiff_t>(i * 30));
    std::copy(states[i].xi4.begin(), states[i].xi4.end(), J.data[2].begin() + static_cast<std::ptrdiff_t>(i * 60));
  }
  return J;
}

void QuadrupoleTrajectory::write_csv(std::ostream& os) const {
  os << "sigma,x0,x1,x2,x3,constraint";
  for (int p = 0; p < 10; ++p) {
    const auto m = mu_tuple(2, p);
    os << ",xi2_" << m[0] << m[1];
  }
  for (int p = 0; p < 10; ++p) {
    const auto m = mu_tuple(2, p);
    for (int a = 1; a < 4; ++a) os << ",xi3_" << m[0] << m[1] << '_' << a;
  }
  for (int p = 0; p < 10; ++p) {
    const auto m = mu_tuple(2, p);
    for (int q = 0; q < 6; ++q) {
      const auto r = rho_tuple(2, q);
      os << ",xi4_" << m[0] << m[1] << '_' << r[0] << r[1];
    }
  }
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < states.size(); ++i) {
    os << frame.C.s[i];
    for (double v : frame.C.x[i]) os << ',' << v;
    os << ',' << (i < constraint_log.size() ? constraint_log[i] : 0.0);
    for (double v : states[i].flat()) os << ',' << v;
    os << '\n';
  }
}

namespace {

struct JointState {
  std::array<Vec4, 5> g;  // x, v, e1, e2, e3
  std::array<double, QuadrupoleState::kSize> q;
};

JointState joint_axpy(const JointState& y, double a, const JointState& d) {
  JointState r = y;
  for (int k = 0; k < 5; ++k) r.g[k] = axpy(a, d.g[k], y.g[k]);
  for (int k = 0; k < QuadrupoleState::kSize; ++k) r.q[k] += a * d.q[k];
  return r;
}

FrameSample frame_of(const JointState& y) {
  FrameSample fr;
  fr.x = y.g[0];
  fr.xdot = y.g[1];
  fr.e = {y.g[1], y.g[2], y.g[3], y.g[4]};
  Mat4 Em = vectors_to_matrix(fr.e), inv;
  if (!invert4(Em, inv)) fail(ErrorCode::DegenerateFrame, "evolved frame became singular");
  for (int A = 0; A < 4; ++A) fr.theta[A] = inv[A];
  fr.N = fr.theta[0];
  return fr;
}

}  // namespace

QuadrupoleTrajectory evolve(const QuadrupoleState& s0, const WorldlineFrame& frame, const ConstitutiveClosure& closure,
                            const EvolveOptions& opt) {
  if (!frame.geodesic || !frame.parallel_frame)
    fail(ErrorCode::NonGeodesicWorldline, "quadrupole evolution needs a geodesic worldline with a parallel frame");
  if (frame.size() < 2) fail(ErrorCode::InvalidArgument, "worldline frame has fewer than two samples");
  if (!(opt.h > 0.0)) fail(ErrorCode::InvalidArgument, "step must be positive");
  if (closure.policy == ConstitutiveClosure::Policy::Callback && !closure.callback)
    fail(ErrorCode::InvalidArgument, "callback closure without a callback");
  check_constraint(s0, opt.constraint_tol);

  const MetricSpec& spec = frame.spec;
  const double s_begin = frame.sigma(0), span = frame.sigma(frame.size() - 1) - s_begin;
  const int n = std::max(1, static_cast<int>(std::lround(span / opt.h)));
  const double h = span / n;
  const Mat& P = opt.law == EvolveOptions::Law::SymmetryConstraint ? symmetry_projector() : constraint_projector();
  RhsOptions ro;
  ro.constraint_tol = opt.project ? 1e300 : opt.constraint_tol;
  if (opt.law == EvolveOptions::Law::Rotational) ro.rotation = &opt.omega;

  auto fill_free = [&](double sig, QuadrupoleState& s, QuadrupoleState& rates) {
    if (closure.policy != ConstitutiveClosure::Policy::Callback) return;
    QuadrupoleState values = s;
    closure.callback(sig, s, values, rates);
    const auto v = values.flat();
    for (int k = 0; k < QuadrupoleState::kSize; ++k)
      if (!is_evolved_slot(k)) s.data()[k] = v[static_cast<std::size_t>(k)];
  };

  auto rhs = [&](double sig, JointState& y) {
    Tensor3 G;
    christoffel(spec, y.g[0], G);
    JointState d{};
    d.g[0] = y.g[1];
    for (int k = 1; k < 5; ++k)
      for (int m = 0; m < 4; ++m) {
        double acc = 0.0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) acc += G[m][a][b] * y.g[1][a] * y.g[k][b];
        d.g[k][m] = -acc;
      }
    QuadrupoleState s = QuadrupoleState::from_flat(y.q.data()), rates;
    fill_free(sig, s, rates);
    if (opt.project) apply_projector(P, s);
    y.q = s.flat();
    const FrameSample fr = frame_of(y);
    const GeometryJet jet = geometry_jet(spec, fr.x, JetDepth::NablaRiemann);
    d.q = rhs_adapted(s, frame_curvature(jet, fr), rates, ro).flat();
    return d;
  };

  const FrameSample f0 = frame.sample(0);
  JointState y{{f0.x, f0.xdot, f0.e[1], f0.e[2], f0.e[3]}, s0.flat()};
  QuadrupoleTrajectory out;
  WorldlineFrame& wf = out.frame;
  wf.spec = spec;
  wf.choice = frame.choice;
  wf.geodesic = true;
  wf.parallel_frame = true;
  auto record = [&](double sig, double residual) {
    QuadrupoleState s = QuadrupoleState::from_flat(y.q.data());
    const FrameSample fr = frame_of(y);
    wf.C.s.push_back(sig);
    wf.C.x.push_back(fr.x);
    wf.C.v.push_back(fr.xdot);
    wf.N.push_back(fr.N);
    wf.e.push_back(fr.e);
    wf.theta.push_back(fr.theta);
    out.states.push_back(s);
    out.constraint_log.push_back(residual);
  };
  {
    QuadrupoleState s = s0, dummy;
    fill_free(s_begin, s, dummy);
    if (opt.project) apply_projector(P, s);
    y.q = s.flat();
  }
  record(s_begin, constraint_residual(s0));
  for (int k = 1; k <= n; ++k) {
    const double sig = s_begin + (k - 1) * h;
    JointState y1 = y;
    const JointState k1 = rhs(sig, y1);
    JointState y2 = joint_axpy(y1, 0.5 * h, k1);
    const JointState k2 = rhs(sig + 0.5 * h, y2);
    JointState y3 = joint_axpy(y1, 0.5 * h, k2);
    const JointState k3 = rhs(sig + 0.5 * h, y3);
    JointState y4 = joint_axpy(y1, h, k3);
    const JointState k4 = rhs(sig + h, y4);
    if (!spec.contains(y4.g[0])) fail(ErrorCode::LeftDomain, "worldline left the domain");
    y = y1;
    for (int q = 0; q < 5; ++q)
      for (int m = 0; m < 4; ++m) y.g[q][m] += h / 6.0 * (k1.g[q][m] + 2 * k2.g[q][m] + 2 * k3.g[q][m] + k4.g[q][m]);
    for (int q = 0; q < QuadrupoleState::kSize; ++q) y.q[q] += h / 6.0 * (k1.q[q] + 2 * k2.q[q] + 2 * k3.q[q] + k4.q[q]);
    if (!spec.contains(y.g[0])) fail(ErrorCode::LeftDomain, "worldline left the domain");

    const double sig1 = k == n ? s_begin + span : s_begin + k * h;
    QuadrupoleState s = QuadrupoleState::from_flat(y.q.data()), dummy;
    const double residual = constraint_residual(s);
    if (residual > opt.drift_limit * std::max(1.0, s.max_abs()))
      fail(ErrorCode::ConstraintDrift, "constraint drifted to " + std::to_string(residual) + " at sigma " +
                                            std::to_string(sig1));
    fill_free(sig1, s, dummy);
    if (opt.project) apply_projector(P, s);
    y.q = s.flat();
    record(sig1, residual);
  }
  return out;
}

// ---------------------------------------------------------------- dipoles

DipoleRates mpd_rhs(const DipoleState& d, const GeometryJet& jet, const Vec4& xdot, const Vec4& acceleration,
                    double tol) {
  if (jet.depth < JetDepth::Riemann) fail(ErrorCode::DepthUnavailable, "MPD equations need the Riemann tensor");
  if (max_abs(acceleration) > tol) fail(ErrorCode::NonGeodesicWorldline, "MPD comparison needs a geodesic worldline");
  DipoleRates r;
  r.dX = -1.0 * d.P;
  for (int m = 0; m < 4; ++m) {
    double v = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int p = 0; p < 4; ++p)
        for (int k = 0; k < 4; ++k) {
          const double Rp = -jet.riemann[m][n][p][k];
          v += Rp * xdot[n] * (0.5 * d.S[k][p] + xdot[p] * d.X[k]);
        }
    r.dP[m] = v;
  }
  return r;
}

DipoleTrajectory mpd_evolve(const MetricSpec& spec, const Vec4& x0, const Vec4& u0, const DipoleState& d0,
                            double sigma_span, double h) {
  if (!(sigma_span > 0.0) || !(h > 0.0)) fail(ErrorCode::InvalidArgument, "span and step must be positive");
  struct Y {
    Vec4 x, v;
    DipoleState d;
  };
  auto rhs = [&](const Y& y) {
    const GeometryJet jet = geometry_jet(spec, y.x, JetDepth::Riemann);
    const DipoleRates cov = mpd_rhs(y.d, jet, y.v);
    const Tensor3& G = jet.gamma;
    auto conn = [&](const Vec4& w) {
      Vec4 t{};
      for (int m = 0; m < 4; ++m)
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) t[m] += G[m][a][b] * y.v[a] * w[b];
      return t;
    };
    Y d;
    d.x = y.v;
    d.v = -1.0 * conn(y.v);
    d.d.m = cov.dm;
    d.d.X = cov.dX - conn(y.d.X);
    d.d.P = cov.dP - conn(y.d.P);
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        double v = 0.0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) v -= G[m][a][b] * y.v[a] * y.d.S[b][n] + G[n][a][b] * y.v[a] * y.d.S[m][b];
        d.d.S[m][n] = v;
      }
    return d;
  };
  auto add = [](const Y& y, double a, const Y& d) {
    Y r = y;
    r.x = axpy(a, d.x, y.x);
    r.v = axpy(a, d.v, y.v);
    r.d.m += a * d.d.m;
    r.d.X = axpy(a, d.d.X, y.d.X);
    r.d.P = axpy(a, d.d.P, y.d.P);
    for (int m = 0; m < 4; ++m) r.d.S[m] = axpy(a, d.d.S[m], y.d.S[m]);
    return r;
  };
  const int n = std::max(1, static_cast<int>(std::lround(sigma_span / h)));
  const double hh = sigma_span / n;
  Y y{x0, u0, d0};
  DipoleTrajectory out;
  auto record = [&](double s) {
    out.s.push_back(s);
    out.x.push_back(y.x);
    out.v.push_back(y.v);
    out.states.push_back(y.d);
  };
  record(0.0);
  for (int k = 1; k <= n; ++k) {
    const Y k1 = rhs(y);
    const Y k2 = rhs(add(y, 0.5 * hh, k1));
    const Y k3 = rhs(add(y, 0.5 * hh, k2));
    const Y k4 = rhs(add(y, hh, k3));
    Y acc = add(y, hh / 6.0, k1);
    acc = add(acc, hh / 3.0, k2);
    acc = add(acc, hh / 3.0, k3);
    y = add(acc, hh / 6.0, k4);
    if (!spec.contains(y.x)) fail(ErrorCode::LeftDomain, "worldline left the domain");
    record(k == n ? sigma_span : k * hh);
  }
  return out;
}

QuadrupoleState embed_dipole(const DipoleState& d, const FrameSample& fr) {
  QuadrupoleState s;
  s.set2(0, 0, -2.0 * d.m);
  for (int a = 1; a < 4; ++a) {
    s.set2(0, a, dot(fr.theta[a], d.P));
    s.set3(0, 0, a, dot(fr.theta[a], d.X));
    for (int b = 1; b < 4; ++b) {
      double Sab = 0.0;
      for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) Sab += fr.theta[a][m] * fr.theta[b][n] * d.S[m][n];
      s.set3(b, 0, a, 0.5 * Sab);
    }
  }
  return s;
}

DipoleState dipole_from_state(const QuadrupoleState& s, const FrameSample& fr) {
  DipoleState d;
  d.m = -0.5 * s.x2(0, 0);
  for (int a = 1; a < 4; ++a) {
    d.P = axpy(s.x2(0, a), fr.e[a], d.P);
    d.X = axpy(s.x3(0, 0, a), fr.e[a], d.X);
    for (int b = 1; b < 4; ++b) {
      const double Sab = 2.0 * s.x3(b, 0, a);
      for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) d.S[m][n] += Sab * fr.e[a][m] * fr.e[b][n];
    }
  }
  return d;
}

// ---------------------------------------------------------------- divergence probes

namespace {

struct ProbeParams {
  Vec4 a{};
  Mat4 b{}, w{}, p{};
  double t_lo = 0.0, t_hi = 1.0;
};

template <class T>
T window(const T& t, double lo, double hi) {
  const double c = 0.5 * (lo + hi), r = 0.5 * (hi - lo);
  const T u = (t - c) * (1.0 / r);
  if (std::abs(ad::value_of(u)) >= 1.0) return T(0.0);
  using std::exp;
  return exp(1.0 - 1.0 / (1.0 - u * u));
}

}  // namespace

DivergenceReport divergence_residual(const DixonComponents& J, const WorldlineFrame& f, int n_tests, unsigned seed,
                                     double window_lo, double window_hi) {
  if (J.rank != 2) fail(ErrorCode::InvalidArgument, "divergence probes need a rank-2 multipole");
  if (n_tests < 1) fail(ErrorCode::InvalidArgument, "need at least one test covector");
  if (!(0.0 <= window_lo && window_lo < window_hi && window_hi <= 1.0))
    fail(ErrorCode::InvalidArgument, "probe window must satisfy 0 <= lo < hi <= 1");
  double t0 = f.C.x.front()[0], t1 = f.C.x.back()[0];
  if (t1 < t0) std::swap(t0, t1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0), W(0.1, 0.5), Ph(0.0, 6.283185307179586);
  DivergenceReport rep;
  for (int t = 0; t < n_tests; ++t) {
    ProbeParams pp;
    for (int m = 0; m < 4; ++m) {
      pp.a[m] = U(rng);
      for (int l = 0; l < 4; ++l) {
        pp.b[m][l] = U(rng);
        pp.w[m][l] = W(rng);
        pp.p[m][l] = Ph(rng);
      }
    }
    pp.t_lo = t0 + window_lo * (t1 - t0);
    pp.t_hi = t0 + window_hi * (t1 - t0);
    auto phi = make_chart_field(1, [pp](const auto& x, auto* out) {
      using T = std::decay_t<decltype(x[0])>;
      using std::sin;
      const T wdw = window(x[0], pp.t_lo, pp.t_hi);
      for (int m = 0; m < 4; ++m) {
        T acc(pp.a[m]);
        for (int l = 0; l < 4; ++l) acc += pp.b[m][l] * sin(pp.w[m][l] * x[l] + pp.p[m][l]);
        out[m] = wdw * acc;
      }
    });
    const ApplyResult r = apply_gradient(J, f, *phi);
    const double v = -r.value;
    rep.values.push_back(v);
    rep.magnitudes.push_back(r.magnitude);
    rep.max_abs = std::max(rep.max_abs, std::abs(v));
    rep.max_normalized = std::max(rep.max_normalized, std::abs(v) / std::max(r.magnitude, 1e-300));
  }
  return rep;
}

ConjectureReport dixon_conjecture_check(const QuadrupoleState& s0, const WorldlineFrame& f, ConjectureMode mode,
                                        const ConjectureOptions& opt) {
  if (opt.h.size() < 2) fail(ErrorCode::InvalidArgument, "conjecture check needs at least two step sizes");
  ConjectureReport rep;
  rep.mode = mode;
  rep.h = opt.h;
  if (mode == ConjectureMode::SymmetryConstraint) rep.conflict_dimension = counting_audit().symmetry_conflict;
  for (double h : opt.h) {
    EvolveOptions eo;
    eo.h = h;
    const auto ref = evolve(s0, f, {}, eo);
    rep.reference.push_back(divergence_residual(ref.components(), ref.frame, opt.n_tests, opt.seed).max_normalized);
    if (mode == ConjectureMode::RotationalDynamics) {
      eo.law = EvolveOptions::Law::Rotational;
      eo.omega = opt.omega;
    } else {
      eo.law = EvolveOptions::Law::SymmetryConstraint;
    }
    const auto alt = evolve(s0, f, {}, eo);
    rep.residual.push_back(divergence_residual(alt.components(), alt.frame, opt.n_tests, opt.seed).max_normalized);
  }
  rep.plateau = rep.residual.back();
  rep.converged = rep.reference.back();
  rep.converges = true;
  for (std::size_t i = 0; i + 1 < rep.residual.size(); ++i)
    if (rep.residual[i] < 8.0 * rep.residual[i + 1]) rep.converges = false;
  return rep;
}

}  // namespace dixon
