#include "dixon/moments.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace dixon {

namespace {

struct Rule {
  std::vector<double> x, w;
};

template <unsigned N>
Rule make_rule() {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& a = G::abscissa();
  const auto& w = G::weights();
  Rule r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) {
      r.x.push_back(0.0);
      r.w.push_back(w[i]);
      continue;
    }
    r.x.push_back(-a[i]);
    r.w.push_back(w[i]);
    r.x.push_back(a[i]);
    r.w.push_back(w[i]);
  }
  return r;
}

const Rule& gauss_rule(int n) {
  static const Rule r8 = make_rule<8>(), r12 = make_rule<12>(), r16 = make_rule<16>(), r20 = make_rule<20>(),
                    r24 = make_rule<24>(), r32 = make_rule<32>(), r40 = make_rule<40>(), r48 = make_rule<48>(),
                    r64 = make_rule<64>();
  switch (n) {
    case 8: return r8;
    case 12: return r12;
    case 16: return r16;
    case 20: return r20;
    case 24: return r24;
    case 32: return r32;
    case 40: return r40;
    case 48: return r48;
    case 64: return r64;
    default: fail(ErrorCode::InvalidArgument, "Gauss-Legendre node count must be one of 8 12 16 20 24 32 40 48 64");
  }
}

// Nodes and weights of the tensor rule on an axis-aligned box.
struct BoxRule {
  std::vector<std::array<double, 3>> z;
  std::vector<double> w;
};

BoxRule box_rule(const std::array<std::array<double, 2>, 3>& box, int n) {
  const Rule& r = gauss_rule(n);
  std::array<std::vector<double>, 3> xs, ws;
  for (int a = 0; a < 3; ++a) {
    const double mid = 0.5 * (box[a][0] + box[a][1]), half = 0.5 * (box[a][1] - box[a][0]);
    for (std::size_t i = 0; i < r.x.size(); ++i) {
      xs[a].push_back(mid + half * r.x[i]);
      ws[a].push_back(half * r.w[i]);
    }
  }
  BoxRule b;
  const std::size_t m = r.x.size();
  b.z.reserve(m * m * m);
  b.w.reserve(m * m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) {
        b.z.push_back({xs[0][i], xs[1][j], xs[2][k]});
        b.w.push_back(ws[0][i] * ws[1][j] * ws[2][k]);
      }
  return b;
}

std::size_t pow4(int r) { return static_cast<std::size_t>(1) << (2 * r); }

// Full component list of a canonical symmetric tensor.
std::vector<double> expand_canonical(int rank, const std::vector<double>& canon) {
  std::vector<double> full(pow4(rank));
  for (std::size_t q = 0; q < full.size(); ++q) {
    int idx[2] = {0, 0};
    std::size_t t = q;
    for (int s = rank - 1; s >= 0; --s) {
      idx[s] = static_cast<int>(t % 4);
      t /= 4;
    }
    std::sort(idx, idx + rank);
    full[q] = canon[static_cast<std::size_t>(mu_canon(rank, idx))];
  }
  return full;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Components of a tensor with n indices in the basis vectors B[A] (one per index).
std::vector<double> in_basis(const std::vector<double>& chart, int n, const std::array<Vec4, 4>& B) {
  std::vector<double> cur = chart;
  for (int slot = 0; slot < n; ++slot) {
    std::vector<double> next(cur.size(), 0.0);
    const std::size_t stride = pow4(n - 1 - slot);
    for (std::size_t q = 0; q < cur.size(); ++q) {
      const int mu = static_cast<int>((q / stride) % 4);
      const double v = cur[q];
      if (v == 0.0) continue;
      const std::size_t base = q - static_cast<std::size_t>(mu) * stride;
      for (int A = 0; A < 4; ++A) next[base + static_cast<std::size_t>(A) * stride] += v * B[A][mu];
    }
    cur.swap(next);
  }
  return cur;
}

}  // namespace

BodyField BodyField::gaussian(int rank, std::vector<double> tensor, const std::array<double, 3>& width,
                              const std::array<double, 3>& center, double total) {
  BodyField b;
  b.rank = rank;
  b.tensor = std::move(tensor);
  b.width = width;
  b.center = center;
  b.total = total;
  b.validate();
  return b;
}

void BodyField::validate() const {
  if (rank < 0 || rank > 2) fail(ErrorCode::InvalidArgument, "body rank must be 0, 1 or 2");
  if (static_cast<int>(tensor.size()) != n_mu(rank))
    fail(ErrorCode::InvalidArgument, "body tensor needs " + std::to_string(n_mu(rank)) + " canonical components");
  for (double w : width)
    if (!(w > 0.0)) fail(ErrorCode::InvalidArgument, "body widths must be positive");
  if (!(cutoff > 0.0)) fail(ErrorCode::InvalidArgument, "body cutoff must be positive");
  if (!(eps > 0.0)) fail(ErrorCode::InvalidArgument, "squeeze parameter must be positive");
}

std::array<double, 3> BodyField::center_at(double sigma) const {
  return {center[0] + velocity[0] * sigma, center[1] + velocity[1] * sigma, center[2] + velocity[2] * sigma};
}

std::array<std::array<double, 2>, 3> BodyField::support(double sigma) const {
  const auto c = center_at(sigma);
  std::array<std::array<double, 2>, 3> box;
  for (int a = 0; a < 3; ++a) box[a] = {eps * (c[a] - cutoff * width[a]), eps * (c[a] + cutoff * width[a])};
  return box;
}

double BodyField::support_radius(double sigma) const {
  const auto box = support(sigma);
  double r2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double m = std::max(std::abs(box[a][0]), std::abs(box[a][1]));
    r2 += m * m;
  }
  return std::sqrt(r2);
}

double BodyField::profile(double sigma, const std::array<double, 3>& z) const {
  const auto c = center_at(sigma);
  double norm = 1.0, q = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double u = (z[a] / eps - c[a]) / width[a];
    if (std::abs(u) > cutoff) return 0.0;
    q += u * u;
    norm *= width[a] * std::sqrt(2.0 * M_PI) * std::erf(cutoff / std::sqrt(2.0));
  }
  return total / (norm * eps * eps * eps) * std::exp(-0.5 * q);
}

void BodyField::value(double sigma, const std::array<double, 3>& z, double* out) const {
  const double p = profile(sigma, z);
  const auto full = expand_canonical(rank, tensor);
  for (std::size_t q = 0; q < full.size(); ++q) out[q] = p * full[q];
}

std::vector<double> BodyField::chart_value(const WorldlineFrame& f, const Vec4& x, const TubeOptions& tube) const {
  const AdaptedPoint ap = adapted_coords(f, x, tube);
  std::vector<double> frame_comp(pow4(rank));
  value(ap.sigma, ap.z, frame_comp.data());
  // Pibar maps vectors at x to C(sigma); its inverse carries the frame out to x.
  Mat4 inv;
  if (!invert4(pibar_field(f, x, tube), inv)) fail(ErrorCode::DegenerateFrame, "singular transport to the worldline");
  const FrameSample fr = f.at(ap.sigma);
  std::array<Vec4, 4> ex{};
  for (int A = 0; A < 4; ++A) ex[A] = matvec(inv, fr.e[A]);
  // U^{mu..} = U^{A..} e_A^mu: apply the transpose basis slot by slot
  std::array<Vec4, 4> T{};
  for (int mu = 0; mu < 4; ++mu)
    for (int A = 0; A < 4; ++A) T[mu][A] = ex[A][mu];
  return in_basis(frame_comp, rank, T);
}

BodyField squeeze(const BodyField& U, double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) fail(ErrorCode::InvalidArgument, "squeeze parameter must lie in (0, 1]");
  BodyField out = U;
  out.eps = U.eps * eps;
  return out;
}

std::vector<double> moment_integral(const BodyField& U, const WorldlineFrame& f, double sigma, int k,
                                    const MomentOptions& opt) {
  U.validate();
  if (k < 0 || k > 2) fail(ErrorCode::UnsupportedOrder, "moments are available through order two");
  if (sigma < f.C.s_begin() || sigma > f.C.s_end())
    fail(ErrorCode::OutsideTube, "sigma " + num(sigma) + " outside the worldline range");
  if (U.support_radius(sigma) > opt.tube.tube_radius)
    fail(ErrorCode::OutsideTube, "body support radius " + num(U.support_radius(sigma)) + " exceeds the tube radius");
  const int nr = n_rho(k);
  std::vector<std::vector<int>> rho(static_cast<std::size_t>(nr));
  for (int c = 0; c < nr; ++c) rho[static_cast<std::size_t>(c)] = rho_tuple(k, c);
  const auto box = U.support(sigma);

  auto scalar_moments = [&](int n, std::vector<double>& abs_out) {
    const BoxRule b = box_rule(box, n);
    std::vector<double> m(static_cast<std::size_t>(nr), 0.0);
    abs_out.assign(static_cast<std::size_t>(nr), 0.0);
    for (std::size_t q = 0; q < b.z.size(); ++q) {
      const double p = b.w[q] * U.profile(sigma, b.z[q]);
      if (p == 0.0) continue;
      for (int c = 0; c < nr; ++c) {
        double v = p;
        for (int a : rho[static_cast<std::size_t>(c)]) v *= b.z[q][a - 1];
        m[static_cast<std::size_t>(c)] += v;
        abs_out[static_cast<std::size_t>(c)] += std::abs(v);
      }
    }
    return m;
  };

  std::vector<double> scale;
  const std::vector<double> m = scalar_moments(opt.nodes, scale);
  if (opt.check_nodes > 0) {
    std::vector<double> unused;
    const std::vector<double> m2 = scalar_moments(opt.check_nodes, unused);
    const double s = *std::max_element(scale.begin(), scale.end());
    for (int c = 0; c < nr; ++c)
      if (std::abs(m[static_cast<std::size_t>(c)] - m2[static_cast<std::size_t>(c)]) > opt.tol * s)
        fail(ErrorCode::QuadratureNotConverged,
             "moment of order " + std::to_string(k) + " changes by " +
                 num(std::abs(m[static_cast<std::size_t>(c)] - m2[static_cast<std::size_t>(c)]) / s) +
                 " (relative) under refinement");
  }
  const double sign = (k % 2) ? -1.0 : 1.0;
  const int nm = n_mu(U.rank);
  std::vector<double> out(static_cast<std::size_t>(nm * nr));
  for (int mc = 0; mc < nm; ++mc)
    for (int c = 0; c < nr; ++c)
      out[static_cast<std::size_t>(mc * nr + c)] =
          sign * U.tensor[static_cast<std::size_t>(mc)] * m[static_cast<std::size_t>(c)];
  return out;
}

DixonComponents moment_components(const BodyField& U, const WorldlineFrame& f, int max_order,
                                  const MomentOptions& opt) {
  if (max_order < 0 || max_order > 2) fail(ErrorCode::UnsupportedOrder, "moments are available through order two");
  DixonComponents J = DixonComponents::zeros(U.rank, max_order, f.C.s);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int k = 0; k <= max_order; ++k) {
      const std::vector<double> m = moment_integral(U, f, f.sigma(i), k, opt);
      std::copy(m.begin(), m.end(), J.data[k].begin() + static_cast<std::ptrdiff_t>(i * J.block(k)));
    }
  return J;
}

std::vector<std::shared_ptr<const ChartField>> expansion_battery(int rank, int n, unsigned seed, double k_min,
                                                                 double k_max) {
  if (rank < 0 || rank > 2) fail(ErrorCode::InvalidArgument, "test tensor rank must be 0, 1 or 2");
  if (n < 1) fail(ErrorCode::InvalidArgument, "need at least one test tensor");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0), K(k_min, k_max), Ph(0.0, 2.0 * M_PI);
  std::vector<std::shared_ptr<const ChartField>> out;
  const std::size_t nc = pow4(rank);
  for (int t = 0; t < n; ++t) {
    struct Params {
      std::vector<double> a;
      std::vector<std::array<double, 12>> blk;  // b, k, phase per chart coordinate
    } P;
    for (std::size_t c = 0; c < nc; ++c) {
      P.a.push_back(U(rng));
      std::array<double, 12> q{};
      for (int l = 0; l < 4; ++l) {
        q[3 * l] = U(rng);
        q[3 * l + 1] = K(rng);
        q[3 * l + 2] = Ph(rng);
      }
      P.blk.push_back(q);
    }
    out.push_back(make_chart_field(rank, [P, nc](const auto& x, auto* o) {
      using std::sin;
      using T = std::decay_t<decltype(x[0])>;
      for (std::size_t c = 0; c < nc; ++c) {
        T acc(P.a[c]);
        for (int l = 0; l < 4; ++l) acc += P.blk[c][3 * l] * sin(P.blk[c][3 * l + 1] * x[l] + P.blk[c][3 * l + 2]);
        o[c] = acc;
      }
    }));
  }
  return out;
}

std::vector<ExpansionReport> verify_expansion(const BodyField& U, const WorldlineFrame& f,
                                              const std::vector<std::shared_ptr<const ChartField>>& battery,
                                              const std::vector<double>& eps_ladder, const std::vector<int>& orders,
                                              const ExpansionOptions& opt) {
  U.validate();
  if (battery.empty()) fail(ErrorCode::InvalidArgument, "empty test battery");
  if (eps_ladder.empty()) fail(ErrorCode::InvalidArgument, "empty eps ladder");
  if (opt.sigma_nodes < 3 || opt.sigma_nodes % 2 == 0)
    fail(ErrorCode::InvalidArgument, "sigma node count must be odd and at least 3");
  for (const auto& phi : battery)
    if (phi->rank() != U.rank) fail(ErrorCode::InvalidArgument, "test tensor rank differs from the body rank");
  for (int N : orders)
    if (N < 0 || N > 2) fail(ErrorCode::UnsupportedOrder, "the moment series is available through order two");
  const int r = U.rank;
  const std::size_t nc = pow4(r), nt = battery.size(), ne = eps_ladder.size();

  std::vector<double> sig(static_cast<std::size_t>(opt.sigma_nodes));
  const double s0 = f.C.s_begin(), s1 = f.C.s_end();
  for (int j = 0; j < opt.sigma_nodes; ++j)
    sig[static_cast<std::size_t>(j)] = s0 + (s1 - s0) * j / (opt.sigma_nodes - 1);
  const std::vector<double> W = simpson_weights(sig);

  // brute[t][e], terms[t][k] (the series coefficient of eps^k), absolute scale[t]
  std::vector<std::vector<double>> brute(nt, std::vector<double>(ne, 0.0));
  std::vector<std::array<double, 3>> terms(nt, {0.0, 0.0, 0.0});
  std::vector<double> scale(nt, 0.0);
  MomentOptions mo;
  mo.nodes = opt.z_nodes;
  mo.tube = opt.tube;
  // The series needs the moments of the unsqueezed body; only squeezed copies must fit in the tube.
  mo.tube.tube_radius = std::numeric_limits<double>::infinity();

  std::vector<double> phi_x(nc);
  for (std::size_t j = 0; j < sig.size(); ++j) {
    const FrameSample fr = f.at(sig[j]);
    std::array<Vec4, 4> E{};
    for (int A = 0; A < 4; ++A) E[A] = fr.e[A];

    std::array<std::vector<double>, 3> moments;
    for (int k = 0; k <= 2; ++k) moments[static_cast<std::size_t>(k)] = moment_integral(U, f, sig[j], k, mo);
    for (std::size_t t = 0; t < nt; ++t) {
      const auto D = chart_covariant_jets(f.spec, *battery[t], fr.x, 2);
      for (int k = 0; k <= 2; ++k) {
        const std::vector<double>& m = moments[static_cast<std::size_t>(k)];
        const std::vector<double> F = in_basis(D[k], k + r, E);
        double sum = 0.0, abs_sum = 0.0;
        const std::size_t nrho = static_cast<std::size_t>(1) << (2 * k);
        for (std::size_t qr = 0; qr < nrho; ++qr) {
          int rho[2] = {0, 0};
          std::size_t tq = qr;
          bool spatial = true;
          for (int s = k - 1; s >= 0; --s) {
            rho[s] = static_cast<int>(tq % 4);
            tq /= 4;
            if (rho[s] == 0) spatial = false;
          }
          if (!spatial) continue;
          std::sort(rho, rho + k);
          const int rc = rho_canon(k, rho);
          for (std::size_t qm = 0; qm < nc; ++qm) {
            int mu[2] = {0, 0};
            std::size_t tm = qm;
            for (int s = r - 1; s >= 0; --s) {
              mu[s] = static_cast<int>(tm % 4);
              tm /= 4;
            }
            std::sort(mu, mu + r);
            const double xi = m[static_cast<std::size_t>(mu_canon(r, mu) * n_rho(k) + rc)];
            const double v = xi * F[qr * nc + qm];
            sum += v;
            abs_sum += std::abs(v);
          }
        }
        const double fact = (k == 2) ? 2.0 : 1.0;
        const double sign = (k % 2) ? -1.0 : 1.0;
        terms[t][static_cast<std::size_t>(k)] += W[j] * sign * sum / fact;
        scale[t] += std::abs(W[j]) * abs_sum / fact;
      }
    }

    for (std::size_t e = 0; e < ne; ++e) {
      const BodyField Ue = squeeze(U, eps_ladder[e]);
      if (Ue.support_radius(sig[j]) > opt.tube.tube_radius)
        fail(ErrorCode::OutsideTube, "squeezed body at eps " + num(eps_ladder[e]) + " leaves the tube");
      const BoxRule b = box_rule(Ue.support(sig[j]), opt.z_nodes);
      std::vector<double> u(nc);
      for (std::size_t q = 0; q < b.z.size(); ++q) {
        const double p = Ue.profile(sig[j], b.z[q]);
        if (p == 0.0) continue;
        Ue.value(sig[j], b.z[q], u.data());
        Vec4 V{};
        for (int a = 1; a < 4; ++a) V = axpy(b.z[q][a - 1], fr.e[a], V);
        const GeodesicEnd g = shoot(f.spec, fr.x, V, 1.0, opt.shoot_steps, true);
        std::array<Vec4, 4> Ex{};
        for (int A = 0; A < 4; ++A) Ex[A] = matvec(g.Pi, fr.e[A]);
        for (std::size_t t = 0; t < nt; ++t) {
          std::fill(phi_x.begin(), phi_x.end(), 0.0);
          battery[t]->eval(g.x, phi_x.data());
          const std::vector<double> phiA = in_basis(phi_x, r, Ex);
          double s = 0.0;
          for (std::size_t c = 0; c < nc; ++c) s += u[c] * phiA[c];
          brute[t][e] += W[j] * b.w[q] * s;
        }
      }
    }
  }

  std::vector<ExpansionReport> reports;
  for (int N : orders) {
    ExpansionReport rep;
    rep.order = N;
    rep.eps = eps_ladder;
    rep.brute = brute;
    rep.scale = scale;
    rep.series.assign(nt, std::vector<double>(ne, 0.0));
    rep.error.assign(ne, 0.0);
    rep.slope = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> rel(nt, std::vector<double>(ne));
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t e = 0; e < ne; ++e) {
        double s = 0.0;
        for (int k = 0; k <= N; ++k) s += std::pow(eps_ladder[e], k) * terms[t][static_cast<std::size_t>(k)];
        rep.series[t][e] = s;
        rel[t][e] = std::abs(brute[t][e] - s) / std::max(scale[t], 1e-300);
        rep.error[e] = std::max(rep.error[e], rel[t][e]);
      }
    bool any = false;
    for (std::size_t t = 0; t < nt; ++t) {
      double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
      int n = 0;
      for (std::size_t e = 0; e < ne; ++e) {
        if (rel[t][e] <= opt.floor) continue;
        const double lx = std::log(eps_ladder[e]), ly = std::log(rel[t][e]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
      }
      if (n < 2) {
        rep.slopes.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const double sl = (n * sxy - sx * sy) / (n * sxx - sx * sx);
      rep.slopes.push_back(sl);
      rep.slope = std::min(rep.slope, sl);
      any = true;
    }
    rep.at_floor = !any;
    if (rep.at_floor) rep.slope = std::numeric_limits<double>::quiet_NaN();
    rep.passed = rep.at_floor || rep.slope >= N + 1 - opt.slope_margin;
    reports.push_back(std::move(rep));
  }
  if (opt.throw_on_shallow)
    for (const auto& rep : reports)
      if (!rep.passed)
        fail(ErrorCode::SlopeTooShallow, "order " + std::to_string(rep.order) + " error slope " + num(rep.slope) +
                                             " below " + num(rep.order + 1 - opt.slope_margin));
  return reports;
}

ExpansionReport verify_expansion(const BodyField& U, const WorldlineFrame& f,
                                 const std::vector<std::shared_ptr<const ChartField>>& battery,
                                 const std::vector<double>& eps_ladder, int order, const ExpansionOptions& opt) {
  return verify_expansion(U, f, battery, eps_ladder, std::vector<int>{order}, opt).front();
}

}  // namespace dixon
