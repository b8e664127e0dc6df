#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace dixon {

using Vec4 = std::array<double, 4>;
using Mat4 = std::array<Vec4, 4>;
using Tensor3 = std::array<Mat4, 4>;
using Tensor4 = std::array<Tensor3, 4>;
using Tensor5 = std::array<Tensor4, 4>;

inline Mat4 identity4() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat4 matmul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) {
      const double aik = a[i][k];
      if (aik == 0.0) continue;
      for (int j = 0; j < 4; ++j) c[i][j] += aik * b[k][j];
    }
  return c;
}

inline Vec4 matvec(const Mat4& a, const Vec4& v) {
  Vec4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) r[i] += a[i][j] * v[j];
  return r;
}

// r_j = sum_i w_i a[i][j]
inline Vec4 vecmat(const Vec4& w, const Mat4& a) {
  Vec4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) r[j] += w[i] * a[i][j];
  return r;
}

inline Mat4 transpose(const Mat4& a) {
  Mat4 t{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) t[i][j] = a[j][i];
  return t;
}

inline double dot(const Vec4& a, const Vec4& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
}

inline double metric_dot(const Mat4& g, const Vec4& a, const Vec4& b) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s += g[i][j] * a[i] * b[j];
  return s;
}

inline Vec4 lower(const Mat4& g, const Vec4& v) { return matvec(g, v); }

inline Vec4 axpy(double a, const Vec4& x, const Vec4& y) {
  return {a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2], a * x[3] + y[3]};
}

inline Vec4 operator+(const Vec4& a, const Vec4& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]}; }
inline Vec4 operator-(const Vec4& a, const Vec4& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]}; }
inline Vec4 operator*(double s, const Vec4& a) { return {s * a[0], s * a[1], s * a[2], s * a[3]}; }

inline double max_abs(const Vec4& v) {
  double m = 0.0;
  for (double x : v) m = std::fmax(m, std::fabs(x));
  return m;
}

inline double max_abs(const Mat4& a) {
  double m = 0.0;
  for (const auto& row : a) m = std::fmax(m, max_abs(row));
  return m;
}

inline double max_abs_diff(const Mat4& a, const Mat4& b) {
  double m = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m = std::fmax(m, std::fabs(a[i][j] - b[i][j]));
  return m;
}

// Inverse of a general 4x4 matrix by Gauss-Jordan with partial pivoting.
// Returns false if the matrix is numerically singular.
bool invert4(const Mat4& a, Mat4& inv);
double det4(const Mat4& a);

}  // namespace dixon
