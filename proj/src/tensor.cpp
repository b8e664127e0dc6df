#include "dixon/tensor.hpp"

#include <utility>

#include "dixon/errors.hpp"

namespace dixon {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::DepthUnavailable: return "DepthUnavailable";
    case ErrorCode::LeftDomain: return "LeftDomain";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::NullTangent: return "NullTangent";
    case ErrorCode::DegenerateFrame: return "DegenerateFrame";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
    case ErrorCode::OutsideTube: return "OutsideTube";
    case ErrorCode::AmbiguousFold: return "AmbiguousFold";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::UnsupportedWorldline: return "UnsupportedWorldline";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ConstraintViolated: return "ConstraintViolated";
    case ErrorCode::ConstraintDrift: return "ConstraintDrift";
    case ErrorCode::NonGeodesicWorldline: return "NonGeodesicWorldline";
    case ErrorCode::QuadratureNotConverged: return "QuadratureNotConverged";
    case ErrorCode::SlopeTooShallow: return "SlopeTooShallow";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

bool invert4(const Mat4& a, Mat4& inv) {
  double m[4][8];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      m[i][j] = a[i][j];
      m[i][j + 4] = (i == j) ? 1.0 : 0.0;
    }
  double scale = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) scale = std::fmax(scale, std::fabs(a[i][j]));
  if (scale == 0.0) return false;
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    if (std::fabs(m[piv][col]) < 1e-300 || std::fabs(m[piv][col]) < 1e-14 * scale) return false;
    if (piv != col)
      for (int j = 0; j < 8; ++j) std::swap(m[piv][j], m[col][j]);
    const double d = 1.0 / m[col][col];
    for (int j = 0; j < 8; ++j) m[col][j] *= d;
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      if (f == 0.0) continue;
      for (int j = 0; j < 8; ++j) m[r][j] -= f * m[col][j];
    }
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) inv[i][j] = m[i][j + 4];
  return true;
}

double det4(const Mat4& a) {
  double m[4][4];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i][j] = a[i][j];
  double det = 1.0;
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    if (m[piv][col] == 0.0) return 0.0;
    if (piv != col) {
      for (int j = 0; j < 4; ++j) std::swap(m[piv][j], m[col][j]);
      det = -det;
    }
    det *= m[col][col];
    for (int r = col + 1; r < 4; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int j = col; j < 4; ++j) m[r][j] -= f * m[col][j];
    }
  }
  return det;
}

}  // namespace dixon
