#pragma once

// Taylor expansions of geometric data in Dixon adapted coordinates
// y = (sigma - sigma_i, z^1, z^2, z^3) about a worldline sample C(sigma_i).
//
// Everything downstream (radial derivatives, the Dixon split, component
// extraction) only needs fields to second order in y, so the exported fields
// are Taylor<2>; the patch itself is built at third order.

#include <vector>

#include "dixon/taylor.hpp"
#include "dixon/worldline.hpp"

namespace dixon {

using T2 = ad::Taylor<2>;

struct AdaptedPatch {
  std::size_t node = 0;
  double sigma = 0.0;
  FrameSample frame;
  std::array<T2, 4> x;                       // chart coordinates x^mu(y)
  std::array<std::array<T2, 4>, 4> jac;      // jac[mu][A] = dx^mu / dy^A
  std::array<std::array<std::array<T2, 4>, 4>, 4> gamma;  // adapted Christoffels, valid to first order
  std::array<std::array<T2, 4>, 4> pibar;    // pibar[n][A]: transport to C, n a frame index at C
};

// Requires a geodesic worldline whose frame and Dixon vector are parallel along C.
AdaptedPatch build_patch(const WorldlineFrame& f, std::size_t node);

// A covariant tensor field in adapted components, indices flattened base 4
// with the first index most significant.
struct AdaptedField {
  int rank = 0;
  std::vector<T2> c;
  explicit AdaptedField(int r = 0) : rank(r), c(static_cast<std::size_t>(1) << (2 * r)) {}
};

// (nabla psi)_{c, rest}: the new derivative index is prepended.
AdaptedField covariant_derivative(const AdaptedPatch& p, const AdaptedField& psi);

// nabla_R psi with R = z^a d_a.
AdaptedField radial_derivative(const AdaptedPatch& p, const AdaptedField& psi);

// R^{a1} ... R^{aj} nabla_{a1} ... nabla_{aj} psi.  Fields are kept to second
// order in y, so j >= 3 gives zero.
AdaptedField radial_power(const AdaptedPatch& p, const AdaptedField& psi, int j);

inline std::size_t flat_index(const int* idx, int n) {
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) k = 4 * k + static_cast<std::size_t>(idx[i]);
  return k;
}

}  // namespace dixon
