#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

namespace optosqz {

using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec4 = Eigen::Vector4d;

/// Passive rotation of one quadrature pair, [[cos a, sin a], [-sin a, cos a]].
inline Mat2 rotation2(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat2 r;
  r << c, s, -s, c;
  return r;
}

template <class Derived>
double max_asymmetry(const Eigen::MatrixBase<Derived>& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

template <class Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return typename Derived::PlainObject(0.5 * (m + m.transpose()));
}

/// Symplectic eigenvalues of a two-mode covariance matrix ordered (X1, Y1, X2, Y2),
/// under [X, Y] = 2i (vacuum has both eigenvalues equal to 1). Ascending order.
inline std::array<double, 2> symplectic_eigenvalues(const Mat4& v) {
  const double det_a = v.topLeftCorner<2, 2>().determinant();
  const double det_b = v.bottomRightCorner<2, 2>().determinant();
  const double det_c = v.topRightCorner<2, 2>().determinant();
  const double seralian = det_a + det_b + 2.0 * det_c;
  const double det_v = v.determinant();
  const double disc = std::max(0.0, seralian * seralian - 4.0 * det_v);
  const double hi = 0.5 * (seralian + std::sqrt(disc));
  // The smaller root suffers cancellation when the two differ by many orders of
  // magnitude; det V = (nu_- nu_+)^2 recovers it accurately.
  const double lo = hi > 0.0 ? det_v / hi : 0.0;
  return {std::sqrt(std::max(0.0, lo)), std::sqrt(std::max(0.0, hi))};
}

}  // namespace optosqz
