#pragma once

// Two-mode squeezing metrics of a bipartite covariance matrix and the search
// for detection angles of the generalized quadrature
//   X_gen = X_1^{theta_c} cos(phi) + X_2^{theta_m} sin(phi),  X^theta = X cos(theta) + Y sin(theta),
// where mode 1 is the first quadrature pair of V and mode 2 the second.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "optosqz/bayesopt.hpp"
#include "optosqz/dynamics.hpp"
#include "optosqz/errors.hpp"
#include "optosqz/linalg.hpp"
#include "optosqz/optim.hpp"

namespace optosqz {

namespace detail {

inline void require_symmetric(const Mat4& v) {
  if (max_asymmetry(v) > 1e-8 * std::max(1.0, v.cwiseAbs().maxCoeff()))
    throw NotSymmetric("covariance matrix is not symmetric");
}

/// Wraps an angle into [0, pi).
inline double wrap_pi(double a) {
  double w = std::fmod(a, std::numbers::pi);
  if (w < 0.0) w += std::numbers::pi;
  return w >= std::numbers::pi ? 0.0 : w;
}

}  // namespace detail

inline double min_eigenvalue(const Mat4& v) {
  detail::require_symmetric(v);
  Eigen::SelfAdjointEigenSolver<Mat4> es(symmetrized(v), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double min_eigenvalue(const BipartiteCovariance& v) { return min_eigenvalue(v.v); }

/// -10 log10(lambda_min) without the floor at zero.
inline double signed_squeezing(double lambda_min) {
  if (!(lambda_min > 0.0)) throw NonPositiveEigenvalue("smallest eigenvalue must be positive");
  return -10.0 * std::log10(lambda_min);
}

/// Generalized two-mode squeezing in dB, max(0, -10 log10 lambda_min).
inline double generalized_squeezing(double lambda_min) { return std::max(0.0, signed_squeezing(lambda_min)); }

struct DetectionAngles {
  double theta_c = 0.0;
  double theta_m = 0.0;
  double phi = 0.0;
};

/// V-bar = R V R^T with R = R2(theta_c) (+) R2(theta_m).
inline Mat4 rotated_covariance(const Mat4& v, double theta_c, double theta_m) {
  Mat4 r = Mat4::Zero();
  r.topLeftCorner<2, 2>() = rotation2(theta_c);
  r.bottomRightCorner<2, 2>() = rotation2(theta_m);
  return r * v * r.transpose();
}

inline double var_xgen(const Mat4& v, const DetectionAngles& a) {
  detail::require_symmetric(v);
  const Mat4 vb = rotated_covariance(v, a.theta_c, a.theta_m);
  const double c = std::cos(a.phi);
  const double s = std::sin(a.phi);
  return vb(0, 0) * c * c + vb(2, 2) * s * s + vb(0, 2) * std::sin(2.0 * a.phi);
}

inline double var_xgen(const BipartiteCovariance& v, const DetectionAngles& a) { return var_xgen(v.v, a); }

/// First and second derivative of var_xgen with respect to phi.
inline std::array<double, 2> var_xgen_phi_derivatives(const Mat4& v, const DetectionAngles& a) {
  detail::require_symmetric(v);
  const Mat4 vb = rotated_covariance(v, a.theta_c, a.theta_m);
  const double diff = vb(2, 2) - vb(0, 0);
  const double s2 = std::sin(2.0 * a.phi);
  const double c2 = std::cos(2.0 * a.phi);
  return {diff * s2 + 2.0 * vb(0, 2) * c2, 2.0 * diff * c2 - 4.0 * vb(0, 2) * s2};
}

struct PhiOptimum {
  double phi;
  double variance;
};

/// Global minimizer over phi in (-pi/2, pi/2] at fixed theta_c, theta_m.
///
/// Var = (a+b)/2 + (a-b)/2 cos 2phi + c sin 2phi is a sinusoid in 2phi, so the
/// minimum is at 2phi = atan2(-c, -(a-b)/2) with value (a+b)/2 - sqrt(((a-b)/2)^2 + c^2).
inline PhiOptimum optimal_phi(const Mat4& v, double theta_c, double theta_m) {
  detail::require_symmetric(v);
  const Mat4 vb = rotated_covariance(v, theta_c, theta_m);
  const double a = vb(0, 0);
  const double b = vb(2, 2);
  const double c = vb(0, 2);
  const double half = 0.5 * (a - b);
  const double amp = std::hypot(half, c);
  if (amp == 0.0) return {0.0, a};
  // + 0.0 turns -0 into +0 so that the a > b, c = 0 tie resolves to +pi/2
  const double phi = 0.5 * std::atan2(-c + 0.0, -half);
  return {phi, 0.5 * (a + b) - amp};
}

inline PhiOptimum optimal_phi(const BipartiteCovariance& v, double theta_c, double theta_m) {
  return optimal_phi(v.v, theta_c, theta_m);
}

/// Newton iteration on dVar/dphi from phi0, kept as a cross-check of optimal_phi.
inline PhiOptimum optimal_phi_newton(const Mat4& v, double theta_c, double theta_m, double phi0, int max_iter = 50) {
  DetectionAngles a{theta_c, theta_m, phi0};
  for (int i = 0; i < max_iter; ++i) {
    const auto [d1, d2] = var_xgen_phi_derivatives(v, a);
    if (!(d2 > 0.0)) {
      // not in a convex region: step towards decreasing variance
      a.phi -= std::copysign(0.25, d1);
      continue;
    }
    const double step = d1 / d2;
    a.phi -= step;
    if (std::abs(step) < 1e-14) break;
  }
  return {a.phi, var_xgen(v, a)};
}

/// phi-eliminated variance on a grid_n x grid_n half-open grid over
/// [lo, hi) x [lo, hi); rows follow theta_c, columns theta_m.
inline MatX angle_landscape(const Mat4& v, int grid_n, double lo = 0.0, double hi = std::numbers::pi) {
  detail::require_symmetric(v);
  if (grid_n < 2) throw InvalidArgument("landscape grid needs at least 2 points per axis");
  if (!(lo < hi)) throw InvalidArgument("landscape range needs lo < hi");
  MatX out(grid_n, grid_n);
  const double step = (hi - lo) / grid_n;
  for (int i = 0; i < grid_n; ++i)
    for (int j = 0; j < grid_n; ++j) out(i, j) = optimal_phi(v, lo + i * step, lo + j * step).variance;
  return out;
}

inline MatX angle_landscape(const BipartiteCovariance& v, int grid_n, double lo = 0.0, double hi = std::numbers::pi) {
  return angle_landscape(v.v, grid_n, lo, hi);
}

struct DetectionStrategy {
  enum class Kind { grid_refine, bayesian };
  Kind kind = Kind::grid_refine;
  /// grid_refine: coarse grid size per axis and number of local minima refined.
  int grid_n = 32;
  int refine_starts = 3;
  int refine_evals = 400;
  /// bayesian: phase schedule (about 200 evaluations) and seed.
  PhaseSchedule schedule{50, 100, 50};
  std::uint64_t seed = 1;
  /// Gap to lambda_min above which the result is flagged as trapped.
  double trap_tolerance = 1e-6;
};

struct DetectionResult {
  DetectionAngles angles;
  double variance = 0.0;
  double lambda_min = 0.0;
  bool trapped = false;
  int evaluations = 0;

  [[nodiscard]] double gap() const { return variance - lambda_min; }
};

/// Searches (theta_c, theta_m) in [0, pi)^2 with phi eliminated analytically.
/// The search can end in a local minimum; `trapped` reports a gap to lambda_min
/// larger than the strategy's tolerance.
inline DetectionResult detect_min_variance(const Mat4& v, const DetectionStrategy& strategy = {}) {
  detail::require_symmetric(v);
  const double pi = std::numbers::pi;
  int evals = 0;
  const auto h = [&](const VecX& t) {
    ++evals;
    return optimal_phi(v, t(0), t(1)).variance;
  };

  VecX best(2);
  double best_val = 0.0;
  if (strategy.kind == DetectionStrategy::Kind::grid_refine) {
    const int n = strategy.grid_n;
    if (n < 2) throw InvalidArgument("detection grid needs at least 2 points per axis");
    const MatX grid = angle_landscape(v, n);
    evals += n * n;
    const double step = pi / n;
    // local minima of the periodic grid, best first; ties keep row-major order
    std::vector<std::pair<double, int>> minima;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double c = grid(i, j);
        bool local = true;
        for (int di = -1; di <= 1 && local; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            if (grid((i + di + n) % n, (j + dj + n) % n) < c - 1e-14 * std::max(1.0, std::abs(c))) {
              local = false;
              break;
            }
          }
        if (local) minima.emplace_back(c, i * n + j);
      }
    std::stable_sort(minima.begin(), minima.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // minima equal to the best up to rounding go first, smallest angles first
    const double tie = minima.front().first + 1e-14 * std::max(1.0, std::abs(minima.front().first));
    const auto ties = std::partition_point(minima.begin(), minima.end(), [tie](const auto& m) { return m.first <= tie; });
    std::sort(minima.begin(), ties, [](const auto& a, const auto& b) { return a.second < b.second; });
    const auto first = minima.front().second;
    best << (first / n) * step, (first % n) * step;
    best_val = minima.front().first;
    const VecX lo = VecX::Constant(2, -pi);
    const VecX hi = VecX::Constant(2, 2.0 * pi);
    const auto starts = std::min<std::size_t>(minima.size(), static_cast<std::size_t>(std::max(1, strategy.refine_starts)));
    for (std::size_t k = 0; k < starts; ++k) {
      VecX x0(2);
      x0 << (minima[k].second / n) * step, (minima[k].second % n) * step;
      const LocalResult r = nelder_mead_box(h, x0, lo, hi, VecX::Constant(2, 0.25 * step), strategy.refine_evals, 1e-12);
      // degenerate minima keep the grid point, i.e. the smallest angles in row-major order
      if (r.value < best_val - 1e-14 * std::max(1.0, std::abs(best_val))) {
        best_val = r.value;
        best = r.x;
      }
    }
  } else {
    OptimizationProblem prob{Bounds(VecX::Zero(2), VecX::Constant(2, pi)), h, {}};
    const BoHistory hist = run_bo(prob, strategy.schedule, strategy.seed);
    best = hist.best_x();
    best_val = hist.best_value();
  }

  DetectionResult out;
  out.angles.theta_c = detail::wrap_pi(best(0));
  out.angles.theta_m = detail::wrap_pi(best(1));
  const PhiOptimum po = optimal_phi(v, out.angles.theta_c, out.angles.theta_m);
  out.angles.phi = po.phi;
  out.variance = po.variance;
  out.lambda_min = min_eigenvalue(v);
  out.trapped = out.gap() > strategy.trap_tolerance;
  out.evaluations = evals;
  return out;
}

inline DetectionResult detect_min_variance(const BipartiteCovariance& v, const DetectionStrategy& strategy = {}) {
  return detect_min_variance(v.v, strategy);
}

}  // namespace optosqz
