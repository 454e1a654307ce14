#pragma once

// Rotating-wave-approximation solver for constant pulses on the blue sideband.
//
// In the envelope frame the drift is time independent and symmetric, so the
// propagator is e^{A t} = Q diag(e^{lambda t}) Q^T. The covariance of the
// extended system follows from
//   U(tau) = Phi(tau, 0) U0 Phi(tau, 0)^T + int_0^tau Phi(tau, s) F(s) Phi(tau, s)^T ds,
// where the output-mode rows of Phi are integrals of f_out against e^{A t}.
// Those one-dimensional integrals are evaluated by composite Gauss-Legendre
// quadrature; no time stepping is involved.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <vector>

#include "optosqz/dynamics.hpp"
#include "optosqz/errors.hpp"
#include "optosqz/linalg.hpp"
#include "optosqz/profile.hpp"
#include "optosqz/pulses.hpp"
#include "optosqz/quadrature.hpp"
#include "optosqz/system.hpp"

namespace optosqz {

struct RwaMatrices {
  Mat4 drift;
  Mat4 diffusion;
};

/// Envelope-frame drift [[-kappa 1, g s1], [g s1, -gamma/2 1]] and diffusion 2 diag(kappa, kappa, Gamma, Gamma).
inline RwaMatrices rwa_envelope_matrices(const SystemParams& p, double g) {
  Mat4 a = Mat4::Zero();
  a(0, 0) = a(1, 1) = -p.kappa;
  a(2, 2) = a(3, 3) = -0.5 * p.gamma;
  a(0, 3) = a(1, 2) = g;
  a(2, 1) = a(3, 0) = g;
  const double heat = p.heating_rate();
  const Mat4 d = Vec4(2.0 * p.kappa, 2.0 * p.kappa, 2.0 * heat, 2.0 * heat).asDiagonal();
  return {a, d};
}

/// Constant drift model of the RWA envelope dynamics, for numerical cross-checks.
inline DriftModel rwa_model(const SystemParams& p, double g) {
  const RwaMatrices m = rwa_envelope_matrices(p, g);
  return [m](double) { return DriftDiffusion{m.drift, m.diffusion}; };
}

namespace detail {

struct SymmetricPropagator {
  Mat4 q;
  Vec4 rates;

  explicit SymmetricPropagator(const Mat4& a) {
    Eigen::SelfAdjointEigenSolver<Mat4> es(a);
    q = es.eigenvectors();
    rates = es.eigenvalues();
  }

  [[nodiscard]] Mat4 at(double t) const {
    const Vec4 e = (rates * t).array().exp();
    return q * e.asDiagonal() * q.transpose();
  }
};

}  // namespace detail

/// Detection profile matched to the initial mechanical quadrature: f_out(t) is
/// proportional to the coefficient of X_m(0) in the output field, normalized to
/// unit square-integral. In the adiabatic limit it tends to exp(g^2 t / kappa).
///
/// The coefficient is the (Y_c, X_m) entry of e^{A t}, a sum of four
/// exponentials, so the profile is represented exactly.
inline Profile optimal_fout_constant(const SystemParams& p, double g, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("pulse duration must be positive");
  if (g == 0.0) return Profile::constant(1.0 / std::sqrt(tau), tau);
  const detail::SymmetricPropagator prop(rwa_envelope_matrices(p, g).drift);
  std::vector<double> coeffs(4);
  std::vector<double> rates(4);
  for (int k = 0; k < 4; ++k) {
    coeffs[static_cast<std::size_t>(k)] = prop.q(1, k) * prop.q(2, k);
    rates[static_cast<std::size_t>(k)] = prop.rates(k);
  }
  const Profile raw = Profile::exponential_sum(std::move(coeffs), std::move(rates), tau);
  const double s = raw.square_integral();
  if (!(s > 0.0) || !std::isfinite(s)) return Profile::constant(1.0 / std::sqrt(tau), tau);
  return raw.scaled(1.0 / std::sqrt(s));
}

struct RwaQuadrature {
  int nodes = 16;
  /// Upper bound on panel width in units of the fastest rate in the problem.
  double panel_scale = 0.25;
  double overflow_guard = 1e250;
};

/// Extended covariance after a constant RWA pulse of duration tau detected with fout.
inline ExtendedCovariance rwa_extended_covariance(const SystemParams& p, double g, double tau, const Profile& fout,
                                                  const RwaQuadrature& quad = {}) {
  p.validate();
  if (!(tau > 0.0)) throw InvalidArgument("pulse duration must be positive");
  const RwaMatrices m = rwa_envelope_matrices(p, g);
  const detail::SymmetricPropagator prop(m.drift);
  const double max_rate = std::max({p.kappa, prop.rates.cwiseAbs().maxCoeff(), fout.max_rate()});
  if (prop.rates.maxCoeff() * tau > std::log(quad.overflow_guard))
    throw GainOverflow("RWA propagator exceeds the overflow guard");

  // Panel grid: the profile's own breakpoints, each gap subdivided uniformly.
  std::vector<double> grid;
  const auto cuts = fout.breakpoints();
  const double width = quad.panel_scale / max_rate;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i];
    const double b = cuts[i + 1];
    const auto pieces = static_cast<std::size_t>(std::max(1.0, std::ceil((b - a) / width)));
    for (std::size_t k = 0; k < pieces; ++k) grid.push_back(a + (b - a) * static_cast<double>(k) / static_cast<double>(pieces));
  }
  grid.push_back(tau);

  const GaussLegendre gl(quad.nodes);
  const double sk = std::sqrt(2.0 * p.kappa);

  // h_j(s) = int_s^tau f(r) e^{lambda_j (r - s)} dr, propagated backwards panel by panel.
  const auto inner = [&](double from, double to) {
    return gl.integrate(
        [&](double r) -> Vec4 { return fout.at(r) * (prop.rates * (r - from)).array().exp().matrix(); }, from, to);
  };
  const auto hop = [&](const Vec4& h_to, double from, double to) -> Vec4 {
    return (prop.rates * (to - from)).array().exp().matrix().cwiseProduct(h_to) + inner(from, to);
  };
  const auto phi = [&](double s, const Vec4& h) {
    Mat6 out = Mat6::Zero();
    out.topLeftCorner<4, 4>() = prop.at(tau - s);
    const Mat4 k = sk * prop.q * h.asDiagonal() * prop.q.transpose();
    out.block<2, 4>(4, 0) = k.topRows<2>();
    out(4, 4) = out(5, 5) = 1.0;
    return out;
  };

  Mat6 noise = Mat6::Zero();
  Vec4 h_right = Vec4::Zero();
  for (std::size_t i = grid.size() - 1; i > 0; --i) {
    const double a = grid[i - 1];
    const double b = grid[i];
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    Mat6 panel = Mat6::Zero();
    for (std::size_t n = 0; n < gl.nodes.size(); ++n) {
      const double s = mid + half * gl.nodes[n];
      const Mat6 ph = phi(s, hop(h_right, s, b));
      const Mat6 f = extend_diffusion(m.diffusion, p.kappa, p.sigma_v, fout.at(s));
      panel += gl.weights[n] * (ph * f * ph.transpose());
    }
    noise += half * panel;
    h_right = hop(h_right, a, b);
  }

  const Mat6 ph0 = phi(0.0, h_right);
  const Mat6 u0 = initial_covariance(p).u;
  ExtendedCovariance out;
  out.u = symmetrized(Mat6(ph0 * u0 * ph0.transpose() + noise));
  out.t = tau;
  if (!out.u.allFinite() || out.u.cwiseAbs().maxCoeff() > quad.overflow_guard)
    throw GainOverflow("RWA covariance exceeds the overflow guard");
  return out;
}

/// Mechanics-output covariance after a constant RWA pulse, computed without time stepping.
inline BipartiteCovariance rwa_covariance_constant(const SystemParams& p, double g, double tau, const Profile& fout,
                                                   const RwaQuadrature& quad = {}) {
  return extract_bipartite(rwa_extended_covariance(p, g, tau, fout, quad));
}

}  // namespace optosqz
