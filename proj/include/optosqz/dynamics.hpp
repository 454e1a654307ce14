#pragma once

// Covariance-matrix dynamics of the pulsed optomechanical system.
//
// State ordering of the extended system: (X_c, Y_c, X_m, Y_m, X_out, Y_out), where
// the last pair are the quadratures of the detected output mode accumulated with
// the weighting f_out(t). The covariance U obeys dU/dt = B U + U B^T + F.

#include <array>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "optosqz/errors.hpp"
#include "optosqz/linalg.hpp"
#include "optosqz/profile.hpp"
#include "optosqz/pulses.hpp"
#include "optosqz/system.hpp"

namespace optosqz {

/// Covariance of the cavity, mechanics and detected output mode at time t.
struct ExtendedCovariance {
  Mat6 u = Mat6::Zero();
  double t = 0.0;
};

/// Covariance of the mechanics and the detected output mode, ordered (X_m, Y_m, X_out, Y_out).
struct BipartiteCovariance {
  Mat4 v = Mat4::Identity();
};

/// Drift matrix of the cavity and mechanics in the frame of the drive, with
/// coupling g and full detuning delta (Delta = omega_cav - omega_drive).
inline Mat4 build_drift_A(const SystemParams& p, double g, double delta) {
  Mat4 a;
  // clang-format off
  a << -p.kappa,  delta,      0.0,        0.0,
       -delta,   -p.kappa,    2.0 * g,    0.0,
        0.0,      0.0,        0.0,        p.omega_m,
        2.0 * g,  0.0,       -p.omega_m, -p.gamma;
  // clang-format on
  return a;
}

/// Diffusion matrix diag(2 kappa, 2 kappa, 0, 4 Gamma) of the cavity and mechanics noise.
inline Mat4 build_diffusion_D(const SystemParams& p) {
  return Vec4(2.0 * p.kappa, 2.0 * p.kappa, 0.0, 4.0 * p.heating_rate()).asDiagonal();
}

/// Drift of the 6-dimensional extended system built from a 4x4 drift.
inline Mat6 extend_drift(const Mat4& a, double kappa, double fout_val) {
  Mat6 b = Mat6::Zero();
  b.topLeftCorner<4, 4>() = a;
  const double w = std::sqrt(2.0 * kappa) * fout_val;
  b(4, 0) = w;
  b(5, 1) = w;
  return b;
}

/// Diffusion of the 6-dimensional extended system built from a 4x4 diffusion.
///
/// The detected mode accumulates -f_out(t) X_in(t) from the reflected input, so
/// its self-diffusion is f_out^2 sigma_v and its correlation with the cavity
/// noise sqrt(2 kappa) X_in is -f_out sqrt(2 kappa) sigma_v.
inline Mat6 extend_diffusion(const Mat4& d, double kappa, double sigma_v, double fout_val) {
  Mat6 f = Mat6::Zero();
  f.topLeftCorner<4, 4>() = d;
  const double cross = -fout_val * std::sqrt(2.0 * kappa) * sigma_v;
  f(0, 4) = f(4, 0) = cross;
  f(1, 5) = f(5, 1) = cross;
  f(4, 4) = f(5, 5) = fout_val * fout_val * sigma_v;
  return f;
}

inline Mat6 build_extended_B(const SystemParams& p, double g, double delta, double fout_val) {
  return extend_drift(build_drift_A(p, g, delta), p.kappa, fout_val);
}

inline Mat6 build_extended_F(const SystemParams& p, double fout_val) {
  return extend_diffusion(build_diffusion_D(p), p.kappa, p.sigma_v, fout_val);
}

/// Exact drift in the frame where the cavity quadratures are demodulated at the
/// blue-sideband reference detuning -omega_m, evaluated at time t.
///
/// With v_c = R2(-omega_m t) w_c this is T^-1 (A T - dT/dt), T = R2(-omega_m t) + 1_2.
/// The cavity block keeps only the offset delta_offset = Delta + omega_m; the
/// cavity-mechanics couplings rotate at omega_m. No terms are dropped.
inline Mat4 demodulated_drift(const SystemParams& p, double g, double delta_offset, double t) {
  const double a = -p.omega_m * t;
  const double c = std::cos(a);
  const double s = std::sin(a);
  Mat4 m;
  // clang-format off
  m << -p.kappa,       delta_offset,  0.0,         0.0,
       -delta_offset, -p.kappa,       0.0,         0.0,
        0.0,           0.0,           0.0,         p.omega_m,
        2.0 * g * c,   2.0 * g * s,  -p.omega_m,  -p.gamma;
  // clang-format on
  m(0, 2) = -2.0 * g * s;
  m(1, 2) = 2.0 * g * c;
  return m;
}

/// U(0): cavity in vacuum, mechanics thermal with occupation n_0, empty output mode.
inline ExtendedCovariance initial_covariance(const SystemParams& p) {
  ExtendedCovariance u;
  const double m = 2.0 * p.n_0 + 1.0;
  u.u.diagonal() << 1.0, 1.0, m, m, 0.0, 0.0;
  u.t = 0.0;
  return u;
}

/// Mechanics and output-mode block, V_ij = U_{i+2, j+2}.
inline BipartiteCovariance extract_bipartite(const ExtendedCovariance& u) {
  return BipartiteCovariance{u.u.bottomRightCorner<4, 4>()};
}

/// Frame in which the detected output mode is defined.
enum class OutputFrame {
  /// Output demodulated at the cavity frequency of the blue-sideband drive (default).
  demodulated,
  /// Output taken directly in the frame of the drive.
  drive,
};

struct IntegratorOptions {
  double atol = 1e-20;
  double rtol = 1e-10;
  double overflow_guard = 1e250;
  double initial_step = 1e-3;
  std::size_t max_steps = 5'000'000;
  OutputFrame frame = OutputFrame::demodulated;
  /// Called after every accepted step with the current time and symmetric U.
  std::function<void(double, const Mat6&)> observer;
};

/// Time-dependent 4x4 drift and diffusion of the cavity-mechanics subsystem.
struct DriftDiffusion {
  Mat4 drift;
  Mat4 diffusion;
};
using DriftModel = std::function<DriftDiffusion(double)>;

namespace detail {

// Integrator state: the 6x6 transition matrix Phi (column major) followed by
// the 21 upper-triangular entries of the noise covariance N.
using FlowState = std::array<double, 57>;

inline void pack_noise(const Mat6& n, FlowState& x) {
  std::size_t k = 36;
  for (int i = 0; i < 6; ++i)
    for (int j = i; j < 6; ++j) x[k++] = n(i, j);
}

inline Mat6 unpack_noise(const FlowState& x) {
  Mat6 n;
  std::size_t k = 36;
  for (int i = 0; i < 6; ++i)
    for (int j = i; j < 6; ++j) {
      n(i, j) = x[k];
      n(j, i) = x[k];
      ++k;
    }
  return n;
}

inline Mat6 unpack_flow(const FlowState& x) { return Eigen::Map<const Mat6>(x.data()); }

/// U = Phi U0 Phi^T + N, symmetric by construction.
inline Mat6 compose(const FlowState& x, const Mat6& u0) {
  const Mat6 phi = unpack_flow(x);
  const Mat6 u = phi * u0 * phi.transpose() + unpack_noise(x);
  return symmetrized(u);
}

inline void check_overflow(const Mat6& u, double guard, double t) {
  if (!u.allFinite() || u.cwiseAbs().maxCoeff() > guard)
    throw IntegrationDiverged("covariance exceeded the overflow guard at t=" + std::to_string(t));
}

}  // namespace detail

/// Integrates the extended Lyapunov equation over pulse time [0, duration],
/// starting from u0. The drift model and f_out are evaluated in pulse time.
///
/// The solution is assembled as U = Phi U0 Phi^T + N from the transition matrix
/// (dPhi/dt = B Phi) and the noise covariance (dN/dt = B N + N B^T + F, N(0) = 0).
/// With a thermal mechanical state U0 is of order 1e8 and U of order 1e10, so
/// stepping U itself leaves absolute errors near rtol*|U| ~ 1 in entries whose
/// combination gives a smallest eigenvalue of order 0.1; Phi and N stay of order
/// the gain and carry no such cancellation.
///
/// The interval is split at `breakpoints` (times where the controls have kinks)
/// and an embedded Runge-Kutta-Fehlberg 7(8) pair is used on every smooth piece.
inline ExtendedCovariance integrate_lyapunov(const DriftModel& model, const Profile& fout, const SystemParams& p,
                                             const ExtendedCovariance& u0, double duration,
                                             std::vector<double> breakpoints, const IntegratorOptions& opt = {}) {
  namespace ode = boost::numeric::odeint;
  using Stepper = ode::runge_kutta_fehlberg78<detail::FlowState>;
  using ErrorChecker = ode::default_error_checker<double, ode::array_algebra, ode::default_operations>;
  using Controlled = ode::controlled_runge_kutta<Stepper, ErrorChecker>;

  if (max_asymmetry(u0.u) > 1e-10 * std::max(1.0, u0.u.cwiseAbs().maxCoeff()))
    throw NotSymmetric("initial covariance is not symmetric");
  const Mat6 start = symmetrized(u0.u);

  const auto rhs = [&](const detail::FlowState& x, detail::FlowState& dxdt, double t) {
    const DriftDiffusion dd = model(t);
    const double f = fout.at(t);
    const Mat6 b = extend_drift(dd.drift, p.kappa, f);
    const Mat6 fmat = extend_diffusion(dd.diffusion, p.kappa, p.sigma_v, f);
    Eigen::Map<Mat6>(dxdt.data()) = b * detail::unpack_flow(x);
    const Mat6 bn = b * detail::unpack_noise(x);
    detail::pack_noise(bn + bn.transpose() + fmat, dxdt);
  };

  Controlled stepper(ErrorChecker(opt.atol, opt.rtol, 1.0, 0.0));
  detail::FlowState x{};
  Eigen::Map<Mat6>(x.data()) = Mat6::Identity();
  double t = 0.0;

  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.push_back(duration);
  double dt = opt.initial_step;
  std::size_t steps = 0;
  for (double stop : breakpoints) {
    stop = std::min(stop, duration);
    if (stop <= t) continue;
    while (t < stop) {
      double h = std::min(dt, stop - t);
      const bool last = h >= stop - t;
      double t_try = t;
      if (stepper.try_step(rhs, x, t_try, h) == ode::fail) {
        dt = h;
        if (!(h > 0.0) || t + h == t) throw IntegrationDiverged("step size underflow at t=" + std::to_string(t));
        continue;
      }
      // on success try_step advanced t_try and proposed the next step size in h
      t = last ? stop : t_try;
      dt = last ? std::max(dt, h) : h;
      if (++steps > opt.max_steps) throw IntegrationDiverged("step budget exhausted at t=" + std::to_string(t));
      const Mat6 u = detail::compose(x, start);
      detail::check_overflow(u, opt.overflow_guard, t);
      if (opt.observer) opt.observer(u0.t + t, u);
    }
  }
  return ExtendedCovariance{detail::compose(x, start), u0.t + duration};
}

/// Drift and diffusion of the exact (no rotating-wave approximation) model for a pulse.
inline DriftModel exact_model(const SystemParams& p, const PulseConfig& pulse, OutputFrame frame) {
  const Mat4 diffusion = build_diffusion_D(p);
  return [p, pulse, frame, diffusion](double t) {
    const double g = pulse.coupling.at(t);
    const double offset = pulse.detuning_offset.at(t);
    const Mat4 drift = frame == OutputFrame::demodulated ? demodulated_drift(p, g, offset, t)
                                                         : build_drift_A(p, g, -p.omega_m + offset);
    return DriftDiffusion{drift, diffusion};
  };
}

/// Propagates u0 through the pulse with the exact linearized dynamics and returns U(tau).
inline ExtendedCovariance integrate_covariance(const SystemParams& p, const PulseConfig& pulse,
                                               const ExtendedCovariance& u0, const IntegratorOptions& opt = {}) {
  p.validate();
  pulse.validate();
  std::vector<double> cuts;
  for (const Profile* prof : {&pulse.coupling, &pulse.detuning_offset, &pulse.fout})
    for (double t : prof->breakpoints()) cuts.push_back(t);
  return integrate_lyapunov(exact_model(p, pulse, opt.frame), pulse.fout, p, u0, pulse.tau, std::move(cuts), opt);
}

}  // namespace optosqz
