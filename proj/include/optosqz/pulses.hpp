#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "optosqz/errors.hpp"
#include "optosqz/profile.hpp"

namespace optosqz {

/// Drive and detection controls for one pulse. All profiles share the duration tau.
///
/// The drive detuning is Delta(t) = -omega_m + detuning_offset(t), i.e. the
/// offset is measured from the blue mechanical sideband.
struct PulseConfig {
  Profile coupling;         ///< g(t) in units of kappa
  Profile detuning_offset;  ///< delta(t) in units of kappa
  Profile fout;             ///< detection mode profile
  double tau = 30.0;
  double gain_limit = 50.0;
  double gain_proportion = 1.0;

  /// Top-hat coupling at the blue sideband with a given detection profile.
  static PulseConfig top_hat(double g, double tau, Profile fout) {
    PulseConfig p;
    p.coupling = Profile::constant(g, tau);
    p.detuning_offset = Profile::constant(0.0, tau);
    p.fout = std::move(fout);
    p.tau = tau;
    return p;
  }

  void validate() const {
    if (!(tau > 0.0)) throw InvalidArgument("pulse duration must be positive");
    const auto same = [this](const Profile& p) { return std::abs(p.tau() - tau) <= 1e-12 * tau; };
    if (!same(coupling) || !same(detuning_offset) || !same(fout))
      throw InvalidArgument("all pulse profiles must share the pulse duration");
    if (!(gain_proportion > 0.0 && gain_proportion <= 1.0)) throw InvalidArgument("gain proportion must lie in (0, 1]");
  }
};

/// Rescales p so that its square-integral over [0, tau] is one.
inline Profile normalize_fout(const Profile& p) {
  const double s = p.square_integral();
  if (!(s > 0.0) || !std::isfinite(s)) throw DegenerateProfile("detection profile has zero square-integral");
  return p.scaled(1.0 / std::sqrt(s));
}

enum class DurationClamp { none, lower, upper };

struct DurationChoice {
  double tau;
  DurationClamp clamp;
};

/// Pulse duration that spends the fraction p_gain of the amplitude-gain budget,
/// tau = ln(p_gain * gain_limit) / (2 g_eff^2 / kappa), clamped to [tau_min, tau_max].
inline DurationChoice duration_from_gain(double g_eff, double p_gain, double gain_limit, double tau_max, double tau_min,
                                         double kappa = 1.0) {
  if (!(p_gain > 0.0 && p_gain <= 1.0)) throw InvalidArgument("gain proportion must lie in (0, 1]");
  if (!(g_eff > 0.0)) throw InvalidArgument("effective coupling must be positive");
  if (!(tau_min > 0.0 && tau_min <= tau_max)) throw InvalidArgument("duration bounds must satisfy 0 < tau_min <= tau_max");
  const double budget = std::log(p_gain * gain_limit);
  if (!(budget > 0.0)) return {tau_min, DurationClamp::lower};
  const double tau = budget * kappa / (2.0 * g_eff * g_eff);
  if (tau > tau_max) return {tau_max, DurationClamp::upper};
  if (tau < tau_min) return {tau_min, DurationClamp::lower};
  return {tau, DurationClamp::none};
}

/// Amplitude gain exp(2 g^2 tau / kappa) of a constant pulse in the adiabatic regime.
inline double adiabatic_gain(double g, double tau, double kappa = 1.0) {
  if (g < 0.0 || tau < 0.0) throw InvalidArgument("adiabatic_gain needs g >= 0 and tau >= 0");
  return std::exp(2.0 * g * g * tau / kappa);
}

/// exp((2/kappa) * integral g(t)^2 dt); equals adiabatic_gain for constant coupling.
inline double effective_gain(const Profile& coupling, double kappa = 1.0) {
  return std::exp(2.0 / kappa * coupling.square_integral());
}

inline double effective_gain(const PulseConfig& pulse, double kappa = 1.0) { return effective_gain(pulse.coupling, kappa); }

/// Zero-mean normal sample with standard deviation sigma, resampled until it
/// lies within three standard deviations.
template <class Rng>
double truncated_normal(double sigma, Rng& rng) {
  if (sigma == 0.0) return 0.0;
  std::normal_distribution<double> z(0.0, 1.0);
  for (;;) {
    const double s = z(rng);
    if (std::abs(s) <= 3.0) return sigma * s;
  }
}

/// Adds independent truncated Gaussian noise of relative width rel_sigma to every knot.
template <class Rng>
Profile apply_control_noise(const Profile& p, double rel_sigma, Rng& rng) {
  if (rel_sigma < 0.0) throw InvalidArgument("relative noise width must be >= 0");
  if (rel_sigma == 0.0) return p;
  auto knots = p.as_piecewise_linear().knots;
  for (double& k : knots) k += truncated_normal(rel_sigma * std::abs(k), rng);
  return Profile::piecewise_linear(std::move(knots), p.tau());
}

}  // namespace optosqz
