#pragma once

#include <cmath>
#include <sstream>

#include "optosqz/errors.hpp"

namespace optosqz {

/// Fixed physical parameters of the levitated optomechanical system.
///
/// All rates are expressed in units of the optical linewidth (kappa = 1 by
/// default). Quadratures use the convention [X, Y] = 2i, so vacuum variance is 1.
struct SystemParams {
  double kappa = 1.0;       ///< optical linewidth
  double gamma = 2.8e-10;   ///< mechanical damping
  double omega_m = 2.0;     ///< mechanical frequency
  double n_th = 2.26e8;     ///< bath occupation
  double n_0 = 2.26e8;      ///< initial mechanical occupation
  double sigma_v = 1.0;     ///< shot-noise variance

  /// Heating rate Gamma = gamma * n_th.
  [[nodiscard]] double heating_rate() const { return gamma * n_th; }

  void validate() const {
    std::ostringstream why;
    if (!(kappa > 0.0)) why << "kappa must be > 0; ";
    if (!(gamma > 0.0)) why << "gamma must be > 0; ";
    if (!(omega_m > 0.0)) why << "omega_m must be > 0; ";
    if (!(n_th >= 0.0)) why << "n_th must be >= 0; ";
    if (!(n_0 >= 0.0)) why << "n_0 must be >= 0; ";
    if (sigma_v != 1.0) why << "sigma_v is fixed to 1; ";
    if (!why.str().empty()) throw InvalidArgument("SystemParams: " + why.str());
  }

  /// Parameters with the bath occupation chosen to reach a given heating rate.
  [[nodiscard]] SystemParams with_heating_rate(double heating) const {
    SystemParams p = *this;
    p.n_th = heating / gamma;
    return p;
  }
};

}  // namespace optosqz
