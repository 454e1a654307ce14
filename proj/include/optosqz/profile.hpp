#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "optosqz/errors.hpp"

namespace optosqz {

namespace detail {

/// expm1(x)/x, continuous at 0.
inline double phi1(double x) {
  if (std::abs(x) < 1e-8) return 1.0 + 0.5 * x;
  return std::expm1(x) / x;
}

}  // namespace detail

/// Knot values at equally spaced times over [0, tau], linearly interpolated.
struct PiecewiseLinear {
  std::vector<double> knots;
  double tau = 1.0;
};

/// f(t) = sum_k coeffs[k] * exp(rates[k] * t) on [0, tau].
struct ExponentialSum {
  std::vector<double> coeffs;
  std::vector<double> rates;
  double tau = 1.0;
};

/// A scalar control or detection profile defined on [0, tau].
///
/// Either a piecewise-linear profile with equally spaced knots or an exponential
/// sum (the form taken by mode functions of time-independent linear systems).
class Profile {
 public:
  Profile() : repr_(PiecewiseLinear{{0.0, 0.0}, 1.0}) {}

  static Profile piecewise_linear(std::vector<double> knots, double tau) {
    if (knots.size() < 2) throw InvalidArgument("piecewise-linear profile needs at least 2 knots");
    check_tau(tau);
    return Profile(PiecewiseLinear{std::move(knots), tau});
  }

  static Profile constant(double value, double tau) { return piecewise_linear({value, value}, tau); }

  static Profile exponential_sum(std::vector<double> coeffs, std::vector<double> rates, double tau) {
    if (coeffs.size() != rates.size() || coeffs.empty())
      throw InvalidArgument("exponential-sum profile needs matching, non-empty coefficient and rate lists");
    check_tau(tau);
    return Profile(ExponentialSum{std::move(coeffs), std::move(rates), tau});
  }

  [[nodiscard]] double tau() const {
    return std::visit([](const auto& r) { return r.tau; }, repr_);
  }

  [[nodiscard]] bool is_piecewise_linear() const { return std::holds_alternative<PiecewiseLinear>(repr_); }
  [[nodiscard]] const PiecewiseLinear& as_piecewise_linear() const { return std::get<PiecewiseLinear>(repr_); }
  [[nodiscard]] const ExponentialSum& as_exponential_sum() const { return std::get<ExponentialSum>(repr_); }

  /// Knot values; only for piecewise-linear profiles.
  [[nodiscard]] std::span<const double> knots() const { return as_piecewise_linear().knots; }

  /// Value at t, throws OutOfDomain outside [0, tau].
  [[nodiscard]] double value(double t) const {
    if (!(t >= 0.0) || t > tau()) throw OutOfDomain("profile evaluated at t=" + std::to_string(t) + " outside [0, tau]");
    return at(t);
  }

  /// Value at t with t clamped to [0, tau]. Used inside integrators, where stage
  /// times may overshoot the end of the interval by rounding.
  [[nodiscard]] double at(double t) const {
    if (const auto* p = std::get_if<PiecewiseLinear>(&repr_)) {
      const std::size_t segments = p->knots.size() - 1;
      const double x = std::clamp(t / p->tau, 0.0, 1.0) * static_cast<double>(segments);
      const std::size_t i = std::min(static_cast<std::size_t>(x), segments - 1);
      const double w = x - static_cast<double>(i);
      return p->knots[i] + w * (p->knots[i + 1] - p->knots[i]);
    }
    const auto& e = std::get<ExponentialSum>(repr_);
    const double tc = std::clamp(t, 0.0, e.tau);
    double v = 0.0;
    for (std::size_t k = 0; k < e.coeffs.size(); ++k) v += e.coeffs[k] * std::exp(e.rates[k] * tc);
    return v;
  }

  double operator()(double t) const { return value(t); }

  /// Integral of f(t)^2 over [0, tau], in closed form.
  [[nodiscard]] double square_integral() const {
    if (const auto* p = std::get_if<PiecewiseLinear>(&repr_)) {
      const double dt = p->tau / static_cast<double>(p->knots.size() - 1);
      double s = 0.0;
      for (std::size_t i = 0; i + 1 < p->knots.size(); ++i) {
        const double a = p->knots[i];
        const double b = p->knots[i + 1];
        s += dt / 3.0 * (a * a + a * b + b * b);
      }
      return s;
    }
    const auto& e = std::get<ExponentialSum>(repr_);
    double s = 0.0;
    for (std::size_t j = 0; j < e.coeffs.size(); ++j)
      for (std::size_t k = 0; k < e.coeffs.size(); ++k)
        s += e.coeffs[j] * e.coeffs[k] * e.tau * detail::phi1((e.rates[j] + e.rates[k]) * e.tau);
    return s;
  }

  /// c * f.
  [[nodiscard]] Profile scaled(double c) const {
    Profile out = *this;
    std::visit(
        [c](auto& r) {
          if constexpr (std::is_same_v<std::decay_t<decltype(r)>, PiecewiseLinear>) {
            for (double& k : r.knots) k *= c;
          } else {
            for (double& k : r.coeffs) k *= c;
          }
        },
        out.repr_);
    return out;
  }

  /// Same knot values over a different duration; piecewise-linear only.
  [[nodiscard]] Profile with_tau(double tau) const {
    return piecewise_linear(as_piecewise_linear().knots, tau);
  }

  /// Times at which the profile may be non-smooth, including 0 and tau.
  [[nodiscard]] std::vector<double> breakpoints() const {
    if (const auto* p = std::get_if<PiecewiseLinear>(&repr_)) {
      const std::size_t n = p->knots.size() - 1;
      std::vector<double> t(n + 1);
      for (std::size_t i = 0; i <= n; ++i) t[i] = p->tau * static_cast<double>(i) / static_cast<double>(n);
      t[n] = p->tau;
      return t;
    }
    return {0.0, tau()};
  }

  /// Largest |df/dt| over [0, tau]; for exponential sums a bound from the endpoints of each term.
  [[nodiscard]] double max_slope() const {
    if (const auto* p = std::get_if<PiecewiseLinear>(&repr_)) {
      const double dt = p->tau / static_cast<double>(p->knots.size() - 1);
      double m = 0.0;
      for (std::size_t i = 0; i + 1 < p->knots.size(); ++i) m = std::max(m, std::abs(p->knots[i + 1] - p->knots[i]) / dt);
      return m;
    }
    const auto& e = std::get<ExponentialSum>(repr_);
    double m = 0.0;
    for (std::size_t k = 0; k < e.coeffs.size(); ++k)
      m += std::abs(e.coeffs[k] * e.rates[k]) * std::max(1.0, std::exp(e.rates[k] * e.tau));
    return m;
  }

  /// Largest |rate| of an exponential-sum profile, 0 for piecewise-linear ones.
  [[nodiscard]] double max_rate() const {
    if (is_piecewise_linear()) return 0.0;
    double m = 0.0;
    for (double r : as_exponential_sum().rates) m = std::max(m, std::abs(r));
    return m;
  }

  friend bool operator==(const Profile& a, const Profile& b) {
    if (a.repr_.index() != b.repr_.index()) return false;
    if (a.is_piecewise_linear()) {
      const auto& x = a.as_piecewise_linear();
      const auto& y = b.as_piecewise_linear();
      return x.tau == y.tau && x.knots == y.knots;
    }
    const auto& x = a.as_exponential_sum();
    const auto& y = b.as_exponential_sum();
    return x.tau == y.tau && x.coeffs == y.coeffs && x.rates == y.rates;
  }

 private:
  explicit Profile(PiecewiseLinear p) : repr_(std::move(p)) {}
  explicit Profile(ExponentialSum e) : repr_(std::move(e)) {}

  static void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("profile duration must be positive and finite");
  }

  std::variant<PiecewiseLinear, ExponentialSum> repr_;
};

}  // namespace optosqz
