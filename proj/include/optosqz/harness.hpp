#pragma once

// Experiment layer: maps optimization vectors to pulses, scores them with the
// exact solver and runs single, repeated, noisy and swept optimizations.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "optosqz/bayesopt.hpp"
#include "optosqz/dynamics.hpp"
#include "optosqz/errors.hpp"
#include "optosqz/pulses.hpp"
#include "optosqz/rwa.hpp"
#include "optosqz/squeezing.hpp"
#include "optosqz/system.hpp"

namespace optosqz {

enum class LayoutKind { const_coupling, pwl_coupling_fout, pwl_all, fout_only, detection_angles };

inline const char* to_string(LayoutKind k) {
  switch (k) {
    case LayoutKind::const_coupling:
      return "const_coupling";
    case LayoutKind::pwl_coupling_fout:
      return "pwl_coupling_fout";
    case LayoutKind::pwl_all:
      return "pwl_all";
    case LayoutKind::fout_only:
      return "fout_only";
    case LayoutKind::detection_angles:
      return "detection_angles";
  }
  return "?";
}

inline LayoutKind layout_from_string(const std::string& s) {
  for (auto k : {LayoutKind::const_coupling, LayoutKind::pwl_coupling_fout, LayoutKind::pwl_all, LayoutKind::fout_only,
                 LayoutKind::detection_angles})
    if (s == to_string(k)) return k;
  throw InvalidArgument("unknown layout '" + s + "'");
}

/// Default evaluation budget for a layout.
inline PhaseSchedule default_schedule(LayoutKind k) {
  switch (k) {
    case LayoutKind::const_coupling:
    case LayoutKind::detection_angles:
      return {40, 40, 20};
    case LayoutKind::pwl_coupling_fout:
      return {200, 200, 80};
    case LayoutKind::pwl_all:
      return {300, 300, 100};
    case LayoutKind::fout_only:
      return {120, 120, 50};
  }
  return {};
}

struct LayoutOptions {
  int knots = 6;
  double g_min = 0.01;
  double g_max = 2.0;
  double p_min = 0.02;
  double p_max = 1.0;
  double tau_min = 1.0;
  double tau_max = 100.0;
  double gain_limit = 50.0;
  /// Raw f_out knot range; profiles are normalized after decoding.
  double fout_min = -1.0;
  double fout_max = 1.0;
  /// Detuning offsets lie in [-f, f] * omega_m.
  double detuning_fraction = 0.5;
  /// Coupling and duration held fixed by the f_out-only layout.
  double fixed_g = 0.6144;
  double fixed_tau = 5.1817;
};

/// Decoded coupling and duration for a coupling shape and gain proportion.
struct CouplingChoice {
  Profile coupling;
  double tau;
  DurationClamp clamp;
};

/// Chooses tau from the gain budget for the given coupling shape (knot values
/// over unit duration). At the lower duration clamp the coupling is scaled
/// down so that the gain still equals p_gain * gain_limit.
inline CouplingChoice coupling_from_gain(const std::vector<double>& knots, double p_gain, const LayoutOptions& o,
                                         double kappa) {
  const Profile shape = Profile::piecewise_linear(knots, 1.0);
  const double mean_sq = shape.square_integral();
  if (!(mean_sq > 0.0)) return {shape.with_tau(o.tau_max), o.tau_max, DurationClamp::upper};
  const DurationChoice d = duration_from_gain(std::sqrt(mean_sq), p_gain, o.gain_limit, o.tau_max, o.tau_min, kappa);
  Profile c = shape.with_tau(d.tau);
  if (d.clamp == DurationClamp::lower) {
    const double budget = std::max(0.0, std::log(p_gain * o.gain_limit));
    c = c.scaled(std::sqrt(budget * kappa / (2.0 * d.tau * mean_sq)));
  }
  return {c, d.tau, d.clamp};
}

class VariableLayout {
 public:
  explicit VariableLayout(LayoutKind kind, LayoutOptions options = {}) : kind_(kind), o_(options) {
    if (o_.knots < 2) throw InvalidArgument("PWL profiles need at least 2 knots");
  }

  [[nodiscard]] LayoutKind kind() const { return kind_; }
  [[nodiscard]] const LayoutOptions& options() const { return o_; }

  [[nodiscard]] Eigen::Index dims() const {
    const Eigen::Index k = o_.knots;
    switch (kind_) {
      case LayoutKind::const_coupling:
      case LayoutKind::detection_angles:
        return 2;
      case LayoutKind::pwl_coupling_fout:
        return 2 * k + 1;
      case LayoutKind::pwl_all:
        return 3 * k + 1;
      case LayoutKind::fout_only:
        return k;
    }
    return 0;
  }

  [[nodiscard]] bool has_coupling_knots() const {
    return kind_ == LayoutKind::pwl_coupling_fout || kind_ == LayoutKind::pwl_all;
  }

  [[nodiscard]] Bounds bounds(const SystemParams& p) const {
    const Eigen::Index k = o_.knots;
    VecX lo(dims());
    VecX hi(dims());
    switch (kind_) {
      case LayoutKind::const_coupling:
        lo << o_.g_min, o_.p_min;
        hi << o_.g_max, o_.p_max;
        break;
      case LayoutKind::detection_angles:
        lo << 0.0, 0.0;
        hi << std::numbers::pi, std::numbers::pi;
        break;
      case LayoutKind::fout_only:
        lo.setConstant(o_.fout_min);
        hi.setConstant(o_.fout_max);
        break;
      case LayoutKind::pwl_all:
        lo.segment(2 * k + 1, k).setConstant(-o_.detuning_fraction * p.omega_m);
        hi.segment(2 * k + 1, k).setConstant(o_.detuning_fraction * p.omega_m);
        [[fallthrough]];
      case LayoutKind::pwl_coupling_fout:
        lo.head(k).setConstant(o_.g_min);
        hi.head(k).setConstant(o_.g_max);
        lo(k) = o_.p_min;
        hi(k) = o_.p_max;
        lo.segment(k + 1, k).setConstant(o_.fout_min);
        hi.segment(k + 1, k).setConstant(o_.fout_max);
        break;
    }
    return {lo, hi};
  }

  /// Pulse for an optimization vector. Not defined for the detection-angle layout.
  [[nodiscard]] PulseConfig decode(const VecX& x, const SystemParams& p) const {
    if (x.size() != dims()) throw InvalidArgument("vector length does not match the layout");
    const auto k = static_cast<std::size_t>(o_.knots);
    const auto segment = [&x](Eigen::Index from, std::size_t n) {
      return std::vector<double>(x.data() + from, x.data() + from + static_cast<Eigen::Index>(n));
    };
    PulseConfig pulse;
    pulse.gain_limit = o_.gain_limit;
    switch (kind_) {
      case LayoutKind::const_coupling: {
        const double g = x(0);
        if (g < 0.0) throw InvalidArgument("coupling must be >= 0");
        const CouplingChoice c = coupling_from_gain({g, g}, x(1), o_, p.kappa);
        pulse = PulseConfig::top_hat(c.coupling.at(0.0), c.tau, optimal_fout_constant(p, c.coupling.at(0.0), c.tau));
        pulse.gain_limit = o_.gain_limit;
        pulse.gain_proportion = x(1);
        return pulse;
      }
      case LayoutKind::fout_only: {
        pulse.tau = o_.fixed_tau;
        pulse.coupling = Profile::constant(o_.fixed_g, o_.fixed_tau);
        pulse.detuning_offset = Profile::constant(0.0, o_.fixed_tau);
        pulse.fout = normalize_fout(Profile::piecewise_linear(segment(0, k), o_.fixed_tau));
        pulse.gain_proportion = std::min(1.0, adiabatic_gain(o_.fixed_g, o_.fixed_tau, p.kappa) / o_.gain_limit);
        return pulse;
      }
      case LayoutKind::pwl_coupling_fout:
      case LayoutKind::pwl_all: {
        const std::vector<double> g = segment(0, k);
        if (std::any_of(g.begin(), g.end(), [](double v) { return v < 0.0; }))
          throw InvalidArgument("coupling knots must be >= 0");
        const CouplingChoice c = coupling_from_gain(g, x(o_.knots), o_, p.kappa);
        pulse.tau = c.tau;
        pulse.coupling = c.coupling;
        pulse.gain_proportion = x(o_.knots);
        pulse.fout = normalize_fout(Profile::piecewise_linear(segment(o_.knots + 1, k), c.tau));
        pulse.detuning_offset = kind_ == LayoutKind::pwl_all
                                    ? Profile::piecewise_linear(segment(2 * o_.knots + 1, k), c.tau)
                                    : Profile::constant(0.0, c.tau);
        return pulse;
      }
      case LayoutKind::detection_angles:
        break;
    }
    throw InvalidArgument("the detection-angle layout does not decode to a pulse");
  }

  /// Inverse of decode on decoded pulses.
  [[nodiscard]] VecX encode(const PulseConfig& pulse) const {
    VecX x(dims());
    const Eigen::Index k = o_.knots;
    const auto put = [&x](Eigen::Index at, const Profile& prof, Eigen::Index n) {
      const auto kn = prof.knots();
      if (static_cast<Eigen::Index>(kn.size()) != n) throw InvalidArgument("profile knot count does not match the layout");
      for (Eigen::Index i = 0; i < n; ++i) x(at + i) = kn[static_cast<std::size_t>(i)];
    };
    switch (kind_) {
      case LayoutKind::const_coupling:
        x << pulse.coupling.at(0.0), pulse.gain_proportion;
        return x;
      case LayoutKind::fout_only:
        put(0, pulse.fout, k);
        return x;
      case LayoutKind::pwl_all:
        put(2 * k + 1, pulse.detuning_offset, k);
        [[fallthrough]];
      case LayoutKind::pwl_coupling_fout:
        put(0, pulse.coupling, k);
        x(k) = pulse.gain_proportion;
        put(k + 1, pulse.fout, k);
        return x;
      case LayoutKind::detection_angles:
        break;
    }
    throw InvalidArgument("the detection-angle layout does not encode pulses");
  }

  [[nodiscard]] DetectionAngles decode_angles(const VecX& x) const {
    if (kind_ != LayoutKind::detection_angles || x.size() != 2) throw InvalidArgument("not a detection-angle vector");
    return {x(0), x(1), 0.0};
  }
  [[nodiscard]] VecX encode_angles(const DetectionAngles& a) const {
    VecX x(2);
    x << a.theta_c, a.theta_m;
    return x;
  }

 private:
  LayoutKind kind_;
  LayoutOptions o_;
};

struct Score {
  double lambda_min;
  double s_gen;
  double signed_db;
};

inline Score score_covariance(const BipartiteCovariance& v) {
  const double lam = min_eigenvalue(v);
  return {lam, generalized_squeezing(lam), signed_squeezing(lam)};
}

/// Integrates the pulse from the thermal initial state and scores the result.
/// Numeric failures are rethrown as EvaluationFailed.
inline Score evaluate_pulse(const SystemParams& p, const PulseConfig& pulse, const IntegratorOptions& opt = {}) {
  try {
    return score_covariance(extract_bipartite(integrate_covariance(p, pulse, initial_covariance(p), opt)));
  } catch (const EvaluationFailed&) {
    throw;
  } catch (const NumericError& e) {
    throw EvaluationFailed(std::string("evaluation failed: ") + e.what());
  }
}

inline Score decode_and_evaluate(const VariableLayout& layout, const VecX& x, const SystemParams& p,
                                 const IntegratorOptions& opt = {}) {
  return evaluate_pulse(p, layout.decode(x, p), opt);
}

struct EvaluationRecord {
  VecX x;
  double objective = 0.0;
  /// NaN for failed evaluations.
  double lambda_min = std::numeric_limits<double>::quiet_NaN();
  double s_gen = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
  BoPhase phase = BoPhase::initial;
};

struct RunRecord {
  std::uint64_t seed = 0;
  LayoutKind layout = LayoutKind::const_coupling;
  PhaseSchedule schedule;
  SystemParams params;
  std::vector<EvaluationRecord> evaluations;
  std::vector<double> incumbent_trace;
  double wall_seconds = 0.0;
  VecX best_x;
  double best_lambda = std::numeric_limits<double>::quiet_NaN();
  double best_s_gen = std::numeric_limits<double>::quiet_NaN();
  double best_signed_db = std::numeric_limits<double>::quiet_NaN();
  /// Noise settings and the noiseless re-evaluation of the incumbent (noisy runs only).
  double rel_sigma = 0.0;
  double final_noiseless_s_gen = std::numeric_limits<double>::quiet_NaN();
  PulseConfig best_pulse;
  bool ok = false;
  std::string error;
};

struct HarnessOptions {
  BoConfig bo;
  IntegratorOptions integrator;
};

namespace detail {

inline RunRecord make_record(const BoHistory& h, const VariableLayout& layout, const SystemParams& p,
                             const PhaseSchedule& s, std::uint64_t seed, double seconds) {
  RunRecord r;
  r.seed = seed;
  r.layout = layout.kind();
  r.schedule = s;
  r.params = p;
  r.wall_seconds = seconds;
  r.incumbent_trace = h.incumbent_trace;
  for (const auto& e : h.evaluations) {
    EvaluationRecord er;
    er.x = e.x;
    er.objective = e.value;
    er.failed = e.failed;
    er.error = e.error;
    er.phase = e.phase;
    if (!e.failed && e.value > 0.0) {
      er.lambda_min = e.value;
      er.s_gen = generalized_squeezing(e.value);
    }
    r.evaluations.push_back(std::move(er));
  }
  if (h.best_index >= 0 && h.best_value() > 0.0) {
    r.best_x = h.best_x();
    r.best_lambda = h.best_value();
    r.best_s_gen = generalized_squeezing(r.best_lambda);
    r.best_signed_db = signed_squeezing(r.best_lambda);
    r.best_pulse = layout.decode(r.best_x, p);
    r.ok = true;
  } else {
    r.error = "no successful evaluation";
  }
  return r;
}

}  // namespace detail

/// One Bayesian optimization of lambda_min over the layout's bounds.
inline RunRecord optimize_once(const VariableLayout& layout, const SystemParams& p, const PhaseSchedule& schedule,
                               std::uint64_t seed, const HarnessOptions& opt = {}) {
  if (layout.kind() == LayoutKind::detection_angles)
    throw InvalidArgument("use detect_min_variance for the detection-angle layout");
  p.validate();
  const auto t0 = std::chrono::steady_clock::now();
  OptimizationProblem prob;
  prob.bounds = layout.bounds(p);
  prob.objective = [&](const VecX& x) { return decode_and_evaluate(layout, x, p, opt.integrator).lambda_min; };
  const BoHistory h = run_bo(prob, schedule, seed, opt.bo);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return detail::make_record(h, layout, p, schedule, seed, secs);
}

/// Optimization where every evaluation perturbs the coupling knots with
/// truncated Gaussian noise of relative width rel_sigma. The final squeezing
/// re-evaluates the incumbent vector without noise.
inline RunRecord noisy_optimize(const VariableLayout& layout, const SystemParams& p, const PhaseSchedule& schedule,
                                double rel_sigma, std::uint64_t seed, const HarnessOptions& opt = {}) {
  if (rel_sigma < 0.0) throw InvalidArgument("relative noise width must be >= 0");
  if (rel_sigma > 0.0 && !layout.has_coupling_knots())
    throw InvalidArgument("control noise needs a layout with coupling knots");
  p.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 noise_rng(seed ^ 0x6e6f697365ULL);
  OptimizationProblem prob;
  prob.bounds = layout.bounds(p);
  prob.objective = [&](const VecX& x) {
    PulseConfig pulse = layout.decode(x, p);
    pulse.coupling = apply_control_noise(pulse.coupling, rel_sigma, noise_rng);
    return evaluate_pulse(p, pulse, opt.integrator).lambda_min;
  };
  const BoHistory h = run_bo(prob, schedule, seed, opt.bo);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RunRecord r = detail::make_record(h, layout, p, schedule, seed, secs);
  r.rel_sigma = rel_sigma;
  if (r.ok) {
    try {
      r.final_noiseless_s_gen = decode_and_evaluate(layout, r.best_x, p, opt.integrator).s_gen;
    } catch (const EvaluationFailed& e) {
      r.error = e.what();
    }
  }
  return r;
}

/// S_gen of one pulse re-evaluated n times with fresh control noise; failed draws are skipped.
inline std::vector<double> reevaluate_with_noise(const SystemParams& p, const PulseConfig& pulse, double rel_sigma,
                                                 int n, std::uint64_t seed, const IntegratorOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) {
    PulseConfig noisy = pulse;
    noisy.coupling = apply_control_noise(pulse.coupling, rel_sigma, rng);
    try {
      out.push_back(evaluate_pulse(p, noisy, opt).s_gen);
    } catch (const EvaluationFailed&) {
    }
  }
  return out;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;
};

inline Histogram make_histogram(const std::vector<double>& v, int bins) {
  Histogram h;
  if (v.empty() || bins < 1) return h;
  h.lo = *std::min_element(v.begin(), v.end());
  h.hi = *std::max_element(v.begin(), v.end());
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double w = h.hi > h.lo ? (h.hi - h.lo) / bins : 1.0;
  for (double x : v) {
    const int b = std::clamp(static_cast<int>((x - h.lo) / w), 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

/// Mean and standard error of a profile sampled at slice boundaries, plus duration.
struct AveragePulse {
  std::vector<double> coupling_mean, coupling_se;
  std::vector<double> fout_mean, fout_se;
  std::vector<double> detuning_mean, detuning_se;
  double tau_mean = 0.0;
  double tau_se = 0.0;
  /// Error bands are this many standard errors wide.
  double band_width = 5.0;
};

namespace detail {

inline void mean_se(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& se) {
  mean.clear();
  se.clear();
  if (rows.empty()) return;
  const std::size_t m = rows.front().size();
  const auto n = static_cast<double>(rows.size());
  mean.assign(m, 0.0);
  se.assign(m, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < m; ++j) mean[j] += r[j] / n;
  if (rows.size() < 2) return;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < m; ++j) se[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  for (double& s : se) s = std::sqrt(s / (n - 1.0) / n);
}

inline std::vector<double> sample_profile(const Profile& prof, int points) {
  std::vector<double> v(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) v[static_cast<std::size_t>(i)] = prof.at(prof.tau() * i / (points - 1));
  return v;
}

}  // namespace detail

inline AveragePulse average_pulse(const std::vector<PulseConfig>& pulses, int points) {
  AveragePulse a;
  std::vector<std::vector<double>> g, f, d;
  std::vector<std::vector<double>> tau;
  for (const auto& p : pulses) {
    g.push_back(detail::sample_profile(p.coupling, points));
    f.push_back(detail::sample_profile(p.fout, points));
    d.push_back(detail::sample_profile(p.detuning_offset, points));
    tau.push_back({p.tau});
  }
  detail::mean_se(g, a.coupling_mean, a.coupling_se);
  detail::mean_se(f, a.fout_mean, a.fout_se);
  detail::mean_se(d, a.detuning_mean, a.detuning_se);
  std::vector<double> tm, ts;
  detail::mean_se(tau, tm, ts);
  if (!tm.empty()) {
    a.tau_mean = tm[0];
    a.tau_se = ts[0];
  }
  return a;
}

struct RepeatSummary {
  int runs = 0;
  int failed_runs = 0;
  double min_s_gen = std::numeric_limits<double>::quiet_NaN();
  double mean_s_gen = std::numeric_limits<double>::quiet_NaN();
  double max_s_gen = std::numeric_limits<double>::quiet_NaN();
  double mean_signed_db = std::numeric_limits<double>::quiet_NaN();
  double max_signed_db = std::numeric_limits<double>::quiet_NaN();
  Histogram histogram;
  AveragePulse average;
};

struct RepeatResult {
  RepeatSummary summary;
  std::vector<RunRecord> records;
};

struct RepeatOptions {
  HarnessOptions harness;
  int threads = 0;  ///< 0: hardware concurrency
  int histogram_bins = 20;
  /// Noise for noisy repeats; the summary then uses the noiseless re-evaluations.
  double rel_sigma = 0.0;
  bool noisy = false;
};

/// Seed of repeat i; splitmix64 of the base seed and index.
inline std::uint64_t repeat_seed(std::uint64_t base, int i) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(i) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs `count` jobs on up to `threads` workers; job(i) writes only its own slot.
template <class Job>
void run_parallel(int count, int threads, const Job& job) {
  const int workers = std::max(1, std::min(count, threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency())));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) job(i);
    });
  for (auto& t : pool) t.join();
}

inline RepeatSummary summarize(const std::vector<RunRecord>& records, int bins, bool noiseless_final) {
  RepeatSummary s;
  s.runs = static_cast<int>(records.size());
  std::vector<double> best, signed_db;
  std::vector<PulseConfig> pulses;
  for (const auto& r : records) {
    const double v = noiseless_final ? r.final_noiseless_s_gen : r.best_s_gen;
    if (!r.ok || !std::isfinite(v)) {
      ++s.failed_runs;
      continue;
    }
    best.push_back(v);
    signed_db.push_back(r.best_signed_db);
    pulses.push_back(r.best_pulse);
  }
  if (best.empty()) return s;
  const auto n = static_cast<double>(best.size());
  s.min_s_gen = *std::min_element(best.begin(), best.end());
  s.max_s_gen = *std::max_element(best.begin(), best.end());
  s.mean_s_gen = std::accumulate(best.begin(), best.end(), 0.0) / n;
  s.mean_signed_db = std::accumulate(signed_db.begin(), signed_db.end(), 0.0) / n;
  s.max_signed_db = *std::max_element(signed_db.begin(), signed_db.end());
  s.histogram = make_histogram(best, bins);
  const int points = std::max<int>(2, static_cast<int>(pulses.front().coupling.is_piecewise_linear()
                                                           ? pulses.front().coupling.knots().size()
                                                           : 2));
  s.average = average_pulse(pulses, std::max(points, 6));
  return s;
}

/// Independent seeded optimizations; records come back in repeat order whatever
/// the thread count. Failures of single runs are recorded, not thrown.
inline RepeatResult repeat_optimize(const VariableLayout& layout, const SystemParams& p, const PhaseSchedule& schedule,
                                    int n_repeats, std::uint64_t base_seed, const RepeatOptions& opt = {}) {
  if (n_repeats < 1) throw InvalidArgument("n_repeats must be >= 1");
  RepeatResult out;
  out.records.resize(static_cast<std::size_t>(n_repeats));
  run_parallel(n_repeats, opt.threads, [&](int i) {
    const std::uint64_t seed = repeat_seed(base_seed, i);
    RunRecord& r = out.records[static_cast<std::size_t>(i)];
    try {
      r = opt.noisy ? noisy_optimize(layout, p, schedule, opt.rel_sigma, seed, opt.harness)
                    : optimize_once(layout, p, schedule, seed, opt.harness);
    } catch (const Error& e) {
      r = RunRecord{};
      r.seed = seed;
      r.layout = layout.kind();
      r.schedule = schedule;
      r.params = p;
      r.error = e.what();
    }
  });
  out.summary = summarize(out.records, opt.histogram_bins, opt.noisy);
  return out;
}

/// Parameters for high heating rates: the initial occupation is lowered to
/// n0_cap when the heating rate reaches kappa, which keeps U well conditioned.
inline SystemParams stabilized_params(SystemParams p, double n0_cap = 1e4) {
  if (p.heating_rate() >= p.kappa) p.n_0 = std::min(p.n_0, n0_cap);
  return p;
}

struct SweepPoint {
  double heating_rate = 0.0;
  double n_th = 0.0;
  double n_0 = 0.0;
  double best_db = std::numeric_limits<double>::quiet_NaN();
  double mean_db = std::numeric_limits<double>::quiet_NaN();
  int failed_runs = 0;
  RepeatResult result;
};

struct SweepOptions {
  RepeatOptions repeat;
  /// Initial occupation used at every sweep point.
  double n_0 = 100.0;
};

/// Repeated optimizations at each heating rate; best and mean are signed squeezing.
inline std::vector<SweepPoint> thermal_sweep(const VariableLayout& layout, const std::vector<double>& heating_rates,
                                             const SystemParams& base, const PhaseSchedule& schedule, int repeats,
                                             std::uint64_t base_seed, const SweepOptions& opt = {}) {
  if (heating_rates.empty()) throw InvalidArgument("heating-rate list is empty");
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < heating_rates.size(); ++i) {
    SweepPoint pt;
    SystemParams p = base.with_heating_rate(heating_rates[i]);
    p.n_0 = opt.n_0;
    pt.heating_rate = heating_rates[i];
    pt.n_th = p.n_th;
    pt.n_0 = p.n_0;
    pt.result = repeat_optimize(layout, p, schedule, repeats, repeat_seed(base_seed, static_cast<int>(i) + 1000),
                                opt.repeat);
    pt.best_db = pt.result.summary.max_signed_db;
    pt.mean_db = pt.result.summary.mean_signed_db;
    pt.failed_runs = pt.result.summary.failed_runs;
    out.push_back(std::move(pt));
  }
  return out;
}

struct DetectionReport {
  double n_0 = 0.0;
  DetectionResult result;
  MatX landscape;
};

struct DetectionStudy {
  DetectionReport thermal;
  DetectionReport cooled;
};

/// Detection-angle search on the state produced by the pulse, once with the
/// system's initial occupation and once with a cooled one.
inline DetectionStudy detection_study(const SystemParams& p, const PulseConfig& pulse, double cooled_n0,
                                      const DetectionStrategy& strategy = {}, int landscape_n = 64,
                                      const IntegratorOptions& opt = {}) {
  const auto run = [&](double n0) {
    SystemParams q = p;
    q.n_0 = n0;
    DetectionReport r;
    r.n_0 = n0;
    const BipartiteCovariance v = extract_bipartite(integrate_covariance(q, pulse, initial_covariance(q), opt));
    r.result = detect_min_variance(v, strategy);
    if (landscape_n >= 2) r.landscape = angle_landscape(v, landscape_n);
    return r;
  };
  return {run(p.n_0), run(cooled_n0)};
}

}  // namespace optosqz
