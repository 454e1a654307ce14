#pragma once

// Bounded Bayesian optimization with a GP surrogate: Latin-hypercube initial
// design, expected-improvement exploration and lower-confidence-bound
// exploitation inside a trust region around the incumbent.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "optosqz/errors.hpp"
#include "optosqz/gp.hpp"
#include "optosqz/optim.hpp"

namespace optosqz {

struct Bounds {
  VecX lo;
  VecX hi;

  Bounds() = default;
  Bounds(VecX lower, VecX upper) : lo(std::move(lower)), hi(std::move(upper)) { validate(); }

  static Bounds unit(Eigen::Index d) { return {VecX::Zero(d), VecX::Ones(d)}; }

  [[nodiscard]] Eigen::Index dims() const { return lo.size(); }
  [[nodiscard]] VecX width() const { return hi - lo; }

  void validate() const {
    if (lo.size() != hi.size() || lo.size() == 0) throw InvalidArgument("bounds need matching, non-empty lo and hi");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo(i) < hi(i))) throw InvalidArgument("bounds need lo < hi in dimension " + std::to_string(i));
  }
  [[nodiscard]] bool contains(const VecX& x) const {
    return x.size() == lo.size() && (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
  [[nodiscard]] VecX to_unit(const VecX& x) const { return (x - lo).cwiseQuotient(width()); }
  [[nodiscard]] VecX from_unit(const VecX& u) const {
    return (lo + u.cwiseProduct(width())).cwiseMax(lo).cwiseMin(hi);
  }
};

struct PhaseSchedule {
  int n_initial = 40;
  int n_explore = 40;
  int n_exploit = 20;

  [[nodiscard]] int total() const { return n_initial + n_explore + n_exploit; }
  void validate() const {
    if (n_initial < 1 || n_explore < 1 || n_exploit < 1) throw InvalidArgument("every BO phase needs at least one step");
  }
};

/// Latin-hypercube sample of n points in the unit cube of dimension d.
template <class Rng>
MatX latin_hypercube(int n, Eigen::Index d, Rng& rng) {
  if (n < 1) throw InvalidArgument("design size must be >= 1");
  MatX u(n, d);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) u(i, j) = (perm[static_cast<std::size_t>(i)] + unif(rng)) / n;
  }
  return u;
}

/// Latin-hypercube design of n points in the box, deterministic under seed.
inline MatX initial_design(const Bounds& bounds, int n, std::uint64_t seed) {
  bounds.validate();
  std::mt19937_64 rng(seed);
  MatX u = latin_hypercube(n, bounds.dims(), rng);
  for (Eigen::Index i = 0; i < u.rows(); ++i) u.row(i) = bounds.from_unit(u.row(i).transpose()).transpose();
  return u;
}

/// Expected improvement below y_best for a Gaussian prediction (mean, std).
inline double acquisition_ei(double mean, double std, double y_best) {
  if (std < 0.0) throw InvalidArgument("posterior std must be >= 0");
  const double d = y_best - mean;
  if (std == 0.0) return std::max(d, 0.0);
  const double z = d / std;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, d * cdf + std * pdf);
}

/// Negated lower confidence bound, so larger is better.
inline double acquisition_lcb(double mean, double std, double beta) {
  if (std < 0.0 || beta < 0.0) throw InvalidArgument("LCB needs std >= 0 and beta >= 0");
  return -(mean - beta * std);
}

struct Acquisition {
  enum class Kind { expected_improvement, lower_confidence_bound };
  Kind kind = Kind::expected_improvement;
  double beta = 0.5;

  static Acquisition ei() { return {}; }
  static Acquisition lcb(double beta) { return {Kind::lower_confidence_bound, beta}; }

  [[nodiscard]] double score(double mean, double std, double y_best) const {
    return kind == Kind::expected_improvement ? acquisition_ei(mean, std, y_best) : acquisition_lcb(mean, std, beta);
  }
};

struct ProposalConfig {
  int pool_size = 2000;
  int perturbations = 200;
  /// Std of incumbent perturbations relative to the region width.
  double perturb_scale = 0.05;
  int refine_evals = 150;
};

/// Maximizes the acquisition over the region: scores a Latin-hypercube pool plus
/// perturbations of the incumbent, then refines the best candidate with a bounded
/// simplex search. The model must be expressed in the region's coordinates.
template <class Rng>
VecX propose_next(const GpSurrogate& model, const Acquisition& acq, const Bounds& region, Rng& rng,
                  const ProposalConfig& cfg = {}) {
  region.validate();
  const Eigen::Index d = region.dims();
  if (model.size() == 0 || model.inputs().cols() != d) throw InvalidArgument("model and region dimensions differ");
  const double y_best = model.y_best();

  MatX pool = latin_hypercube(cfg.pool_size, d, rng);
  for (Eigen::Index i = 0; i < pool.rows(); ++i) pool.row(i) = region.from_unit(pool.row(i).transpose()).transpose();
  Eigen::Index inc = 0;
  model.outputs().minCoeff(&inc);
  const VecX incumbent = model.inputs().row(inc).transpose().cwiseMax(region.lo).cwiseMin(region.hi);
  {
    std::normal_distribution<double> z(0.0, 1.0);
    const Eigen::Index base = pool.rows();
    pool.conservativeResize(base + cfg.perturbations, Eigen::NoChange);
    for (Eigen::Index i = 0; i < cfg.perturbations; ++i) {
      VecX x = incumbent;
      for (Eigen::Index j = 0; j < d; ++j) x(j) += cfg.perturb_scale * region.width()(j) * z(rng);
      pool.row(base + i) = x.cwiseMax(region.lo).cwiseMin(region.hi).transpose();
    }
  }

  VecX mean;
  VecX std;
  model.posterior_batch(pool, mean, std);
  Eigen::Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < pool.rows(); ++i) {
    const double s = acq.score(mean(i), std(i), y_best);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  const VecX start = pool.row(best).transpose();
  if (cfg.refine_evals <= 0) return start;

  const auto neg = [&](const VecX& x) {
    const Posterior post = model.posterior(x);
    return -acq.score(post.mean, post.std, y_best);
  };
  const LocalResult r = nelder_mead_box(neg, start, region.lo, region.hi, 0.02 * region.width(), cfg.refine_evals);
  if (r.x.size() == d && -r.value > best_score) return r.x.cwiseMax(region.lo).cwiseMin(region.hi);
  return start;
}

/// Black-box objective to be minimized over the bounds. An optional transform
/// maps a point in the box to the argument of the evaluator.
struct OptimizationProblem {
  Bounds bounds;
  std::function<double(const VecX&)> objective;
  std::function<VecX(const VecX&)> transform;

  [[nodiscard]] double evaluate(const VecX& x) const { return objective(transform ? transform(x) : x); }
};

enum class BoPhase { initial, explore, exploit };

inline const char* to_string(BoPhase p) {
  switch (p) {
    case BoPhase::initial:
      return "initial";
    case BoPhase::explore:
      return "explore";
    case BoPhase::exploit:
      return "exploit";
  }
  return "?";
}

struct BoEvaluation {
  VecX x;
  /// Objective value; for a failed evaluation, the penalty assigned at that time.
  double value = 0.0;
  bool failed = false;
  std::string error;
  BoPhase phase = BoPhase::initial;
};

struct BoConfig {
  GpConfig gp;
  ProposalConfig proposal;
  double lcb_beta = 0.5;
  /// Half-width of the exploitation trust region relative to each bound range.
  double trust_region = 0.1;
  /// Hyperparameters are refitted when the data grows by this factor, and at phase changes.
  double refit_growth = 1.25;
  double failure_penalty_sd = 3.0;
};

struct BoHistory {
  std::vector<BoEvaluation> evaluations;
  /// Best successful value after each evaluation (+inf until the first success).
  std::vector<double> incumbent_trace;
  int best_index = -1;

  [[nodiscard]] double best_value() const {
    return best_index < 0 ? std::numeric_limits<double>::infinity()
                          : evaluations[static_cast<std::size_t>(best_index)].value;
  }
  [[nodiscard]] VecX best_x() const {
    return best_index < 0 ? VecX() : evaluations[static_cast<std::size_t>(best_index)].x;
  }
  [[nodiscard]] int failures() const {
    return static_cast<int>(std::count_if(evaluations.begin(), evaluations.end(), [](const auto& e) { return e.failed; }));
  }
};

namespace detail {

/// Worst successful value plus k standard deviations.
inline double failure_penalty(const std::vector<BoEvaluation>& evals, double k) {
  std::vector<double> ok;
  for (const auto& e : evals)
    if (!e.failed) ok.push_back(e.value);
  if (ok.empty()) return 1.0;
  const double worst = *std::max_element(ok.begin(), ok.end());
  double sd = 0.0;
  if (ok.size() > 1) {
    const double m = std::accumulate(ok.begin(), ok.end(), 0.0) / static_cast<double>(ok.size());
    for (double v : ok) sd += (v - m) * (v - m);
    sd = std::sqrt(sd / static_cast<double>(ok.size() - 1));
  }
  if (!(sd > 0.0)) sd = std::max(1.0, std::abs(worst));
  return worst + k * sd;
}

}  // namespace detail

/// Runs the three-phase schedule and returns every evaluation in order.
///
/// Objective failures (any optosqz::NumericError or a non-finite value) are kept
/// in the history with a penalty of the worst successful value plus
/// failure_penalty_sd standard deviations, so the surrogate learns to avoid them.
inline BoHistory run_bo(const OptimizationProblem& problem, const PhaseSchedule& schedule, std::uint64_t seed,
                        const BoConfig& cfg = {}) {
  problem.bounds.validate();
  schedule.validate();
  if (!problem.objective) throw InvalidArgument("optimization problem has no objective");
  const Eigen::Index d = problem.bounds.dims();
  std::mt19937_64 rng(seed);
  BoHistory hist;

  const auto evaluate = [&](const VecX& u, BoPhase phase) {
    BoEvaluation e;
    e.x = problem.bounds.from_unit(u);
    e.phase = phase;
    try {
      e.value = problem.evaluate(e.x);
      if (!std::isfinite(e.value)) throw EvaluationFailed("objective returned a non-finite value");
    } catch (const NumericError& err) {
      e.failed = true;
      e.error = err.what();
      e.value = detail::failure_penalty(hist.evaluations, cfg.failure_penalty_sd);
    }
    hist.evaluations.push_back(std::move(e));
    const auto& last = hist.evaluations.back();
    if (!last.failed && (hist.best_index < 0 || last.value < hist.best_value()))
      hist.best_index = static_cast<int>(hist.evaluations.size()) - 1;
    hist.incumbent_trace.push_back(hist.best_value());
  };

  const MatX design = latin_hypercube(schedule.n_initial, d, rng);
  for (Eigen::Index i = 0; i < design.rows(); ++i) evaluate(design.row(i).transpose(), BoPhase::initial);

  // Surrogate targets: failed points take the current penalty.
  const auto training = [&](MatX& x, VecX& y) {
    const auto n = static_cast<Eigen::Index>(hist.evaluations.size());
    const double penalty = detail::failure_penalty(hist.evaluations, cfg.failure_penalty_sd);
    x.resize(n, d);
    y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& e = hist.evaluations[static_cast<std::size_t>(i)];
      x.row(i) = problem.bounds.to_unit(e.x).transpose();
      y(i) = e.failed ? penalty : e.value;
    }
  };

  std::optional<GpSurrogate> model;
  std::optional<GpHyper> warm;
  Eigen::Index fitted_at = 0;
  const auto refit = [&] {
    MatX x;
    VecX y;
    training(x, y);
    model = gp_fit(x, y, cfg.gp, rng, warm);
    warm = model->hyper();
    fitted_at = x.rows();
  };
  const auto update = [&](bool phase_start) {
    const auto n = static_cast<Eigen::Index>(hist.evaluations.size());
    if (!model || phase_start || static_cast<double>(n) >= cfg.refit_growth * static_cast<double>(fitted_at)) {
      refit();
      return;
    }
    const auto& e = hist.evaluations.back();
    const double y = e.failed ? detail::failure_penalty(hist.evaluations, cfg.failure_penalty_sd) : e.value;
    try {
      model->add_point(problem.bounds.to_unit(e.x), y);
    } catch (const IllConditioned&) {
      refit();
    }
  };

  const Bounds unit = Bounds::unit(d);
  const auto step = [&](BoPhase phase, bool phase_start) {
    update(phase_start);
    VecX u;
    if (phase == BoPhase::explore) {
      u = propose_next(*model, Acquisition::ei(), unit, rng, cfg.proposal);
    } else {
      const VecX centre = problem.bounds.to_unit(hist.best_index >= 0 ? hist.best_x() : hist.evaluations.back().x);
      const VecX lo = (centre.array() - cfg.trust_region).cwiseMax(0.0);
      const VecX hi = (centre.array() + cfg.trust_region).cwiseMin(1.0);
      u = propose_next(*model, Acquisition::lcb(cfg.lcb_beta), Bounds(lo, hi), rng, cfg.proposal);
    }
    evaluate(u, phase);
  };

  for (int i = 0; i < schedule.n_explore; ++i) step(BoPhase::explore, i == 0);
  for (int i = 0; i < schedule.n_exploit; ++i) step(BoPhase::exploit, i == 0);
  return hist;
}

}  // namespace optosqz
