#pragma once

// Local minimizers backed by GSL multimin: a bounded Nelder-Mead simplex search
// and BFGS over a box through a logistic change of variables.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>

#include "optosqz/errors.hpp"

namespace optosqz {

using VecX = Eigen::VectorXd;

struct LocalResult {
  VecX x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

namespace detail {

inline void quiet_gsl() {
  static const bool once = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)once;
}

inline VecX to_eigen(const gsl_vector* v) {
  VecX x(static_cast<Eigen::Index>(v->size));
  for (std::size_t i = 0; i < v->size; ++i) x(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
  return x;
}

struct GslVectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
using GslVector = std::unique_ptr<gsl_vector, GslVectorDeleter>;

inline GslVector from_eigen(const VecX& x) {
  GslVector v(gsl_vector_alloc(static_cast<std::size_t>(x.size())));
  for (Eigen::Index i = 0; i < x.size(); ++i) gsl_vector_set(v.get(), static_cast<std::size_t>(i), x(i));
  return v;
}

}  // namespace detail

/// Nelder-Mead over the box [lo, hi]. Trial points are projected onto the box
/// before evaluation; the returned point is always feasible.
inline LocalResult nelder_mead_box(const std::function<double(const VecX&)>& f, const VecX& x0, const VecX& lo,
                                   const VecX& hi, const VecX& step, int max_evals, double size_tol = 1e-10) {
  detail::quiet_gsl();
  const auto n = static_cast<std::size_t>(x0.size());
  struct Ctx {
    const std::function<double(const VecX&)>* f;
    const VecX* lo;
    const VecX* hi;
    LocalResult best;
  } ctx{&f, &lo, &hi, {x0.cwiseMax(lo).cwiseMin(hi), std::numeric_limits<double>::infinity(), 0}};

  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) {
    auto* c = static_cast<Ctx*>(params);
    const VecX x = detail::to_eigen(v).cwiseMax(*c->lo).cwiseMin(*c->hi);
    const double y = (*c->f)(x);
    ++c->best.evaluations;
    if (y < c->best.value) {
      c->best.value = y;
      c->best.x = x;
    }
    return std::isfinite(y) ? y : std::numeric_limits<double>::max();
  };

  if (n == 0) return ctx.best;
  const detail::GslVector start = detail::from_eigen(ctx.best.x);
  const detail::GslVector steps = detail::from_eigen(step);
  std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> s(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);
  gsl_multimin_fminimizer_set(s.get(), &fn, start.get(), steps.get());
  while (ctx.best.evaluations < max_evals) {
    if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s.get()), size_tol) == GSL_SUCCESS) break;
  }
  return ctx.best;
}

/// Objective that also fills its gradient.
using SmoothObjective = std::function<double(const VecX&, VecX&)>;

/// BFGS over the box [lo, hi] using x = lo + (hi - lo) * sigmoid(z). Bounds are
/// never reached exactly, which suits log-scale hyperparameters.
inline LocalResult bfgs_box(const SmoothObjective& f, const VecX& x0, const VecX& lo, const VecX& hi, int max_iter,
                            double grad_tol = 1e-6) {
  detail::quiet_gsl();
  const auto n = static_cast<std::size_t>(x0.size());
  struct Ctx {
    const SmoothObjective* f;
    VecX lo;
    VecX width;
    LocalResult best;
  } ctx{&f, lo, hi - lo, {x0, std::numeric_limits<double>::infinity(), 0}};

  const auto map = [](const Ctx& c, const VecX& z, VecX& ds) {
    const VecX sig = (1.0 + (-z.array()).exp()).inverse().matrix();
    ds = c.width.cwiseProduct(sig.cwiseProduct((1.0 - sig.array()).matrix()));
    return VecX(c.lo + c.width.cwiseProduct(sig));
  };
  const auto evaluate = [map](Ctx& c, const gsl_vector* v, gsl_vector* grad) {
    VecX ds;
    const VecX x = map(c, detail::to_eigen(v), ds);
    VecX gx = VecX::Zero(x.size());
    const double y = (*c.f)(x, gx);
    ++c.best.evaluations;
    if (std::isfinite(y) && y < c.best.value) {
      c.best.value = y;
      c.best.x = x;
    }
    if (grad != nullptr)
      for (std::size_t i = 0; i < grad->size; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        gsl_vector_set(grad, i, std::isfinite(y) ? gx(k) * ds(k) : 0.0);
      }
    return std::isfinite(y) ? y : std::numeric_limits<double>::max();
  };

  struct Bundle {
    Ctx* ctx;
    const decltype(evaluate)* eval;
  } bundle{&ctx, &evaluate};

  gsl_multimin_function_fdf fn;
  fn.n = n;
  fn.params = &bundle;
  fn.f = [](const gsl_vector* v, void* p) {
    auto* b = static_cast<Bundle*>(p);
    return (*b->eval)(*b->ctx, v, nullptr);
  };
  fn.df = [](const gsl_vector* v, void* p, gsl_vector* g) {
    auto* b = static_cast<Bundle*>(p);
    (*b->eval)(*b->ctx, v, g);
  };
  fn.fdf = [](const gsl_vector* v, void* p, double* y, gsl_vector* g) {
    auto* b = static_cast<Bundle*>(p);
    *y = (*b->eval)(*b->ctx, v, g);
  };

  // inverse logistic of the start point, kept away from the bounds
  VecX z0(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    const double u = std::clamp((x0(i) - lo(i)) / (hi(i) - lo(i)), 1e-6, 1.0 - 1e-6);
    z0(i) = std::log(u / (1.0 - u));
  }
  const detail::GslVector start = detail::from_eigen(z0);
  std::unique_ptr<gsl_multimin_fdfminimizer, decltype(&gsl_multimin_fdfminimizer_free)> s(
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n), &gsl_multimin_fdfminimizer_free);
  gsl_multimin_fdfminimizer_set(s.get(), &fn, start.get(), 0.1, 0.1);
  for (int it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fdfminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_test_gradient(gsl_multimin_fdfminimizer_gradient(s.get()), grad_tol) == GSL_SUCCESS) break;
  }
  return ctx.best;
}

}  // namespace optosqz
