#pragma once

// Gaussian-process regression with a Matern-5/2 ARD kernel and constant mean.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "optosqz/errors.hpp"
#include "optosqz/optim.hpp"

namespace optosqz {

using MatX = Eigen::MatrixXd;

/// Kernel and noise hyperparameters. Variances refer to standardized outputs
/// when standardization is enabled.
struct GpHyper {
  VecX lengthscales;
  double signal_var = 1.0;
  double noise_var = 1e-6;
};

struct GpConfig {
  bool standardize = true;
  bool fit_noise = true;
  /// Noise variance used when fit_noise is false.
  double noise_var = 1e-8;
  int restarts = 3;
  int max_iter = 60;
  double lengthscale_min = 1e-2;
  double lengthscale_max = 20.0;
  double signal_var_min = 1e-2;
  double signal_var_max = 1e2;
  double noise_var_min = 1e-8;
  double noise_var_max = 1.0;
  /// Largest relative diagonal jitter tried before giving up on a Gram matrix.
  double max_jitter = 1e-4;
};

struct Posterior {
  double mean;
  double std;
};

namespace detail {

inline double matern52(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

}  // namespace detail

/// GP posterior conditioned on a training set. Hyperparameters are fixed once
/// constructed; add_point extends the Cholesky factor by one row.
class GpSurrogate {
 public:
  GpSurrogate() = default;

  GpSurrogate(MatX inputs, VecX outputs, GpHyper hyper, const GpConfig& config)
      : x_(std::move(inputs)), y_(std::move(outputs)), hyper_(std::move(hyper)), config_(config) {
    if (x_.rows() != y_.size()) throw InvalidArgument("GP inputs and outputs differ in length");
    if (x_.rows() < 1) throw InvalidArgument("GP needs at least one training point");
    if (hyper_.lengthscales.size() != x_.cols()) throw InvalidArgument("GP lengthscale count does not match dimension");
    refactor();
  }

  [[nodiscard]] Posterior posterior(const VecX& x) const {
    const VecX k = cross(x, x_.rows());
    const double m = k.dot(alpha_);
    const VecX v = lower_.triangularView<Eigen::Lower>().solve(k);
    const double var = std::max(0.0, hyper_.signal_var - v.squaredNorm());
    return {offset_ + scale_ * m, scale_ * std::sqrt(var)};
  }

  /// Posterior mean and std for every row of xs.
  void posterior_batch(const MatX& xs, VecX& mean, VecX& std) const {
    MatX k(x_.rows(), xs.rows());
    for (Eigen::Index j = 0; j < xs.rows(); ++j) k.col(j) = cross(xs.row(j).transpose(), x_.rows());
    mean = ((k.transpose() * alpha_).array() * scale_ + offset_).matrix();
    lower_.triangularView<Eigen::Lower>().solveInPlace(k);
    const Eigen::ArrayXd reduced = k.colwise().squaredNorm().transpose().array();
    std = ((hyper_.signal_var - reduced).max(0.0).sqrt() * scale_).matrix();
  }

  /// Appends one observation without refitting the hyperparameters.
  void add_point(const VecX& x, double y) {
    const Eigen::Index n = x_.rows();
    const VecX k = cross(x, n);
    const VecX l = lower_.triangularView<Eigen::Lower>().solve(k);
    const double d2 = hyper_.signal_var + hyper_.noise_var + jitter_ - l.squaredNorm();
    x_.conservativeResize(n + 1, Eigen::NoChange);
    x_.row(n) = x.transpose();
    y_.conservativeResize(n + 1);
    y_(n) = y;
    if (!(d2 > 1e-10 * hyper_.signal_var)) {
      refactor();
      return;
    }
    lower_.conservativeResize(n + 1, n + 1);
    lower_.topRightCorner(n, 1).setZero();
    lower_.block(n, 0, 1, n) = l.transpose();
    lower_(n, n) = std::sqrt(d2);
    restandardize();
  }

  [[nodiscard]] const MatX& inputs() const { return x_; }
  [[nodiscard]] const VecX& outputs() const { return y_; }
  [[nodiscard]] const GpHyper& hyper() const { return hyper_; }
  [[nodiscard]] const GpConfig& config() const { return config_; }
  [[nodiscard]] Eigen::Index size() const { return x_.rows(); }
  [[nodiscard]] double y_best() const { return y_.minCoeff(); }
  /// Observation noise variance in output units.
  [[nodiscard]] double noise_var() const { return hyper_.noise_var * scale_ * scale_; }
  /// Prior standard deviation in output units.
  [[nodiscard]] double prior_std() const { return std::sqrt(hyper_.signal_var) * scale_; }
  [[nodiscard]] double jitter() const { return jitter_; }

 private:
  [[nodiscard]] VecX cross(const VecX& x, Eigen::Index rows) const {
    VecX k(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double r = (x_.row(i).transpose() - x).cwiseQuotient(hyper_.lengthscales).norm();
      k(i) = hyper_.signal_var * detail::matern52(r);
    }
    return k;
  }

  void refactor() {
    const Eigen::Index n = x_.rows();
    MatX kern(n, n);
    for (Eigen::Index i = 0; i < n; ++i) kern.col(i) = cross(x_.row(i).transpose(), n);
    kern = (0.5 * (kern + kern.transpose())).eval();
    jitter_ = 0.0;
    for (;;) {
      MatX kn = kern;
      kn.diagonal().array() += hyper_.noise_var + jitter_;
      Eigen::LLT<MatX> llt(kn);
      if (llt.info() == Eigen::Success) {
        lower_ = llt.matrixL();
        break;
      }
      jitter_ = jitter_ == 0.0 ? 1e-10 * hyper_.signal_var : jitter_ * 10.0;
      if (jitter_ > config_.max_jitter * hyper_.signal_var)
        throw IllConditioned("GP Gram matrix is not positive definite after jitter escalation");
    }
    restandardize();
  }

  void restandardize() {
    offset_ = 0.0;
    scale_ = 1.0;
    if (config_.standardize) {
      offset_ = y_.mean();
      const double var =
          y_.size() > 1 ? (y_.array() - offset_).square().sum() / static_cast<double>(y_.size() - 1) : 0.0;
      scale_ = var > 1e-300 ? std::sqrt(var) : 1.0;
    }
    alpha_ = ((y_.array() - offset_) / scale_).matrix();
    lower_.triangularView<Eigen::Lower>().solveInPlace(alpha_);
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
  }

  MatX x_;
  VecX y_;
  GpHyper hyper_;
  GpConfig config_;
  MatX lower_;
  VecX alpha_;
  double offset_ = 0.0;
  double scale_ = 1.0;
  double jitter_ = 0.0;
};

/// Negative log marginal likelihood of outputs ys (already standardized) and
/// its gradient with respect to theta = (log lengthscales, log signal_var, log noise_var).
inline double gp_neg_log_marginal(const MatX& x, const VecX& ys, const GpHyper& h, VecX* grad) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  MatX kern(n, n);
  MatX sdecay(n, n);  // (5/3) s2 (1 + sqrt5 r) e^{-sqrt5 r}
  for (Eigen::Index i = 0; i < n; ++i) {
    kern(i, i) = h.signal_var;
    sdecay(i, i) = h.signal_var * 5.0 / 3.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r = (x.row(i) - x.row(j)).transpose().cwiseQuotient(h.lengthscales).norm();
      const double s = std::sqrt(5.0) * r;
      kern(i, j) = kern(j, i) = h.signal_var * detail::matern52(r);
      sdecay(i, j) = sdecay(j, i) = h.signal_var * 5.0 / 3.0 * (1.0 + s) * std::exp(-s);
    }
  }
  MatX kn = kern;
  kn.diagonal().array() += h.noise_var + 1e-10 * h.signal_var;
  Eigen::LLT<MatX> llt(kn);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const VecX alpha = llt.solve(ys);
  const double logdet = 2.0 * MatX(llt.matrixL()).diagonal().array().log().sum();
  const double nll =
      0.5 * ys.dot(alpha) + 0.5 * logdet + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (grad == nullptr) return nll;

  // dNLL/dtheta = -1/2 tr(W dK/dtheta), W = alpha alpha^T - K^-1
  const MatX w = alpha * alpha.transpose() - llt.solve(MatX::Identity(n, n));
  const MatX ws = w.cwiseProduct(sdecay);
  grad->resize(d + 2);
  for (Eigen::Index c = 0; c < d; ++c) {
    // dK_ij/dlog l_c = (5/3) s2 (1 + sqrt5 r) e^{-sqrt5 r} (dx_c / l_c)^2
    const VecX col = x.col(c) / h.lengthscales(c);
    const VecX sq = col.cwiseAbs2();
    // sum_ij ws_ij (col_i - col_j)^2 = 2 sum_i sq_i rowsum_i - 2 col^T ws col
    const double acc = 2.0 * sq.dot(ws.rowwise().sum()) - 2.0 * col.dot(ws * col);
    (*grad)(c) = -0.5 * acc;
  }
  (*grad)(d) = -0.5 * w.cwiseProduct(kern).sum();
  (*grad)(d + 1) = -0.5 * h.noise_var * w.trace();
  return nll;
}

/// Fits hyperparameters by maximizing the log marginal likelihood from several
/// starts (the warm start, a default guess and random draws) and conditions on the data.
template <class Rng>
GpSurrogate gp_fit(const MatX& inputs, const VecX& outputs, const GpConfig& config, Rng& rng,
                   const std::optional<GpHyper>& warm = std::nullopt) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = inputs.cols();
  if (n < 2) throw InvalidArgument("gp_fit needs at least 2 points");
  if (outputs.size() != n) throw InvalidArgument("GP inputs and outputs differ in length");

  VecX ys = outputs;
  if (config.standardize) {
    const double m = ys.mean();
    const double var = (ys.array() - m).square().sum() / static_cast<double>(n - 1);
    ys = ((ys.array() - m) / (var > 1e-300 ? std::sqrt(var) : 1.0)).matrix();
  }

  const auto k = d + 2;
  VecX lo(k);
  VecX hi(k);
  lo.head(d).setConstant(std::log(config.lengthscale_min));
  hi.head(d).setConstant(std::log(config.lengthscale_max));
  lo(d) = std::log(config.signal_var_min);
  hi(d) = std::log(config.signal_var_max);
  if (config.fit_noise) {
    lo(d + 1) = std::log(config.noise_var_min);
    hi(d + 1) = std::log(config.noise_var_max);
  } else {
    const double fixed = std::log(std::max(config.noise_var, 1e-300));
    lo(d + 1) = fixed - 1e-9;
    hi(d + 1) = fixed + 1e-9;
  }

  const auto unpack = [d](const VecX& theta) {
    GpHyper h;
    h.lengthscales = theta.head(d).array().exp();
    h.signal_var = std::exp(theta(d));
    h.noise_var = std::exp(theta(d + 1));
    return h;
  };
  const SmoothObjective nll = [&](const VecX& theta, VecX& grad) {
    const double v = gp_neg_log_marginal(inputs, ys, unpack(theta), &grad);
    if (!config.fit_noise) grad(d + 1) = 0.0;
    return v;
  };

  std::vector<VecX> starts;
  if (warm && warm->lengthscales.size() == d) {
    VecX t(k);
    t.head(d) = warm->lengthscales.array().log();
    t(d) = std::log(warm->signal_var);
    t(d + 1) = std::log(warm->noise_var);
    starts.push_back(t.cwiseMax(lo).cwiseMin(hi));
  }
  {
    VecX t(k);
    t.head(d).setConstant(std::log(0.3 * std::sqrt(static_cast<double>(d))));
    t(d) = 0.0;
    t(d + 1) = config.fit_noise ? std::log(1e-4) : lo(d + 1);
    starts.push_back(t.cwiseMax(lo).cwiseMin(hi));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(starts.size()) < config.restarts + 1) {
    VecX t(k);
    for (Eigen::Index i = 0; i < k; ++i) t(i) = lo(i) + (hi(i) - lo(i)) * (0.15 + 0.7 * u(rng));
    starts.push_back(t);
  }

  LocalResult best;
  for (const VecX& s : starts) {
    LocalResult r = bfgs_box(nll, s, lo, hi, config.max_iter, 1e-5);
    if (r.x.size() == k && r.value < best.value) best = std::move(r);
  }
  GpHyper h = best.x.size() == k ? unpack(best.x) : unpack(starts.front());
  if (!config.fit_noise) h.noise_var = config.noise_var;
  return GpSurrogate(inputs, outputs, h, config);
}

}  // namespace optosqz
