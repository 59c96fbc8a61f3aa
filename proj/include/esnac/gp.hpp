/*
 * Copyright 2026 The esnac Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

// Gaussian-process regression over learned embeddings, the losses used to
// fit the embedder, and the Adam loop that fits it.
//
// Embeddings are passed column-wise: E is (2H x n), one column per point.
// The kernel is k(a, b) = exp(-|a - b|^2 / (2 sigma^2)); with unit-norm
// embeddings k(a, a) = 1, which is also the prior variance.

#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "esnac/common.hpp"
#include "esnac/embedder.hpp"

namespace esnac {

struct KernelConfig {
  double sigma = 1.0;
  double noise = 1e-4;       // observation noise variance
  double jitter = 1e-8;      // first diagonal jitter tried
  double max_jitter = 1e-4;  // escalation (x10) stops here
};

inline Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& e, double sigma) {
  const Eigen::VectorXd sq = e.colwise().squaredNorm().transpose();
  Eigen::MatrixXd d2 = (-2.0 * e.transpose() * e).colwise() + sq;
  d2.rowwise() += sq.transpose();
  Eigen::MatrixXd k = (-d2.cwiseMax(0.0) / (2.0 * sigma * sigma)).array().exp().matrix();
  k.diagonal().setOnes();
  return k;
}

/// k(e_i, x_j) for training columns e and query columns x, (n x m).
inline Eigen::MatrixXd rbf_cross(const Eigen::MatrixXd& e, const Eigen::MatrixXd& x, double sigma) {
  const Eigen::VectorXd se = e.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd sx = x.colwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * e.transpose() * x).colwise() + se;
  d2.rowwise() += sx;
  return (-d2.cwiseMax(0.0) / (2.0 * sigma * sigma)).array().exp().matrix();
}

/// Cholesky factor of A = K + (noise + jitter) I, escalating the jitter by
/// factors of 10 until the factorization succeeds.
struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  Eigen::MatrixXd inverse() const {
    return llt.solve(Eigen::MatrixXd::Identity(llt.rows(), llt.cols()));
  }
  double log_det() const { return 2.0 * llt.matrixLLT().diagonal().array().log().sum(); }
};

inline Factorization factorize(const Eigen::MatrixXd& k, const KernelConfig& cfg) {
  if (!k.allFinite()) throw NumericalFailure("kernel matrix has non-finite entries");
  Factorization f;
  for (double jitter = cfg.jitter; jitter <= cfg.max_jitter * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += cfg.noise + jitter;
    f.llt.compute(a);
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().minCoeff() > 0.0 &&
        f.llt.matrixLLT().allFinite()) {
      f.jitter = jitter;
      return f;
    }
  }
  throw NumericalFailure("Cholesky factorization failed with jitter up to " + std::to_string(cfg.max_jitter));
}

struct Posterior {
  double mean = 0.0;
  double variance = 1.0;  // latent, excludes observation noise
};

/// GP conditioned on (embedding, reward) pairs with a constant prior mean
/// equal to the average observed reward (0 when there is no data).
class GaussianProcess {
 public:
  GaussianProcess() = default;
  GaussianProcess(Eigen::MatrixXd embeddings, Eigen::VectorXd y, KernelConfig cfg = {})
      : e_(std::move(embeddings)), y_(std::move(y)), cfg_(cfg) {
    if (e_.cols() != y_.size()) throw DimensionMismatch("embedding count does not match target count");
    if (y_.size() == 0) return;
    prior_mean_ = y_.mean();
    fact_ = factorize(rbf_gram(e_, cfg_.sigma), cfg_);
    alpha_ = fact_.llt.solve((y_.array() - prior_mean_).matrix());
  }

  std::size_t size() const { return static_cast<std::size_t>(y_.size()); }
  double prior_mean() const { return prior_mean_; }
  double jitter() const { return fact_.jitter; }
  const KernelConfig& config() const { return cfg_; }

  /// Posterior at each column of `x`.
  std::vector<Posterior> predict(const Eigen::MatrixXd& x) const {
    std::vector<Posterior> out(static_cast<std::size_t>(x.cols()));
    if (y_.size() == 0) {
      for (auto& p : out) p = {0.0, 1.0};
      return out;
    }
    if (x.rows() != e_.rows()) throw DimensionMismatch("query embedding has the wrong length");
    const Eigen::MatrixXd ks = rbf_cross(e_, x, cfg_.sigma);
    const Eigen::VectorXd mean = (ks.transpose() * alpha_).array() + prior_mean_;
    const Eigen::MatrixXd v = fact_.llt.matrixL().solve(ks);
    const Eigen::VectorXd reduction = v.colwise().squaredNorm().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out[static_cast<std::size_t>(j)] = {mean[j], std::max(0.0, 1.0 - reduction[j])};
    return out;
  }

  Posterior predict_one(const Eigen::VectorXd& x) const { return predict(x).front(); }

 private:
  Eigen::MatrixXd e_;
  Eigen::VectorXd y_;
  KernelConfig cfg_;
  double prior_mean_ = 0.0;
  Factorization fact_;
  Eigen::VectorXd alpha_;
};

// ---------------------------------------------------------------------------
// Kernel-fitting losses. Each returns the loss and its gradient with respect
// to every embedding column.

enum class KernelObjective { kLeaveOneOut, kMarginalLikelihood, kEuclidean };

inline std::string_view to_string(KernelObjective o) {
  switch (o) {
    case KernelObjective::kLeaveOneOut: return "loo";
    case KernelObjective::kMarginalLikelihood: return "marginal";
    case KernelObjective::kEuclidean: return "euclidean";
  }
  return "loo";
}

inline std::optional<KernelObjective> kernel_objective_from_string(std::string_view s) {
  if (s == "loo" || s == "loo_posterior") return KernelObjective::kLeaveOneOut;
  if (s == "marginal" || s == "marginal_likelihood") return KernelObjective::kMarginalLikelihood;
  if (s == "euclidean") return KernelObjective::kEuclidean;
  return std::nullopt;
}

struct LossResult {
  double value = 0.0;
  Eigen::MatrixXd grad;  // same shape as the embeddings; empty if not requested
};

namespace detail {

/// Chains dL/dK through K_ij = exp(-|e_i - e_j|^2 / (2 sigma^2)).
inline Eigen::MatrixXd grad_through_rbf(const Eigen::MatrixXd& e, const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& g_k, double sigma) {
  // W_ij = (G_ij + G_ji) K_ij / sigma^2, zero diagonal.
  Eigen::MatrixXd w = ((g_k + g_k.transpose()).array() * k.array()).matrix() / (sigma * sigma);
  w.diagonal().setZero();
  // dL/de_i = -sum_j W_ij (e_i - e_j) = -(e_i * rowsum_i - sum_j W_ij e_j)
  const Eigen::VectorXd rowsum = w.rowwise().sum();
  return -(e * rowsum.asDiagonal()) + e * w;
}

}  // namespace detail

/// Mean negative log predictive density of each point under the GP fitted to
/// the other n-1 points (prior mean of each refit = mean of its n-1 targets).
/// A single point is scored under the prior N(0, 1 + noise + jitter), which
/// does not depend on the embedding.
inline LossResult loo_loss(const Eigen::MatrixXd& e, const Eigen::VectorXd& y, const KernelConfig& cfg,
                           bool with_grad = true) {
  const Eigen::Index n = y.size();
  if (n < 1) throw DimensionMismatch("leave-one-out loss needs at least 1 point");
  if (n == 1) {
    const double var = 1.0 + cfg.noise + cfg.jitter;
    LossResult out;
    out.value = 0.5 * std::log(2.0 * std::numbers::pi * var) + y[0] * y[0] / (2.0 * var);
    if (with_grad) out.grad = Eigen::MatrixXd::Zero(e.rows(), e.cols());
    return out;
  }
  const Eigen::MatrixXd k = rbf_gram(e, cfg.sigma);
  const Factorization f = factorize(k, cfg);
  const Eigen::MatrixXd b_inv = f.inverse();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd a = b_inv * y;
  const Eigen::VectorXd b = b_inv * ones;
  const Eigen::VectorXd diag = b_inv.diagonal();
  const Eigen::VectorXd m = (y.sum() - y.array()) / static_cast<double>(n - 1);
  const Eigen::VectorXd q = (a.array() - m.array() * b.array()) / diag.array();

  LossResult out;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  out.value = (half_log_2pi - 0.5 * diag.array().log() + 0.5 * q.array().square() * diag.array()).sum() /
              static_cast<double>(n);
  if (!std::isfinite(out.value)) throw NonFiniteLoss("leave-one-out loss is not finite");
  if (!with_grad) return out;

  Eigen::MatrixXd g_b = q * y.transpose() - (m.array() * q.array()).matrix() * ones.transpose();
  g_b.diagonal().array() += -0.5 / diag.array() - 0.5 * q.array().square();
  g_b /= static_cast<double>(n);
  const Eigen::MatrixXd g_k = -b_inv * g_b * b_inv;
  out.grad = detail::grad_through_rbf(e, k, g_k, cfg.sigma);
  return out;
}

/// Leave-one-out predictive (mean, variance) for every point, variance
/// including observation noise and jitter.
inline std::vector<Posterior> loo_predictions(const Eigen::MatrixXd& e, const Eigen::VectorXd& y,
                                              const KernelConfig& cfg) {
  const Eigen::Index n = y.size();
  if (n < 2) throw DimensionMismatch("leave-one-out predictions need at least 2 points");
  const Factorization f = factorize(rbf_gram(e, cfg.sigma), cfg);
  const Eigen::MatrixXd b_inv = f.inverse();
  const Eigen::VectorXd a = b_inv * y;
  const Eigen::VectorXd b = b_inv * Eigen::VectorXd::Ones(n);
  std::vector<Posterior> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = (y.sum() - y[i]) / static_cast<double>(n - 1);
    const double bii = b_inv(i, i);
    out[static_cast<std::size_t>(i)] = {y[i] - a[i] / bii + m * b[i] / bii, 1.0 / bii};
  }
  return out;
}

/// Negative log marginal likelihood of the centred targets.
inline LossResult marginal_loss(const Eigen::MatrixXd& e, const Eigen::VectorXd& y, const KernelConfig& cfg,
                                bool with_grad = true) {
  const Eigen::Index n = y.size();
  if (n < 1) throw DimensionMismatch("marginal likelihood needs at least 1 point");
  const Eigen::MatrixXd k = rbf_gram(e, cfg.sigma);
  const Factorization f = factorize(k, cfg);
  const Eigen::VectorXd yc = (y.array() - y.mean()).matrix();
  const Eigen::VectorXd alpha = f.llt.solve(yc);
  LossResult out;
  out.value = 0.5 * yc.dot(alpha) + 0.5 * f.log_det() + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(out.value)) throw NonFiniteLoss("marginal likelihood is not finite");
  if (!with_grad) return out;
  const Eigen::MatrixXd g_k = 0.5 * (f.inverse() - alpha * alpha.transpose());
  out.grad = detail::grad_through_rbf(e, k, g_k, cfg.sigma);
  return out;
}

/// Linear read-out used by the Euclidean objective.
struct RegressionHead {
  Eigen::VectorXd weight;
  double bias = 0.0;
};

/// Mean squared error of weight . e_i + bias against y_i. Gradients for the
/// head are written to `head_grad` when given.
inline LossResult euclidean_loss(const Eigen::MatrixXd& e, const Eigen::VectorXd& y, const RegressionHead& head,
                                 bool with_grad = true, RegressionHead* head_grad = nullptr) {
  const Eigen::Index n = y.size();
  if (n < 1) throw DimensionMismatch("regression loss needs at least 1 point");
  if (head.weight.size() != e.rows()) throw DimensionMismatch("regression head width does not match embeddings");
  const Eigen::VectorXd r = (e.transpose() * head.weight).array() + head.bias - y.array();
  LossResult out;
  out.value = r.squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(out.value)) throw NonFiniteLoss("regression loss is not finite");
  if (!with_grad) return out;
  const Eigen::VectorXd s = 2.0 * r / static_cast<double>(n);
  out.grad = head.weight * s.transpose();
  if (head_grad) {
    head_grad->weight = e * s;
    head_grad->bias = s.sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  KernelObjective objective = KernelObjective::kLeaveOneOut;
  int epochs = 200;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_restarts = 3;  // on numerical failure: restart from the initial weights at half the rate
};

struct TrainResult {
  EmbedderParams params;
  RegressionHead head;        // used by the Euclidean objective only
  double initial_loss = 0.0;  // at the initial weights
  double best_loss = 0.0;     // at the returned weights
  int restarts = 0;
  std::vector<double> history;  // loss at each iterate, starting with the initial weights
};

namespace detail {

inline Eigen::MatrixXd embed_all(const EmbedderParams& p, const std::vector<Eigen::MatrixXd>& xs,
                                 std::vector<EmbedTape>& tapes) {
  tapes.resize(xs.size());
  Eigen::MatrixXd e(2 * p.hidden_size, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) e.col(static_cast<Eigen::Index>(i)) = embed(p, xs[i], tapes[i]);
  return e;
}

/// Loss and flattened gradient (embedder weights, then head weights and bias).
inline double objective_and_grad(const EmbedderParams& p, const RegressionHead& head,
                                 const std::vector<Eigen::MatrixXd>& xs, const Eigen::VectorXd& y,
                                 const KernelConfig& kcfg, KernelObjective objective, Eigen::VectorXd* grad) {
  std::vector<EmbedTape> tapes;
  const Eigen::MatrixXd e = embed_all(p, xs, tapes);
  if (!e.allFinite()) throw NonFiniteLoss("embeddings are not finite");
  LossResult loss;
  RegressionHead head_grad;
  switch (objective) {
    case KernelObjective::kLeaveOneOut: loss = loo_loss(e, y, kcfg, grad != nullptr); break;
    case KernelObjective::kMarginalLikelihood: loss = marginal_loss(e, y, kcfg, grad != nullptr); break;
    case KernelObjective::kEuclidean: loss = euclidean_loss(e, y, head, grad != nullptr, &head_grad); break;
  }
  if (grad) {
    EmbedderParams g = p.zeros_like();
    for (std::size_t i = 0; i < xs.size(); ++i) embed_backward(p, tapes[i], loss.grad.col(static_cast<Eigen::Index>(i)), g);
    const Eigen::VectorXd flat = g.flatten();
    if (objective == KernelObjective::kEuclidean) {
      grad->resize(flat.size() + head.weight.size() + 1);
      *grad << flat, head_grad.weight, head_grad.bias;
    } else {
      *grad = flat;
    }
    if (!grad->allFinite()) throw NonFiniteLoss("gradient is not finite");
  }
  return loss.value;
}

}  // namespace detail

/// Loss of the embedder on a data set, without gradients.
inline double kernel_loss(const EmbedderParams& p, const std::vector<SequenceEncoding>& xs, const Eigen::VectorXd& y,
                          const KernelConfig& kcfg, KernelObjective objective, const RegressionHead& head = {}) {
  std::vector<Eigen::MatrixXd> mats;
  for (const auto& s : xs) mats.push_back(to_matrix(s));
  return detail::objective_and_grad(p, head, mats, y, kcfg, objective, nullptr);
}

/// Default read-out for the Euclidean objective: small uniform weights and
/// the mean target as bias.
inline RegressionHead init_head(std::uint64_t seed, int width, const Eigen::VectorXd& y) {
  Rng rng(seed);
  RegressionHead h;
  h.weight.resize(width);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  for (Eigen::Index k = 0; k < width; ++k) h.weight[k] = (2.0 * uniform01(rng) - 1.0) * bound;
  h.bias = y.size() ? y.mean() : 0.0;
  return h;
}

/// Full-batch Adam on the embedder weights (and the regression head for the
/// Euclidean objective). Returns the post-step iterate with the lowest loss.
/// On a numerical failure training restarts from `init` with half the
/// learning rate, up to cfg.max_restarts times.
inline TrainResult train_kernel(const EmbedderParams& init, const std::vector<SequenceEncoding>& xs,
                                const Eigen::VectorXd& y, const KernelConfig& kcfg, const TrainConfig& cfg,
                                std::optional<RegressionHead> head = std::nullopt, std::uint64_t head_seed = 0) {
  if (static_cast<Eigen::Index>(xs.size()) != y.size()) throw DimensionMismatch("input and target counts differ");
  if (cfg.epochs < 1) throw DimensionMismatch("training needs at least one epoch");
  std::vector<Eigen::MatrixXd> mats;
  mats.reserve(xs.size());
  for (const auto& s : xs) mats.push_back(to_matrix(s));

  const bool euclid = cfg.objective == KernelObjective::kEuclidean;
  const RegressionHead head0 = euclid ? (head ? *head : init_head(head_seed, 2 * init.hidden_size, y)) : RegressionHead{};
  const Eigen::Index n_embed = static_cast<Eigen::Index>(init.num_params());

  auto unpack = [&](const Eigen::VectorXd& theta, EmbedderParams& p, RegressionHead& h) {
    p.unflatten(theta.head(n_embed));
    if (euclid) {
      h.weight = theta.segment(n_embed, head0.weight.size());
      h.bias = theta[theta.size() - 1];
    }
  };
  Eigen::VectorXd theta0 = init.flatten();
  if (euclid) {
    Eigen::VectorXd t(theta0.size() + head0.weight.size() + 1);
    t << theta0, head0.weight, head0.bias;
    theta0 = t;
  }

  std::string last_error;
  double lr = cfg.learning_rate;
  for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt, lr *= 0.5) {
    try {
      TrainResult res;
      res.restarts = attempt;
      EmbedderParams p = init;
      RegressionHead h = head0;
      Eigen::VectorXd theta = theta0;
      Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size()), v = Eigen::VectorXd::Zero(theta.size());
      Eigen::VectorXd grad;
      double best = std::numeric_limits<double>::infinity();
      Eigen::VectorXd best_theta;
      for (int t = 0; t <= cfg.epochs; ++t) {
        unpack(theta, p, h);
        const bool step = t < cfg.epochs;
        const double loss = detail::objective_and_grad(p, h, mats, y, kcfg, cfg.objective, step ? &grad : nullptr);
        res.history.push_back(loss);
        if (t == 0) res.initial_loss = loss;
        if (t > 0 && loss < best) {
          best = loss;
          best_theta = theta;
        }
        if (!step) break;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(cfg.beta1, t + 1), c2 = 1.0 - std::pow(cfg.beta2, t + 1);
        theta -= lr * ((m / c1).array() / ((v / c2).array().sqrt() + cfg.epsilon)).matrix();
        if (!theta.allFinite()) throw NonFiniteLoss("weights became non-finite");
      }
      res.params = init;
      unpack(best_theta, res.params, res.head);
      res.best_loss = best;
      return res;
    } catch (const NumericalFailure& e) {
      last_error = e.what();
    } catch (const NonFiniteLoss& e) {
      last_error = e.what();
    }
  }
  throw NumericalFailure("kernel training failed after " + std::to_string(cfg.max_restarts) +
                         " restarts: " + last_error);
}

}  // namespace esnac
