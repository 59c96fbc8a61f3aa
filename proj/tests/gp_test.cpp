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

#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "esnac/encode.hpp"
#include "esnac/gp.hpp"
#include "esnac/zoo.hpp"
#include "oracles.hpp"

namespace esnac {
namespace {

Eigen::MatrixXd random_unit_columns(std::mt19937_64& rng, int dim, int n) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd e(dim, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < dim; ++i) e(i, j) = z(rng);
    e.col(j).normalize();
  }
  return e;
}

std::vector<oracle::Vec> columns(const Eigen::MatrixXd& e) {
  std::vector<oracle::Vec> out;
  for (Eigen::Index j = 0; j < e.cols(); ++j) out.emplace_back(e.col(j).data(), e.col(j).data() + e.rows());
  return out;
}

oracle::Vec as_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double max_rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric, double floor) {
  double worst = 0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], b = numeric.data()[i];
    worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}));
  }
  return worst;
}

Eigen::MatrixXd numeric_grad(const Eigen::MatrixXd& e0, const std::function<double(const Eigen::MatrixXd&)>& f) {
  Eigen::MatrixXd e = e0, g(e0.rows(), e0.cols());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double saved = e.data()[i];
    e.data()[i] = saved + h;
    const double up = f(e);
    e.data()[i] = saved - h;
    const double down = f(e);
    e.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

TEST(GaussianProcess, EmptyPredictsPrior) {
  const GaussianProcess gp(Eigen::MatrixXd(4, 0), Eigen::VectorXd(0));
  const Posterior p = gp.predict_one(Eigen::VectorXd::Ones(4));
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_EQ(p.variance, 1.0);
}

TEST(GaussianProcess, MatchesDenseInverseOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const KernelConfig cfg;
  double worst = 0;
  for (int problem = 0; problem < 50; ++problem) {
    const int n = 1 + problem % 20, dim = 6;
    const Eigen::MatrixXd e = random_unit_columns(rng, dim, n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = unif(rng);
    const GaussianProcess gp(e, y, cfg);
    ASSERT_EQ(gp.jitter(), cfg.jitter);
    const Eigen::MatrixXd q = random_unit_columns(rng, dim, 5);
    const auto preds = gp.predict(q);
    for (int j = 0; j < 5; ++j) {
      const auto ref = oracle::gp_posterior(columns(e), as_vec(y), as_vec(q.col(j)), cfg.sigma, cfg.noise + cfg.jitter);
      worst = std::max({worst, std::abs(preds[j].mean - ref.mean), std::abs(preds[j].variance - ref.variance)});
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(GaussianProcess, InterpolatesAtTrainingPoints) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd e = random_unit_columns(rng, 8, 6);
  Eigen::VectorXd y(6);
  y << 0.1, 0.5, 0.2, 0.9, 0.4, 0.3;
  const GaussianProcess gp(e, y);
  const auto preds = gp.predict(e);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(preds[i].mean, y[i], 1e-3);
    EXPECT_LT(preds[i].variance, 1e-3);
  }
}

TEST(GaussianProcess, JitterEscalatesAndThenFails) {
  Eigen::MatrixXd k(2, 2);
  k << 1, 2, 2, 1;  // eigenvalues 3 and -1
  KernelConfig cfg;
  EXPECT_THROW(factorize(k, cfg), NumericalFailure);
  cfg.max_jitter = 10.0;
  const Factorization f = factorize(k, cfg);
  EXPECT_NEAR(f.jitter, 1.0, 1e-12);

  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(0, 1) = std::nan("");
  EXPECT_THROW(factorize(bad, KernelConfig{}), NumericalFailure);
}

TEST(LeaveOneOut, ClosedFormMatchesRefits) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const KernelConfig cfg;
  double worst = 0;
  for (int problem = 0; problem < 40; ++problem) {
    const int n = 2 + problem % 15;
    const Eigen::MatrixXd e = random_unit_columns(rng, 5, n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = unif(rng);
    const auto fast = loo_predictions(e, y, cfg);
    const auto slow = oracle::loo_refit(columns(e), as_vec(y), cfg.sigma, cfg.noise + cfg.jitter);
    for (int i = 0; i < n; ++i)
      worst = std::max({worst, std::abs(fast[i].mean - slow[i].mean), std::abs(fast[i].variance - slow[i].variance)});
    const double loss = loo_loss(e, y, cfg, false).value;
    const double ref = oracle::loo_nll(columns(e), as_vec(y), cfg.sigma, cfg.noise + cfg.jitter);
    EXPECT_NEAR(loss, ref, 1e-7 * std::max(1.0, std::abs(ref)));
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(LeaveOneOut, SinglePointIsScoredUnderThePrior) {
  const KernelConfig cfg;
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.7);
  const LossResult l = loo_loss(Eigen::MatrixXd::Ones(3, 1), y, cfg);
  const double var = 1.0 + cfg.noise + cfg.jitter;
  EXPECT_NEAR(l.value, 0.5 * std::log(2 * std::numbers::pi * var) + 0.49 / (2 * var), 1e-15);
  EXPECT_TRUE(l.grad.isZero());
  EXPECT_THROW(loo_loss(Eigen::MatrixXd(3, 0), Eigen::VectorXd(0), cfg), DimensionMismatch);
}

TEST(Gradients, LooWithRespectToEmbeddings) {
  std::mt19937_64 rng(5);
  KernelConfig cfg;
  cfg.noise = 0.05;  // keeps the finite differences well conditioned
  const Eigen::MatrixXd e = random_unit_columns(rng, 6, 3);
  Eigen::VectorXd y(3);
  y << 0.2, 0.7, 0.4;
  const Eigen::MatrixXd analytic = loo_loss(e, y, cfg).grad;
  const Eigen::MatrixXd numeric = numeric_grad(e, [&](const Eigen::MatrixXd& x) { return loo_loss(x, y, cfg, false).value; });
  EXPECT_LE(max_rel_error(analytic, numeric, 1e-7), 1e-4);
}

TEST(Gradients, MarginalWithRespectToEmbeddings) {
  std::mt19937_64 rng(6);
  KernelConfig cfg;
  cfg.noise = 0.05;
  const Eigen::MatrixXd e = random_unit_columns(rng, 6, 3);
  Eigen::VectorXd y(3);
  y << 0.2, 0.7, 0.4;
  const Eigen::MatrixXd analytic = marginal_loss(e, y, cfg).grad;
  const Eigen::MatrixXd numeric =
      numeric_grad(e, [&](const Eigen::MatrixXd& x) { return marginal_loss(x, y, cfg, false).value; });
  EXPECT_LE(max_rel_error(analytic, numeric, 1e-7), 1e-4);
}

TEST(Gradients, EuclideanWithRespectToEmbeddingsAndHead) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd e = random_unit_columns(rng, 6, 3);
  Eigen::VectorXd y(3);
  y << 0.2, 0.7, 0.4;
  RegressionHead head = init_head(1, 6, y);
  RegressionHead hg;
  const Eigen::MatrixXd analytic = euclidean_loss(e, y, head, true, &hg).grad;
  const Eigen::MatrixXd numeric =
      numeric_grad(e, [&](const Eigen::MatrixXd& x) { return euclidean_loss(x, y, head, false).value; });
  EXPECT_LE(max_rel_error(analytic, numeric, 1e-7), 1e-4);
  const Eigen::MatrixXd w0 = head.weight;
  const Eigen::MatrixXd nw = numeric_grad(w0, [&](const Eigen::MatrixXd& w) {
    RegressionHead h = head;
    h.weight = w;
    return euclidean_loss(e, y, h, false).value;
  });
  EXPECT_LE(max_rel_error(hg.weight, nw, 1e-7), 1e-4);
}

std::vector<SequenceEncoding> sampled_encodings(const ArchGraph& teacher, int count, std::uint64_t seed0) {
  const AttributeScaling scaling = AttributeScaling::for_teacher(teacher);
  std::vector<SequenceEncoding> out;
  for (int i = 0; i < count; ++i)
    out.push_back(encode(sample_compressed(teacher, seed0 + static_cast<std::uint64_t>(i)), static_cast<int>(teacher.size()), scaling));
  return out;
}

// End-to-end: loss(embedder weights) for H = 3 and 3 architectures.
TEST(Gradients, EndToEndThroughEmbedder) {
  const ArchGraph teacher = toy_resnet();
  const auto xs = sampled_encodings(teacher, 3, 100);
  Eigen::VectorXd y(3);
  y << 0.3, 0.8, 0.5;
  KernelConfig cfg;
  cfg.noise = 0.05;
  for (KernelObjective obj : {KernelObjective::kLeaveOneOut, KernelObjective::kMarginalLikelihood}) {
    EmbedderParams p = init_params(2, 3, xs.front().width());
    std::vector<Eigen::MatrixXd> mats;
    for (const auto& s : xs) mats.push_back(to_matrix(s));
    Eigen::VectorXd analytic;
    detail::objective_and_grad(p, {}, mats, y, cfg, obj, &analytic);
    Eigen::VectorXd theta = p.flatten();
    const Eigen::MatrixXd numeric = numeric_grad(theta, [&](const Eigen::MatrixXd& t) {
      EmbedderParams q = p;
      q.unflatten(t);
      return kernel_loss(q, xs, y, cfg, obj);
    });
    EXPECT_LE(max_rel_error(analytic, numeric, 1e-7), 1e-4) << to_string(obj);
  }
}

TEST(Training, ReducesLooLossForMostSeeds) {
  const ArchGraph teacher = toy_resnet();
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto xs = sampled_encodings(teacher, 12, seed * 1000);
    Eigen::VectorXd y(12);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < 12; ++i) y[i] = unif(rng);
    TrainConfig tc;
    tc.epochs = 30;
    tc.learning_rate = 1e-2;
    const auto res = train_kernel(init_params(seed, 6, xs.front().width()), xs, y, {}, tc);
    EXPECT_NEAR(res.best_loss, kernel_loss(res.params, xs, y, {}, tc.objective), 1e-9);
    if (res.best_loss < res.initial_loss) ++improved;
  }
  EXPECT_GE(improved, 18);
}

TEST(Training, OneEpochReturnsPostStepWeights) {
  const ArchGraph teacher = toy_resnet();
  const auto xs = sampled_encodings(teacher, 4, 9);
  Eigen::VectorXd y(4);
  y << 0.1, 0.4, 0.6, 0.9;
  TrainConfig tc;
  tc.epochs = 1;
  const EmbedderParams init = init_params(1, 4, xs.front().width());
  const auto res = train_kernel(init, xs, y, {}, tc);
  EXPECT_FALSE(res.params == init);
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.best_loss, res.history[1]);
}

TEST(Training, EuclideanTrainsHeadJointly) {
  const ArchGraph teacher = toy_resnet();
  const auto xs = sampled_encodings(teacher, 8, 50);
  Eigen::VectorXd y(8);
  y << 0.1, 0.4, 0.6, 0.9, 0.3, 0.2, 0.8, 0.5;
  TrainConfig tc;
  tc.objective = KernelObjective::kEuclidean;
  tc.epochs = 40;
  tc.learning_rate = 1e-2;
  const auto res = train_kernel(init_params(1, 4, xs.front().width()), xs, y, {}, tc, std::nullopt, 3);
  EXPECT_EQ(res.head.weight.size(), 8);
  EXPECT_LT(res.best_loss, res.initial_loss);
  EXPECT_NEAR(res.best_loss, kernel_loss(res.params, xs, y, {}, tc.objective, res.head), 1e-12);
}

TEST(Training, NonFiniteInputsFailAfterRestarts) {
  const ArchGraph teacher = toy_resnet();
  auto xs = sampled_encodings(teacher, 3, 1);
  xs[1].layers[0][0] = std::nan("");
  Eigen::VectorXd y(3);
  y << 0.1, 0.2, 0.3;
  TrainConfig tc;
  tc.epochs = 2;
  EXPECT_THROW(train_kernel(init_params(1, 3, xs.front().width()), xs, y, {}, tc), NumericalFailure);
}

}  // namespace
}  // namespace esnac
