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

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "esnac/evaluator.hpp"
#include "esnac/zoo.hpp"
#include "oracles.hpp"

namespace esnac {
namespace {

std::string stub(const std::string& args) { return std::string("'") + ESNAC_STUB_EVALUATOR + "' " + args; }

std::filesystem::path temp_file(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("esnac_evaluator_test_" + name);
  std::filesystem::remove(p);
  return p;
}

TEST(Reward, CompressionRatioExamples) {
  EXPECT_EQ(compression_ratio(1000, 1000), 0.0);
  EXPECT_EQ(compression_ratio(0, 1000), 1.0);
  EXPECT_NEAR(compression_ratio(1'870'000, 11'220'000), 0.8335, 0.001);
  EXPECT_THROW(compression_ratio(1, 0), DimensionMismatch);
}

TEST(Reward, PublishedResNet18Row) {
  EXPECT_NEAR(reward(0.7383, 1'870'000, 0.7868, 11'220'000), 0.9123, 0.002);
}

TEST(Reward, SimpleValues) {
  EXPECT_EQ(reward(0.9, 100, 0.9, 100), 0.0);
  EXPECT_DOUBLE_EQ(reward(0.9, 50, 0.9, 100), 0.75);
}

TEST(Reward, MatchesOracleAndIsMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t tp = 1 + static_cast<std::int64_t>(unif(rng) * 1e7);
    const std::int64_t p = static_cast<std::int64_t>(unif(rng) * static_cast<double>(tp));
    const double at = 0.5 + 0.5 * unif(rng), a = unif(rng) * at;
    const double f = reward(a, p, at, tp);
    EXPECT_NEAR(f, oracle::reward(a, static_cast<double>(p), at, static_cast<double>(tp)), 1e-12);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    if (p > 0) EXPECT_GT(reward(a + 0.01, p, at, tp), f);
    if (p > 0 && a > 0) EXPECT_GT(reward(a, p - 1, at, tp), f);
  }
}

TEST(Surrogate, TeacherScoresTeacherAccuracy) {
  const ArchGraph t = toy_resnet();
  const SurrogateConfig cfg;
  EXPECT_EQ(surrogate_accuracy(cfg, t, t, 0.93, EvalMode::kFull), 0.93);
  SurrogateBackend backend(t, 0.93, cfg);
  const EvalRecord r = evaluate(t, backend, {EvalMode::kFull, 1}, t, 0.93, "teacher", 0);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.params, param_count(t));
}

TEST(Surrogate, DeterministicAndNoisyOnlyInProxyMode) {
  const ArchGraph t = toy_resnet();
  SurrogateConfig cfg;
  cfg.noise_sd = 0.02;
  int differs = 0, interior = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ArchGraph g = sample_compressed(t, s);
    const double full = surrogate_accuracy(cfg, g, t, 0.9, EvalMode::kFull, s);
    EXPECT_EQ(full, surrogate_accuracy(cfg, g, t, 0.9, EvalMode::kFull, s + 1));
    EXPECT_GE(full, 0.0);
    EXPECT_LE(full, 0.9);
    const double p1 = surrogate_accuracy(cfg, g, t, 0.9, EvalMode::kProxy, 7);
    EXPECT_EQ(p1, surrogate_accuracy(cfg, g, t, 0.9, EvalMode::kProxy, 7));
    EXPECT_LE(p1, 0.9);
    if (full > 0.1 && full < 0.8) {  // away from the clamps
      ++interior;
      differs += p1 != full;
      EXPECT_NE(p1, surrogate_accuracy(cfg, g, t, 0.9, EvalMode::kProxy, 8));
    }
  }
  EXPECT_GT(interior, 10);
  EXPECT_EQ(differs, interior);
}

// Every plan of toy_chain6 (removal subsets, ratios from the default set,
// up to two added skips) enumerated and scored in full mode.
TEST(Surrogate, OptimumAgreesWithExhaustiveSearch) {
  const ArchGraph t = toy_chain6();
  const SurrogateConfig cfg;
  const auto removable = removable_nodes(t);
  const auto groups = shrink_groups(t);
  ASSERT_EQ(removable.size(), 3u);
  ASSERT_EQ(groups.size(), 2u);
  const std::vector<double> ratios = SamplePolicy{}.ratios;
  std::set<std::string> seen;
  double best = -1;
  SurrogateFeatures best_features;
  int plans = 0;
  for (unsigned mask = 0; mask < 8; ++mask) {
    for (double r0 : ratios) {
      for (double r1 : ratios) {
        MutationPlan base;
        for (unsigned k = 0; k < 3; ++k)
          if (mask & (1u << k)) base.removals.push_back(removable[k]);
        if (r0 != 1.0) base.shrink_ratios[0] = r0;
        if (r1 != 1.0) base.shrink_ratios[1] = r1;
        ArchGraph shaped;
        try {
          shaped = apply_mutation(t, base);
        } catch (const InvalidPlan&) {
          continue;
        }
        const auto pairs = candidate_skips(shaped);
        std::vector<std::vector<Edge>> skip_sets{{}};
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          skip_sets.push_back({pairs[i]});
          for (std::size_t j = i + 1; j < pairs.size(); ++j) skip_sets.push_back({pairs[i], pairs[j]});
        }
        for (const auto& skips : skip_sets) {
          MutationPlan plan = base;
          for (const auto& [s, d] : skips) plan.added_skips.emplace_back(shaped.origin_of(s), shaped.origin_of(d));
          std::sort(plan.added_skips.begin(), plan.added_skips.end());
          ArchGraph g;
          try {
            g = apply_mutation(t, plan);
          } catch (const InvalidPlan&) {
            continue;
          }
          ++plans;
          const double acc = surrogate_accuracy(cfg, g, t, 1.0, EvalMode::kFull);
          const double f = reward(acc, param_count(g), 1.0, param_count(t));
          const auto feats = surrogate_features(g, t);
          // Reward is a function of the features alone.
          const double from_features =
              (1.0 - feats.param_ratio * feats.param_ratio) * std::clamp(surrogate_quality(cfg, feats), 0.0, 1.0);
          EXPECT_NEAR(f, from_features, 1e-12);
          if (f > best) {
            best = f;
            best_features = feats;
          }
        }
      }
    }
  }
  EXPECT_GT(plans, 100);
  const SurrogateOptimum opt = surrogate_optimum(cfg);
  EXPECT_LE(best, opt.reward + 1e-12);

  // Brute force over a dense feature grid reaches the same optimum.
  double grid_best = -1;
  for (int s = 0; s <= 3; ++s)
    for (int ri = 0; ri <= 20; ++ri)
      for (int k = 1; k <= 100000; ++k) {
        const SurrogateFeatures f{ri / 20.0, k / 100000.0, s};
        grid_best = std::max(grid_best, (1 - f.param_ratio * f.param_ratio) * std::clamp(surrogate_quality(cfg, f), 0.0, 1.0));
      }
  EXPECT_NEAR(grid_best, opt.reward, 1e-5);
  EXPECT_EQ(opt.features.kept_fraction, 1.0);
  EXPECT_EQ(opt.features.added_skips, 3);
}

TEST(External, EchoStub) {
  const ArchGraph t = toy_resnet();
  ExternalBackend backend(stub("echo 0.5"));
  const ArchGraph g = sample_compressed(t, 3);
  const EvalRecord r = evaluate(g, backend, {EvalMode::kProxy, 10}, t, 0.9, "req-1", 0);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.reward, oracle::reward(0.5, static_cast<double>(param_count(g)), 0.9, static_cast<double>(param_count(t))));
  // The same child answers later requests.
  EXPECT_EQ(evaluate(g, backend, {EvalMode::kFull, 100}, t, 0.9, "req-2", 0).accuracy, 0.5);
}

TEST(External, ErrorsNameTheArchitecture) {
  const ArchGraph t = toy_chain6();
  const std::string name = describe(t);
  auto expect_error = [&](const std::string& args, auto tag, ExternalConfig cfg = {}) {
    using E = decltype(tag);
    ExternalBackend backend(stub(args), cfg);
    try {
      backend.accuracy(t, {EvalMode::kProxy, 1}, 0, "r1");
      ADD_FAILURE() << args << ": no exception";
    } catch (const E& e) {
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
  };
  expect_error("malformed", BackendMalformedResponse(""));
  expect_error("wrong-id 0.5", BackendMalformedResponse(""));
  expect_error("echo 1.5", BackendMalformedResponse(""));
  expect_error("exit", BackendMalformedResponse(""));
  expect_error("error", BackendReportedFailure(""));
  ExternalConfig quick;
  quick.timeout_proxy = 0.2;
  expect_error("sleep 5 0.5", BackendTimeout(""), quick);
  ExternalBackend missing("/nonexistent/evaluator");
  EXPECT_THROW(missing.accuracy(t, {EvalMode::kProxy, 1}, 0, "r1"), BackendMalformedResponse);
}

TEST(External, RecoversAfterReportedFailure) {
  const ArchGraph t = toy_chain6();
  ExternalBackend backend(stub("flaky 0.7"));
  EXPECT_THROW(backend.accuracy(t, {EvalMode::kProxy, 1}, 0, "a"), BackendReportedFailure);
  EXPECT_EQ(backend.accuracy(t, {EvalMode::kProxy, 1}, 0, "b"), 0.7);
}

EvalSet sample_set() {
  EvalSet set;
  set.teacher = toy_resnet();
  set.teacher_accuracy = 0.91;
  SurrogateBackend backend(set.teacher, set.teacher_accuracy);
  for (int i = 0; i < 5; ++i) {
    EvalRecord r = evaluate(sample_compressed(set.teacher, static_cast<std::uint64_t>(i)), backend,
                            {i == 4 ? EvalMode::kFull : EvalMode::kProxy, 10}, set.teacher, set.teacher_accuracy,
                            "r" + std::to_string(i), 1000 + static_cast<std::uint64_t>(i));
    r.step = i / 2;
    r.kernel = i % 2;
    set.records.push_back(r);
  }
  set.records[2].failed = true;
  set.records[2].accuracy = 0.0;
  set.records[2].reward = 0.0;
  set.records[2].message = "stub failure";
  return set;
}

TEST(EvalLogFile, RoundTrip) {
  const EvalSet set = sample_set();
  const auto path = temp_file("roundtrip.jsonl");
  save_eval_set(set, path.string());
  EXPECT_EQ(load_eval_set(path.string()), set);

  const auto appended = temp_file("append.jsonl");
  {
    EvalLog log(appended.string(), set.teacher, set.teacher_accuracy);
    for (const auto& r : set.records) log.append(r);
  }
  const EvalSet back = load_eval_set(appended.string());
  EXPECT_EQ(back, set);
  EXPECT_EQ(back.records[0].timestamp, set.records[0].timestamp);
}

TEST(EvalLogFile, EmptyFileIsEmptySet) {
  const auto path = temp_file("empty.jsonl");
  std::ofstream(path).close();
  const EvalSet set = load_eval_set(path.string());
  EXPECT_TRUE(set.empty());
}

TEST(EvalLogFile, TruncatedLastLineNamesLine) {
  const EvalSet set = sample_set();
  const auto path = temp_file("truncated.jsonl");
  save_eval_set(set, path.string());
  std::string content;
  {
    std::ifstream in(path);
    content.assign(std::istreambuf_iterator<char>(in), {});
  }
  content.resize(content.size() - 40);
  std::ofstream(path, std::ios::trunc) << content;
  try {
    load_eval_set(path.string());
    FAIL() << "expected CorruptLog";
  } catch (const CorruptLog& e) {
    EXPECT_NE(std::string(e.what()).find(":6:"), std::string::npos) << e.what();
  }
}

TEST(EvalLogFile, TamperedRewardIsRejected) {
  EvalSet set = sample_set();
  set.records[1].reward += 0.01;
  const auto path = temp_file("tampered.jsonl");
  save_eval_set(set, path.string());
  try {
    load_eval_set(path.string());
    FAIL() << "expected CorruptLog";
  } catch (const CorruptLog& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace esnac
