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

// Expected improvement and its maximization over compressed architectures.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "esnac/archgraph.hpp"
#include "esnac/embedder.hpp"
#include "esnac/encode.hpp"
#include "esnac/gp.hpp"

namespace esnac {

/// E[max(0, Y - best)] for Y ~ N(mean, variance).
inline double expected_improvement(double mean, double variance, double best) {
  if (!(variance > 0.0)) return std::max(0.0, mean - best);
  const double sd = std::sqrt(variance);
  const double z = (mean - best) / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return (mean - best) * cdf + sd * pdf;
}

/// The architectures reachable from one teacher, and how they are encoded.
struct SearchSpace {
  ArchGraph teacher;
  int n_max = 0;
  AttributeScaling scaling;
  SamplePolicy policy;

  static SearchSpace for_teacher(ArchGraph teacher, int n_max = 0, SamplePolicy policy = {}) {
    SearchSpace s;
    s.n_max = n_max > 0 ? n_max : static_cast<int>(teacher.size());
    s.scaling = AttributeScaling::for_teacher(teacher);
    s.policy = std::move(policy);
    s.teacher = std::move(teacher);
    return s;
  }
  int width() const { return encoding_width(n_max); }
  SequenceEncoding encode(const ArchGraph& g) const { return esnac::encode(g, n_max, scaling); }
};

enum class AcquisitionMethod { kRandomSampling, kEvolutionary };

inline std::string_view to_string(AcquisitionMethod m) {
  return m == AcquisitionMethod::kRandomSampling ? "random" : "evolutionary";
}

inline std::optional<AcquisitionMethod> acquisition_method_from_string(std::string_view s) {
  if (s == "random" || s == "random_sampling") return AcquisitionMethod::kRandomSampling;
  if (s == "evolutionary") return AcquisitionMethod::kEvolutionary;
  return std::nullopt;
}

struct AcquisitionConfig {
  AcquisitionMethod method = AcquisitionMethod::kRandomSampling;
  int num_candidates = 500;   // random sampling pool size
  int population = 50;        // evolutionary
  int generations = 10;
  double mutation_rate = 0.3;
};

struct Candidate {
  ArchGraph graph;
  MutationPlan plan;
  SequenceEncoding encoding;
  std::string key;
  std::int64_t params = 0;
  Posterior posterior;
  double ei = 0.0;
};

/// Surrogate view used to score candidates.
struct Scorer {
  const EmbedderParams* embedder = nullptr;
  const GaussianProcess* gp = nullptr;
  double best = 0.0;

  void score(std::vector<Candidate>& cands) const {
    if (cands.empty()) return;
    Eigen::MatrixXd e(embedder->embedding_size(), static_cast<Eigen::Index>(cands.size()));
    for (std::size_t i = 0; i < cands.size(); ++i) e.col(static_cast<Eigen::Index>(i)) = embed(*embedder, cands[i].encoding);
    const auto post = gp->predict(e);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      cands[i].posterior = post[i];
      cands[i].ei = expected_improvement(post[i].mean, post[i].variance, best);
    }
  }
};

/// Higher EI first, then fewer parameters, then the smaller encoding key.
inline bool better_candidate(const Candidate& a, const Candidate& b) {
  if (a.ei != b.ei) return a.ei > b.ei;
  if (a.params != b.params) return a.params < b.params;
  return a.key < b.key;
}

inline Candidate make_candidate(const SearchSpace& space, SampledArch s) {
  Candidate c;
  c.encoding = space.encode(s.graph);
  c.key = encoding_key(c.encoding);
  c.params = param_count(s.graph);
  c.graph = std::move(s.graph);
  c.plan = std::move(s.plan);
  return c;
}

/// Distinct random candidates for the given seed, in draw order, skipping
/// any whose key is in `exclude`.
inline std::vector<Candidate> candidate_pool(const SearchSpace& space, int count, std::uint64_t seed,
                                             const std::set<std::string>& exclude) {
  std::vector<Candidate> out;
  std::set<std::string> seen;
  for (int i = 0; i < count; ++i) {
    Candidate c = make_candidate(space, sample_compressed_with_plan(space.teacher, derive_seed(seed, {static_cast<std::uint64_t>(i)}), space.policy));
    if (exclude.count(c.key) || !seen.insert(c.key).second) continue;
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

/// Child plan: each removable node's membership, the whole shrink block and the
/// whole skip block are taken from a fresh draw with probability `rate`.
inline std::optional<SampledArch> mutate_plan(const SearchSpace& space, const MutationPlan& parent, Rng& rng,
                                              double rate) {
  const ArchGraph& t = space.teacher;
  for (int attempt = 0; attempt <= space.policy.max_retries; ++attempt) {
    const MutationPlan fresh = draw_plan(t, rng, space.policy);
    MutationPlan child;
    const std::set<int> pr(parent.removals.begin(), parent.removals.end());
    const std::set<int> fr(fresh.removals.begin(), fresh.removals.end());
    for (int r : removable_nodes(t)) {
      const bool take_fresh = uniform01(rng) < rate;
      if (take_fresh ? fr.count(r) : pr.count(r)) child.removals.push_back(r);
    }
    child.shrink_ratios = uniform01(rng) < rate ? fresh.shrink_ratios : parent.shrink_ratios;
    child.added_skips = uniform01(rng) < rate ? fresh.added_skips : parent.added_skips;
    if (child == parent) continue;
    try {
      ArchGraph g = apply_mutation(t, child);
      return SampledArch{std::move(g), std::move(child)};
    } catch (const InvalidPlan&) {
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Returns the candidate with the highest expected improvement whose key is
/// not in `exclude`. Throws EmptyCandidateSet when none is left.
inline Candidate maximize_acquisition(const SearchSpace& space, const Scorer& scorer, const AcquisitionConfig& cfg,
                                      std::uint64_t seed, const std::set<std::string>& exclude) {
  std::vector<Candidate> pool;
  if (cfg.method == AcquisitionMethod::kRandomSampling) {
    pool = candidate_pool(space, cfg.num_candidates, seed, exclude);
    scorer.score(pool);
  } else {
    pool = candidate_pool(space, cfg.population, seed, exclude);
    scorer.score(pool);
    std::set<std::string> seen;
    for (const auto& c : pool) seen.insert(c.key);
    Rng rng(derive_seed(seed, {tag("evolve")}));
    std::vector<Candidate> all = pool;
    for (int gen = 0; gen < cfg.generations && !pool.empty(); ++gen) {
      std::sort(pool.begin(), pool.end(), better_candidate);
      const std::size_t parents = std::max<std::size_t>(1, pool.size() / 2);
      std::vector<Candidate> children;
      for (int k = 0; k < cfg.population; ++k) {
        const Candidate& parent = pool[uniform_index(rng, parents)];
        auto child = detail::mutate_plan(space, parent.plan, rng, cfg.mutation_rate);
        if (!child) continue;
        Candidate c = make_candidate(space, std::move(*child));
        if (exclude.count(c.key) || !seen.insert(c.key).second) continue;
        children.push_back(std::move(c));
      }
      scorer.score(children);
      all.insert(all.end(), children.begin(), children.end());
      pool.insert(pool.end(), std::make_move_iterator(children.begin()), std::make_move_iterator(children.end()));
      std::sort(pool.begin(), pool.end(), better_candidate);
      if (pool.size() > static_cast<std::size_t>(cfg.population)) pool.resize(static_cast<std::size_t>(cfg.population));
    }
    pool = std::move(all);
  }
  if (pool.empty()) throw EmptyCandidateSet("every candidate architecture is excluded");
  return *std::min_element(pool.begin(), pool.end(), better_candidate);
}

}  // namespace esnac
