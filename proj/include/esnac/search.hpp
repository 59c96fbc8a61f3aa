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

// Multi-kernel Bayesian optimization over compressed architectures, the
// random-search baseline and search with transferred kernels.
//
// Seed streams (all derived from master_seed):
//   initial sample i        {"initial", i}
//   proxy evaluation        {"proxy", step, kernel}
//   subset membership       {"subset", step, kernel, fnv1a(record id)}
//   kernel initialization   {"kernel-init", step, kernel}
//   regression head         {"head", step, kernel}
//   acquisition             {"acquire", step, kernel, attempt}
//   finalist i              {"full", i}

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "esnac/acquisition.hpp"
#include "esnac/evaluator.hpp"
#include "esnac/gp.hpp"

namespace esnac {

struct SearchConfig {
  int steps = 20;      // T
  int kernels = 8;     // K
  double subset_prob = 0.5;
  ArchGraph teacher;
  double teacher_accuracy = 0.0;
  int n_max = 0;       // 0: the teacher's node count
  SamplePolicy policy;
  int hidden_size = 64;
  AcquisitionConfig acquisition;
  TrainConfig train;
  KernelConfig kernel;
  bool condition_on_full_D = false;
  std::string backend = "surrogate";  // or "external:<command>"
  SurrogateConfig surrogate;
  ExternalConfig external;
  int proxy_epochs = 10;
  int full_epochs = 200;
  int finalists = 4;
  std::uint64_t master_seed = 0;

  SearchSpace space() const { return SearchSpace::for_teacher(teacher, n_max, policy); }
};

/// Throws ConfigError naming the offending field.
inline void validate(const SearchConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(c.steps >= 1, "steps: must be at least 1");
  need(c.kernels >= 1, "kernels: must be at least 1");
  need(c.subset_prob > 0.0 && c.subset_prob <= 1.0, "subset_prob: must be in (0, 1]");
  need(c.finalists >= 1, "finalists: must be at least 1");
  need(c.hidden_size >= 1, "hidden_size: must be at least 1");
  need(c.teacher_accuracy > 0.0 && c.teacher_accuracy <= 1.0, "teacher_accuracy: must be in (0, 1]");
  need(c.proxy_epochs >= 1, "proxy_epochs: must be at least 1");
  need(c.full_epochs >= 1, "full_epochs: must be at least 1");
  need(c.train.epochs >= 1, "train.epochs: must be at least 1");
  need(c.train.learning_rate > 0.0, "train.learning_rate: must be positive");
  need(c.kernel.sigma > 0.0, "kernel.sigma: must be positive");
  need(c.kernel.noise >= 0.0, "kernel.noise: must be non-negative");
  need(c.acquisition.num_candidates >= 1, "acquisition.num_candidates: must be at least 1");
  need(c.acquisition.population >= 1, "acquisition.population: must be at least 1");
  need(c.acquisition.generations >= 0, "acquisition.generations: must be non-negative");
  need(!c.policy.ratios.empty(), "policy.ratios: must not be empty");
  for (double r : c.policy.ratios) need(r > 0.0 && r <= 1.0, "policy.ratios: every ratio must be in (0, 1]");
  need(c.policy.removal_prob >= 0.0 && c.policy.removal_prob < 1.0, "policy.removal_prob: must be in [0, 1)");
  need(c.policy.max_skips >= 0, "policy.max_skips: must be non-negative");
  need(c.backend == "surrogate" || (c.backend.rfind("external:", 0) == 0 && c.backend.size() > 9),
       "backend: expected 'surrogate' or 'external:<command>'");
  const std::string problem = check_graph(c.teacher);
  need(problem.empty(), "teacher: " + problem);
  need(c.n_max == 0 || c.n_max >= static_cast<int>(c.teacher.size()), "n_max: smaller than the teacher's node count");
}

inline std::unique_ptr<EvaluationBackend> make_backend(const SearchConfig& c) {
  if (c.backend == "surrogate") return std::make_unique<SurrogateBackend>(c.teacher, c.teacher_accuracy, c.surrogate);
  if (c.backend.rfind("external:", 0) == 0) return std::make_unique<ExternalBackend>(c.backend.substr(9), c.external);
  throw ConfigError("backend: expected 'surrogate' or 'external:<command>'");
}

/// One acquisition result: kernel `kernel` at step `step` chose `arch`, which
/// is evaluated at step + 1 (if there is one).
struct Selection {
  int step = 0;
  int kernel = 0;
  ArchGraph arch;
  double ei = 0.0;
  std::size_t subset_size = 0;  // |D_k| actually used
  bool operator==(const Selection&) const = default;
};

struct SearchTrace {
  EvalSet evals;                      // D: proxy records in evaluation order
  std::vector<Selection> selections;  // one per (step, kernel) that was computed
  std::vector<EvalRecord> finalists;  // full-mode re-evaluations
  EvalRecord best;
  std::vector<EmbedderParams> kernels;  // weights after the last step's training
  int proxy_evaluations = 0;            // performed in this run (resumed records excluded)
  int full_evaluations = 0;
  int trainings = 0;
  int maximizations = 0;
};

struct SearchOptions {
  const EvalSet* resume = nullptr;                        // records of an interrupted run
  std::function<void(const EvalRecord&)> on_record;       // called for every new record
};

namespace detail {

inline std::string strip_error_name(const std::string& what) {
  const auto colon = what.find(": ");
  return colon == std::string::npos ? what : what.substr(colon + 2);
}

/// Re-throws the current exception with a context prefix, keeping its type.
[[noreturn]] inline void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const NumericalFailure& e) {
    throw NumericalFailure(ctx + strip_error_name(e.what()));
  } catch (const NonFiniteLoss& e) {
    throw NonFiniteLoss(ctx + strip_error_name(e.what()));
  } catch (const EmptyCandidateSet& e) {
    throw EmptyCandidateSet(ctx + strip_error_name(e.what()));
  } catch (const DimensionMismatch& e) {
    throw DimensionMismatch(ctx + strip_error_name(e.what()));
  } catch (const WidthMismatch& e) {
    throw WidthMismatch(ctx + strip_error_name(e.what()));
  }
}

/// Evaluates g, retrying once; a second failure yields a failed record with
/// zero accuracy.
inline EvalRecord evaluate_with_retry(const ArchGraph& g, EvaluationBackend& backend, const EvalRequestMode& mode,
                                      const ArchGraph& teacher, double teacher_accuracy, const std::string& id,
                                      std::uint64_t seed) {
  std::string message;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return evaluate(g, backend, mode, teacher, teacher_accuracy, id, seed);
    } catch (const BackendTimeout& e) {
      message = e.what();
    } catch (const BackendMalformedResponse& e) {
      message = e.what();
    } catch (const BackendReportedFailure& e) {
      message = e.what();
    }
  }
  EvalRecord r;
  r.id = id;
  r.arch = g;
  r.mode = mode.mode;
  r.seed = seed;
  r.params = param_count(g);
  r.accuracy = 0.0;
  r.reward = 0.0;
  r.failed = true;
  r.message = message;
  r.timestamp = utc_timestamp();
  return r;
}

/// Highest reward first, then fewer parameters, then earlier records.
inline std::vector<std::size_t> rank_by_reward(const std::vector<EvalRecord>& rs) {
  std::vector<std::size_t> order(rs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rs[a].reward != rs[b].reward) return rs[a].reward > rs[b].reward;
    return rs[a].params < rs[b].params;
  });
  return order;
}

/// Re-evaluates the top `count` distinct proxy records in full mode and
/// fills trace.finalists and trace.best. Full records already present in
/// `previous` (same id and architecture) are reused.
inline void run_finalists(SearchTrace& trace, int count, std::uint64_t master, const SearchSpace& space,
                          double teacher_accuracy, int full_epochs, EvaluationBackend& backend,
                          const std::vector<EvalRecord>& previous, const SearchOptions& opts) {
  std::set<std::string> seen;
  const auto order = rank_by_reward(trace.evals.records);
  for (std::size_t idx : order) {
    if (static_cast<int>(trace.finalists.size()) >= count) break;
    const EvalRecord& rec = trace.evals.records[idx];
    if (!seen.insert(encoding_key(space.encode(rec.arch))).second) continue;
    const std::size_t i = trace.finalists.size();
    const std::string id = "final-" + std::to_string(i);
    auto reused = std::find_if(previous.begin(), previous.end(),
                               [&](const EvalRecord& p) { return p.id == id && p.arch == rec.arch; });
    if (reused != previous.end()) {
      trace.finalists.push_back(*reused);
      continue;
    }
    EvalRecord full = evaluate_with_retry(rec.arch, backend, {EvalMode::kFull, full_epochs}, space.teacher,
                                          teacher_accuracy, id, derive_seed(master, {tag("full"), i}));
    ++trace.full_evaluations;
    if (opts.on_record) opts.on_record(full);
    trace.finalists.push_back(std::move(full));
  }
  for (const auto& f : trace.finalists) {
    if (trace.best.id.empty() || f.reward > trace.best.reward ||
        (f.reward == trace.best.reward && f.params < trace.best.params))
      trace.best = f;
  }
}

}  // namespace detail

/// One kernel's share of a search step: train fresh weights on D_k, condition
/// the GP and pick the candidate with the highest EI outside `exclude`.
struct KernelStep {
  EmbedderParams weights;
  Candidate choice;
  std::size_t subset_size = 0;
  bool trained = false;
};

inline KernelStep run_kernel_step(const SearchConfig& cfg, const SearchSpace& space, const std::vector<EvalRecord>& d,
                                  int step, int kernel, const std::set<std::string>& exclude) {
  const std::uint64_t t = static_cast<std::uint64_t>(step), k = static_cast<std::uint64_t>(kernel);
  const std::uint64_t m = cfg.master_seed;
  std::vector<const EvalRecord*> subset;
  for (const auto& r : d) {
    Rng rng(derive_seed(m, {tag("subset"), t, k, fnv1a(r.id)}));
    if (uniform01(rng) < cfg.subset_prob) subset.push_back(&r);
  }
  if (subset.size() < 2) {  // too few points to fit a kernel: use all of D
    subset.clear();
    for (const auto& r : d) subset.push_back(&r);
  }

  KernelStep out;
  out.subset_size = subset.size();
  out.weights = init_params(derive_seed(m, {tag("kernel-init"), t, k}), cfg.hidden_size, space.width());
  std::vector<SequenceEncoding> xs;
  Eigen::VectorXd y(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    xs.push_back(space.encode(subset[i]->arch));
    y[static_cast<Eigen::Index>(i)] = subset[i]->reward;
  }
  if (!subset.empty()) {
    out.weights = train_kernel(out.weights, xs, y, cfg.kernel, cfg.train, std::nullopt,
                               derive_seed(m, {tag("head"), t, k}))
                      .params;
    out.trained = true;
  }

  // Condition on D_k, or on all of D when asked to.
  std::vector<const EvalRecord*> cond = subset;
  if (cfg.condition_on_full_D) {
    cond.clear();
    for (const auto& r : d) cond.push_back(&r);
  }
  Eigen::MatrixXd e(out.weights.embedding_size(), static_cast<Eigen::Index>(cond.size()));
  Eigen::VectorXd cy(static_cast<Eigen::Index>(cond.size()));
  double best = cond.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cond.size(); ++i) {
    e.col(static_cast<Eigen::Index>(i)) = embed(out.weights, space.encode(cond[i]->arch));
    cy[static_cast<Eigen::Index>(i)] = cond[i]->reward;
    best = std::max(best, cond[i]->reward);
  }
  const GaussianProcess gp = cond.empty() ? GaussianProcess() : GaussianProcess(e, cy, cfg.kernel);
  const Scorer scorer{&out.weights, &gp, best};

  // A pool that is entirely excluded is redrawn with a fresh seed.
  constexpr int kAttempts = 4;
  for (int attempt = 0;; ++attempt) {
    try {
      out.choice = maximize_acquisition(space, scorer, cfg.acquisition,
                                        derive_seed(m, {tag("acquire"), t, k, static_cast<std::uint64_t>(attempt)}),
                                        exclude);
      return out;
    } catch (const EmptyCandidateSet&) {
      if (attempt + 1 >= kAttempts) throw;
    }
  }
}

/// K distinct random architectures for step 0.
inline std::vector<ArchGraph> initial_samples(const SearchSpace& space, int count, std::uint64_t master) {
  std::vector<ArchGraph> out;
  std::set<std::string> seen;
  const int max_draws = 100 * count;
  for (int i = 0; i < max_draws && static_cast<int>(out.size()) < count; ++i) {
    SampledArch s = sample_compressed_with_plan(space.teacher, derive_seed(master, {tag("initial"), static_cast<std::uint64_t>(i)}),
                                                space.policy);
    if (seen.insert(encoding_key(space.encode(s.graph))).second) out.push_back(std::move(s.graph));
  }
  if (static_cast<int>(out.size()) < count)
    throw EmptyCandidateSet("the search space has fewer than " + std::to_string(count) + " distinct architectures");
  return out;
}

/// Runs the search. With opts.resume the records of complete steps are taken
/// from the log, the last complete step's kernels are retrained and the loop
/// continues; records of a partial step are reused where they match.
inline SearchTrace run_search(const SearchConfig& cfg, EvaluationBackend& backend, const SearchOptions& opts = {}) {
  validate(cfg);
  const SearchSpace space = cfg.space();
  const int T = cfg.steps, K = cfg.kernels;

  SearchTrace trace;
  trace.evals.teacher = cfg.teacher;
  trace.evals.teacher_accuracy = cfg.teacher_accuracy;

  // Logged records by (step, kernel).
  std::map<std::pair<int, int>, EvalRecord> logged;
  std::vector<EvalRecord> logged_full;
  int boundary = 0;
  if (opts.resume) {
    const EvalSet& prev = *opts.resume;
    if (!(prev.teacher == cfg.teacher) || prev.teacher_accuracy != cfg.teacher_accuracy)
      throw ConfigError("resume: the log was written for a different teacher");
    for (const auto& r : prev.records) {
      if (r.mode == EvalMode::kFull) {
        logged_full.push_back(r);
        continue;
      }
      if (r.step < 0 || r.step >= T || r.kernel < 0 || r.kernel >= K)
        throw CorruptLog("resume: record '" + r.id + "' lies outside the configured steps and kernels");
      if (!logged.emplace(std::make_pair(r.step, r.kernel), r).second)
        throw CorruptLog("resume: step " + std::to_string(r.step) + " kernel " + std::to_string(r.kernel) +
                         " appears twice");
    }
    while (boundary < T) {
      bool complete = true;
      for (int k = 0; k < K; ++k) complete = complete && logged.count({boundary, k});
      if (!complete) break;
      ++boundary;
    }
    for (const auto& [key, r] : logged)
      if (key.first > boundary)
        throw CorruptLog("resume: record '" + r.id + "' follows an incomplete step");
    if (!logged_full.empty() && boundary < T) logged_full.clear();
  }

  std::set<std::string> evaluated;
  for (int t = 0; t < boundary; ++t)
    for (int k = 0; k < K; ++k) {
      const EvalRecord& r = logged.at({t, k});
      evaluated.insert(encoding_key(space.encode(r.arch)));
      trace.evals.records.push_back(r);
    }

  auto select_all = [&](int t) {
    std::vector<ArchGraph> next;
    std::set<std::string> exclude = evaluated;
    trace.kernels.clear();
    for (int k = 0; k < K; ++k) {
      KernelStep ks;
      try {
        ks = run_kernel_step(cfg, space, trace.evals.records, t, k, exclude);
      } catch (...) {
        detail::rethrow_with_context("step " + std::to_string(t) + ", kernel " + std::to_string(k) + ": ");
      }
      if (ks.trained) ++trace.trainings;
      ++trace.maximizations;
      exclude.insert(ks.choice.key);
      trace.selections.push_back({t, k, ks.choice.graph, ks.choice.ei, ks.subset_size});
      trace.kernels.push_back(std::move(ks.weights));
      next.push_back(std::move(ks.choice.graph));
    }
    return next;
  };

  std::vector<ArchGraph> pending;
  if (boundary == 0) {
    pending = initial_samples(space, K, cfg.master_seed);
  } else {
    pending = select_all(boundary - 1);
  }

  for (int t = boundary; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      const ArchGraph& g = pending[static_cast<std::size_t>(k)];
      auto hit = logged.find({t, k});
      EvalRecord r;
      if (hit != logged.end() && hit->second.arch == g) {
        r = hit->second;
      } else {
        const std::string id = "s" + std::to_string(t) + "-k" + std::to_string(k);
        const std::uint64_t seed =
            derive_seed(cfg.master_seed, {tag("proxy"), static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)});
        r = detail::evaluate_with_retry(g, backend, {EvalMode::kProxy, cfg.proxy_epochs}, cfg.teacher,
                                        cfg.teacher_accuracy, id, seed);
        r.step = t;
        r.kernel = k;
        ++trace.proxy_evaluations;
        if (opts.on_record) opts.on_record(r);
      }
      evaluated.insert(encoding_key(space.encode(r.arch)));
      trace.evals.records.push_back(std::move(r));
    }
    pending = select_all(t);
  }

  detail::run_finalists(trace, cfg.finalists, cfg.master_seed, space, cfg.teacher_accuracy, cfg.full_epochs, backend,
                        logged_full, opts);
  return trace;
}

inline SearchTrace run_search(const SearchConfig& cfg, const SearchOptions& opts = {}) {
  validate(cfg);
  auto backend = make_backend(cfg);
  return run_search(cfg, *backend, opts);
}

/// `budget` independent samples from the teacher's space, proxy-evaluated;
/// the top cfg.finalists distinct ones are re-evaluated in full mode.
inline SearchTrace run_random_search(const SearchConfig& cfg, int budget, EvaluationBackend& backend,
                                     const SearchOptions& opts = {}) {
  validate(cfg);
  if (budget < 1) throw ConfigError("budget: must be at least 1");
  const SearchSpace space = cfg.space();
  SearchTrace trace;
  trace.evals.teacher = cfg.teacher;
  trace.evals.teacher_accuracy = cfg.teacher_accuracy;
  for (int i = 0; i < budget; ++i) {
    const auto u = static_cast<std::uint64_t>(i);
    const ArchGraph g = sample_compressed(cfg.teacher, derive_seed(cfg.master_seed, {tag("random"), u}), cfg.policy);
    EvalRecord r = detail::evaluate_with_retry(g, backend, {EvalMode::kProxy, cfg.proxy_epochs}, cfg.teacher,
                                               cfg.teacher_accuracy, "rs-" + std::to_string(i),
                                               derive_seed(cfg.master_seed, {tag("proxy"), u}));
    r.step = i;
    r.kernel = 0;
    ++trace.proxy_evaluations;
    if (opts.on_record) opts.on_record(r);
    trace.evals.records.push_back(std::move(r));
  }
  detail::run_finalists(trace, cfg.finalists, cfg.master_seed, space, cfg.teacher_accuracy, cfg.full_epochs, backend,
                        {}, opts);
  return trace;
}

inline SearchTrace run_random_search(const SearchConfig& cfg, int budget, const SearchOptions& opts = {}) {
  validate(cfg);
  auto backend = make_backend(cfg);
  return run_random_search(cfg, budget, *backend, opts);
}

/// Search with kernels trained elsewhere: no training, one EI maximization per
/// kernel conditioned on `target` (may be empty), each pick evaluated in full
/// mode. trace.selections and trace.finalists hold the picks and their
/// evaluations; trace.best is the best of them.
inline SearchTrace run_transfer_search(const SearchConfig& cfg, const std::vector<EmbedderParams>& pretrained,
                                       const EvalSet& target, EvaluationBackend& backend,
                                       const SearchOptions& opts = {}) {
  validate(cfg);
  if (pretrained.empty()) throw ConfigError("transfer: no pretrained kernels");
  const SearchSpace space = cfg.space();
  for (std::size_t k = 0; k < pretrained.size(); ++k)
    if (pretrained[k].input_size != space.width())
      throw WidthMismatch("kernel " + std::to_string(k) + " reads vectors of width " +
                          std::to_string(pretrained[k].input_size) + " but the target space encodes width " +
                          std::to_string(space.width()));

  SearchTrace trace;
  trace.evals = target;
  trace.evals.teacher = cfg.teacher;
  trace.evals.teacher_accuracy = cfg.teacher_accuracy;
  trace.kernels = pretrained;

  std::set<std::string> exclude;
  double best = target.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
  for (const auto& r : target.records) {
    exclude.insert(encoding_key(space.encode(r.arch)));
    best = std::max(best, r.reward);
  }
  for (std::size_t k = 0; k < pretrained.size(); ++k) {
    const auto ku = static_cast<std::uint64_t>(k);
    const EmbedderParams& w = pretrained[k];
    Candidate choice;
    try {
      Eigen::MatrixXd e(w.embedding_size(), static_cast<Eigen::Index>(target.size()));
      Eigen::VectorXd y(static_cast<Eigen::Index>(target.size()));
      for (std::size_t i = 0; i < target.size(); ++i) {
        e.col(static_cast<Eigen::Index>(i)) = embed(w, space.encode(target.records[i].arch));
        y[static_cast<Eigen::Index>(i)] = target.records[i].reward;
      }
      const GaussianProcess gp = target.empty() ? GaussianProcess() : GaussianProcess(e, y, cfg.kernel);
      choice = maximize_acquisition(space, Scorer{&w, &gp, best}, cfg.acquisition,
                                    derive_seed(cfg.master_seed, {tag("transfer"), ku}), exclude);
    } catch (...) {
      detail::rethrow_with_context("transfer kernel " + std::to_string(k) + ": ");
    }
    ++trace.maximizations;
    exclude.insert(choice.key);
    trace.selections.push_back({0, static_cast<int>(k), choice.graph, choice.ei, target.size()});
    EvalRecord r = detail::evaluate_with_retry(choice.graph, backend, {EvalMode::kFull, cfg.full_epochs}, cfg.teacher,
                                               cfg.teacher_accuracy, "transfer-k" + std::to_string(k),
                                               derive_seed(cfg.master_seed, {tag("full"), ku}));
    r.step = 0;
    r.kernel = static_cast<int>(k);
    ++trace.full_evaluations;
    if (opts.on_record) opts.on_record(r);
    trace.finalists.push_back(std::move(r));
  }
  for (const auto& f : trace.finalists)
    if (trace.best.id.empty() || f.reward > trace.best.reward ||
        (f.reward == trace.best.reward && f.params < trace.best.params))
      trace.best = f;
  return trace;
}

}  // namespace esnac
