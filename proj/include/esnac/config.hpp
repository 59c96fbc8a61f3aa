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

// JSON search configuration. The document mirrors SearchConfig; nested
// structs are nested objects. "teacher" is either an inline architecture
// document or a path, resolved against the config file's directory.
// Errors name the offending field, e.g. "ConfigError: train.epochs: ...".

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "esnac/arch_io.hpp"
#include "esnac/search.hpp"

namespace esnac {

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  /// Whichever of two accepted spellings is present (`key` if neither).
  std::string pick(const std::string& key, const std::string& alias) const {
    if (j_.contains(key) && j_.contains(alias))
      throw ConfigError(field(key) + ": given twice (also as '" + alias + "')");
    return j_.contains(alias) ? alias : key;
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    const std::string f = field(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(f + ": expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(f + ": expected a non-negative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(f + ": expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw ConfigError(f + ": out of range");
      out = static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(f + ": expected a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(f + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw ConfigError(f + ": expected an array of numbers");
      out.clear();
      for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError(f + ": expected an array of numbers");
        out.push_back(x.get<double>());
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  /// Nested object; an absent key yields an empty object.
  ConfigReader child(const std::string& key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j_.contains(key)) return ConfigReader(empty, field(key));
    seen_.insert(key);
    return ConfigReader(j_.at(key), field(key));
  }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k) + ": unknown field");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_policy(ConfigReader& p, SamplePolicy& policy) {
  p.get("removal_prob", policy.removal_prob);
  p.get("ratios", policy.ratios);
  p.get("max_skips", policy.max_skips);
  p.get("max_retries", policy.max_retries);
  p.reject_unknown();
  if (policy.ratios.empty()) throw ConfigError(p.field("ratios") + ": must not be empty");
  for (double x : policy.ratios)
    if (!(x > 0.0 && x <= 1.0)) throw ConfigError(p.field("ratios") + ": every ratio must be in (0, 1]");
  if (!(policy.removal_prob >= 0.0 && policy.removal_prob < 1.0))
    throw ConfigError(p.field("removal_prob") + ": must be in [0, 1)");
  if (policy.max_skips < 0) throw ConfigError(p.field("max_skips") + ": must be non-negative");
  if (policy.max_retries < 0) throw ConfigError(p.field("max_retries") + ": must be non-negative");
}

}  // namespace detail

/// A sampling policy document: {"removal_prob", "ratios", "max_skips", "max_retries"}.
inline SamplePolicy sample_policy_from_json(const nlohmann::json& doc) {
  SamplePolicy policy;
  detail::ConfigReader r(doc, "policy");
  detail::read_policy(r, policy);
  return policy;
}

/// Builds a SearchConfig from a parsed document. `base_dir` resolves a
/// teacher given as a relative path.
inline SearchConfig search_config_from_json(const nlohmann::json& doc, const std::string& base_dir = ".") {
  using detail::ConfigReader;
  SearchConfig c;
  ConfigReader r(doc, "");

  if (!r.has("teacher")) throw ConfigError("teacher: required field is missing");
  if (!r.has("teacher_accuracy")) throw ConfigError("teacher_accuracy: required field is missing");
  {
    const auto& t = r.raw("teacher");
    try {
      if (t.is_string()) {
        std::filesystem::path p = t.get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        c.teacher = load_arch(p.string());
      } else if (t.is_object()) {
        c.teacher = arch_from_json(t);
      } else {
        throw ConfigError("teacher: expected a path or an architecture object");
      }
    } catch (const InvalidGraph& e) {
      throw ConfigError(std::string("teacher: ") + e.what());
    }
  }
  r.get("teacher_accuracy", c.teacher_accuracy);
  r.get("steps", c.steps);
  r.get("kernels", c.kernels);
  r.get("subset_prob", c.subset_prob);
  r.get("n_max", c.n_max);
  r.get("hidden_size", c.hidden_size);
  r.get("condition_on_full_D", c.condition_on_full_D);
  r.get("backend", c.backend);
  r.get("proxy_epochs", c.proxy_epochs);
  r.get("full_epochs", c.full_epochs);
  r.get("finalists", c.finalists);
  r.get("master_seed", c.master_seed);

  {
    auto p = r.child("policy");
    detail::read_policy(p, c.policy);
  }
  {
    auto a = r.child("acquisition");
    std::string method(to_string(c.acquisition.method));
    a.get(a.pick("method", "maximizer"), method);
    const auto m = acquisition_method_from_string(method);
    if (!m) throw ConfigError(a.field("method") + ": expected 'random' or 'evolutionary'");
    c.acquisition.method = *m;
    a.get("num_candidates", c.acquisition.num_candidates);
    a.get(a.pick("population", "ea_population"), c.acquisition.population);
    a.get(a.pick("generations", "ea_generations"), c.acquisition.generations);
    a.get(a.pick("mutation_rate", "ea_mutation_rate"), c.acquisition.mutation_rate);
    a.reject_unknown();
  }
  {
    auto t = r.child("train");
    std::string objective(to_string(c.train.objective));
    t.get("objective", objective);
    const auto o = kernel_objective_from_string(objective);
    if (!o) throw ConfigError(t.field("objective") + ": expected 'loo', 'marginal' or 'euclidean'");
    c.train.objective = *o;
    t.get("epochs", c.train.epochs);
    t.get("learning_rate", c.train.learning_rate);
    t.get("beta1", c.train.beta1);
    t.get("beta2", c.train.beta2);
    t.get("epsilon", c.train.epsilon);
    t.get("max_restarts", c.train.max_restarts);
    t.reject_unknown();
  }
  {
    auto k = r.child(r.pick("kernel", "kernel_cfg"));
    k.get("sigma", c.kernel.sigma);
    k.get(k.pick("noise", "noise_var"), c.kernel.noise);
    k.get("jitter", c.kernel.jitter);
    k.get("max_jitter", c.kernel.max_jitter);
    k.reject_unknown();
  }
  {
    auto s = r.child("surrogate");
    s.get("rng_seed", c.surrogate.rng_seed);
    s.get("noise_sd", c.surrogate.noise_sd);
    s.get("depth_weight", c.surrogate.depth_weight);
    s.get("ratio_weight", c.surrogate.ratio_weight);
    s.get("skip_weight", c.surrogate.skip_weight);
    s.get("target_ratio", c.surrogate.target_ratio);
    s.reject_unknown();
  }
  {
    auto e = r.child("external");
    e.get("timeout_full", c.external.timeout_full);
    e.get("timeout_proxy", c.external.timeout_proxy);
    e.reject_unknown();
  }
  r.reject_unknown();
  if (c.kernel.jitter <= 0.0) throw ConfigError("kernel.jitter: must be positive");
  if (c.external.timeout_full <= 0.0) throw ConfigError("external.timeout_full: must be positive");
  if (c.external.timeout_proxy <= 0.0) throw ConfigError("external.timeout_proxy: must be positive");
  if (c.surrogate.noise_sd < 0.0) throw ConfigError("surrogate.noise_sd: must be non-negative");
  if (!(c.surrogate.target_ratio > 0.0)) throw ConfigError("surrogate.target_ratio: must be positive");
  validate(c);
  return c;
}

inline SearchConfig load_search_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return search_config_from_json(doc, dir.empty() ? "." : dir.string());
}

/// The full configuration with the teacher inlined; parsing it gives back the
/// same configuration.
inline nlohmann::json to_json(const SearchConfig& c) {
  return {{"steps", c.steps},
          {"kernels", c.kernels},
          {"subset_prob", c.subset_prob},
          {"teacher", to_json(c.teacher)},
          {"teacher_accuracy", c.teacher_accuracy},
          {"n_max", c.n_max},
          {"policy",
           {{"removal_prob", c.policy.removal_prob},
            {"ratios", c.policy.ratios},
            {"max_skips", c.policy.max_skips},
            {"max_retries", c.policy.max_retries}}},
          {"hidden_size", c.hidden_size},
          {"acquisition",
           {{"method", std::string(to_string(c.acquisition.method))},
            {"num_candidates", c.acquisition.num_candidates},
            {"population", c.acquisition.population},
            {"generations", c.acquisition.generations},
            {"mutation_rate", c.acquisition.mutation_rate}}},
          {"train",
           {{"objective", std::string(to_string(c.train.objective))},
            {"epochs", c.train.epochs},
            {"learning_rate", c.train.learning_rate},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"epsilon", c.train.epsilon},
            {"max_restarts", c.train.max_restarts}}},
          {"kernel",
           {{"sigma", c.kernel.sigma},
            {"noise", c.kernel.noise},
            {"jitter", c.kernel.jitter},
            {"max_jitter", c.kernel.max_jitter}}},
          {"condition_on_full_D", c.condition_on_full_D},
          {"backend", c.backend},
          {"surrogate",
           {{"rng_seed", c.surrogate.rng_seed},
            {"noise_sd", c.surrogate.noise_sd},
            {"depth_weight", c.surrogate.depth_weight},
            {"ratio_weight", c.surrogate.ratio_weight},
            {"skip_weight", c.surrogate.skip_weight},
            {"target_ratio", c.surrogate.target_ratio}}},
          {"external", {{"timeout_full", c.external.timeout_full}, {"timeout_proxy", c.external.timeout_proxy}}},
          {"proxy_epochs", c.proxy_epochs},
          {"full_epochs", c.full_epochs},
          {"finalists", c.finalists},
          {"master_seed", c.master_seed}};
}

/// ESNAC_SEED, if set.
inline std::optional<std::uint64_t> seed_from_environment() {
  const char* v = std::getenv("ESNAC_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const std::string s(v);
    if (s.front() == '-') throw std::invalid_argument("negative");
    const auto seed = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return seed;
  } catch (const std::exception&) {
    throw ConfigError(std::string("ESNAC_SEED: '") + v + "' is not a non-negative integer");
  }
}

}  // namespace esnac
