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

// Reward, accuracy backends (synthetic surrogate or an external trainer
// process) and the evaluated-set log.

#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esnac/arch_io.hpp"
#include "esnac/archgraph.hpp"
#include "esnac/common.hpp"
#include "esnac/process.hpp"

namespace esnac {

/// C = 1 - params / teacher_params.
inline double compression_ratio(std::int64_t params, std::int64_t teacher_params) {
  if (teacher_params < 1) throw DimensionMismatch("teacher must have at least one parameter");
  return 1.0 - static_cast<double>(params) / static_cast<double>(teacher_params);
}

/// f = C (2 - C) * accuracy / teacher_accuracy.
inline double reward(double accuracy, std::int64_t params, double teacher_accuracy, std::int64_t teacher_params) {
  if (!(teacher_accuracy > 0.0)) throw DimensionMismatch("teacher accuracy must be positive");
  const double c = compression_ratio(params, teacher_params);
  return c * (2.0 - c) * accuracy / teacher_accuracy;
}

enum class EvalMode { kProxy, kFull };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::kProxy ? "proxy" : "full"; }

inline std::optional<EvalMode> eval_mode_from_string(std::string_view s) {
  if (s == "proxy") return EvalMode::kProxy;
  if (s == "full") return EvalMode::kFull;
  return std::nullopt;
}

struct EvalRequestMode {
  EvalMode mode = EvalMode::kProxy;
  int epochs = 10;
};

/// Short human-readable handle for an architecture in error messages.
inline std::string describe(const ArchGraph& g) {
  std::ostringstream out;
  out << "architecture " << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_json(g).dump()) << std::dec
      << " (" << g.size() << " layers, " << param_count(g) << " params)";
  return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic surrogate.
//
//   q = 1 - a (1 - r)^2 - b max(0, ln(rho_t / rho))^2 + c min(s, 3) / 3
//   accuracy = A_t * clamp(q, 0, 1)  [+ N(0, noise_sd^2) in proxy mode, re-clamped]
//
// with r the fraction of teacher layers kept, rho the parameter ratio and s
// the number of added skip connections. The teacher itself scores A_t.

struct SurrogateConfig {
  std::uint64_t rng_seed = 0;
  double noise_sd = 0.01;
  double depth_weight = 0.3;    // a
  double ratio_weight = 0.2;    // b
  double skip_weight = 0.05;    // c
  double target_ratio = 0.25;   // rho_t
};

struct SurrogateFeatures {
  double kept_fraction = 1.0;  // r
  double param_ratio = 1.0;    // rho
  int added_skips = 0;         // s
};

inline SurrogateFeatures surrogate_features(const ArchGraph& g, const ArchGraph& teacher) {
  return {static_cast<double>(g.size()) / static_cast<double>(teacher.size()),
          static_cast<double>(param_count(g)) / static_cast<double>(param_count(teacher)),
          added_skip_count(teacher, g)};
}

/// Noise-free quality q of a feature vector (before clamping).
inline double surrogate_quality(const SurrogateConfig& cfg, const SurrogateFeatures& f) {
  const double depth = 1.0 - f.kept_fraction;
  const double dev = f.param_ratio > 0.0 ? std::max(0.0, std::log(cfg.target_ratio / f.param_ratio))
                                         : std::numeric_limits<double>::infinity();
  return 1.0 - cfg.depth_weight * depth * depth - cfg.ratio_weight * dev * dev +
         cfg.skip_weight * std::min(f.added_skips, 3) / 3.0;
}

inline double surrogate_accuracy(const SurrogateConfig& cfg, const ArchGraph& g, const ArchGraph& teacher,
                                 double teacher_accuracy, EvalMode mode, std::uint64_t eval_seed = 0) {
  double a = teacher_accuracy * std::clamp(surrogate_quality(cfg, surrogate_features(g, teacher)), 0.0, 1.0);
  if (mode == EvalMode::kProxy && cfg.noise_sd > 0.0) {
    Rng rng(derive_seed(cfg.rng_seed, {fnv1a(to_json(g).dump()), eval_seed}));
    std::normal_distribution<double> noise(0.0, cfg.noise_sd);
    a = std::clamp(a + noise(rng), 0.0, teacher_accuracy);
  }
  return a;
}

/// Optimum of the noise-free surrogate reward (1 - rho^2) * clamp(q, 0, 1)
/// over continuous features: r = 1, s = 3, and the best rho found by
/// golden-section search on each side of the kink where q reaches 1.
struct SurrogateOptimum {
  SurrogateFeatures features;
  double reward = 0.0;  // relative to the teacher accuracy
};

inline SurrogateOptimum surrogate_optimum(const SurrogateConfig& cfg) {
  SurrogateFeatures f{1.0, 1.0, 3};
  auto value = [&](double rho) {
    f.param_ratio = rho;
    return (1.0 - rho * rho) * std::clamp(surrogate_quality(cfg, f), 0.0, 1.0);
  };
  auto golden = [&](double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = value(x1), f2 = value(x2);
    for (int it = 0; it < 200; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + g * (hi - lo);
        f2 = value(x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - g * (hi - lo);
        f1 = value(x1);
      }
    }
    return 0.5 * (lo + hi);
  };
  // q reaches 1 where b * ln(rho_t / rho)^2 = c; below that rho the reward is
  // unimodal, above it (1 - rho^2) decreases.
  const double kink = cfg.ratio_weight > 0.0
                          ? std::min(1.0, cfg.target_ratio * std::exp(-std::sqrt(cfg.skip_weight / cfg.ratio_weight)))
                          : 1e-12;
  double best_rho = kink, best = value(kink);
  const double inner = golden(1e-9, kink);
  if (value(inner) > best) {
    best_rho = inner;
    best = value(inner);
  }
  f.param_ratio = best_rho;
  return {f, best};
}

// ---------------------------------------------------------------------------
// Backends.

class EvaluationBackend {
 public:
  virtual ~EvaluationBackend() = default;
  /// Accuracy in [0, 1]; throws a Backend* error on failure.
  virtual double accuracy(const ArchGraph& g, const EvalRequestMode& mode, std::uint64_t seed,
                          const std::string& request_id) = 0;
  virtual std::string name() const = 0;
};

class SurrogateBackend final : public EvaluationBackend {
 public:
  SurrogateBackend(ArchGraph teacher, double teacher_accuracy, SurrogateConfig cfg = {})
      : teacher_(std::move(teacher)), teacher_accuracy_(teacher_accuracy), cfg_(cfg) {}

  double accuracy(const ArchGraph& g, const EvalRequestMode& mode, std::uint64_t seed, const std::string&) override {
    return surrogate_accuracy(cfg_, g, teacher_, teacher_accuracy_, mode.mode, seed);
  }
  std::string name() const override { return "surrogate"; }
  const SurrogateConfig& config() const { return cfg_; }

 private:
  ArchGraph teacher_;
  double teacher_accuracy_;
  SurrogateConfig cfg_;
};

struct ExternalConfig {
  double timeout_full = 3600.0;  // seconds
  double timeout_proxy = 600.0;
};

/// Newline-delimited JSON over a persistent child process:
///   request  {"id", "mode", "epochs", "architecture"}
///   response {"id", "status": "ok"|"error", "accuracy", "message"?}
/// After a timeout or a broken stream the child is killed and restarted on
/// the next request.
class ExternalBackend final : public EvaluationBackend {
 public:
  explicit ExternalBackend(std::string command, ExternalConfig cfg = {}) : proc_(std::move(command)), cfg_(cfg) {}

  double accuracy(const ArchGraph& g, const EvalRequestMode& mode, std::uint64_t, const std::string& id) override {
    const nlohmann::json req = {
        {"id", id}, {"mode", std::string(to_string(mode.mode))}, {"epochs", mode.epochs}, {"architecture", to_json(g)}};
    const std::string what = describe(g) + ", request " + id;
    if (!proc_.write_line(req.dump())) {
      proc_.kill_now();
      throw BackendMalformedResponse(what + ": evaluator closed its input");
    }
    const double timeout = mode.mode == EvalMode::kFull ? cfg_.timeout_full : cfg_.timeout_proxy;
    std::string line;
    switch (proc_.read_line(line, timeout)) {
      case LineProcess::ReadStatus::kTimeout:
        proc_.kill_now();
        throw BackendTimeout(what + ": no response within " + std::to_string(timeout) + " s");
      case LineProcess::ReadStatus::kClosed:
        proc_.kill_now();
        throw BackendMalformedResponse(what + ": evaluator exited without responding");
      case LineProcess::ReadStatus::kLine: break;
    }
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      proc_.kill_now();
      throw BackendMalformedResponse(what + ": response is not JSON: " + line.substr(0, 200));
    }
    auto malformed = [&](const std::string& why) {
      proc_.kill_now();
      return BackendMalformedResponse(what + ": " + why);
    };
    if (!resp.is_object()) throw malformed("response is not an object");
    if (!resp.contains("id") || !resp["id"].is_string() || resp["id"].get<std::string>() != id)
      throw malformed("response id does not match the request");
    if (!resp.contains("status") || !resp["status"].is_string()) throw malformed("response has no status");
    const auto status = resp["status"].get<std::string>();
    if (status == "error")
      throw BackendReportedFailure(what + ": " + resp.value("message", std::string("evaluator reported an error")));
    if (status != "ok") throw malformed("unknown status '" + status + "'");
    if (!resp.contains("accuracy") || !resp["accuracy"].is_number()) throw malformed("response has no accuracy");
    const double acc = resp["accuracy"].get<double>();
    if (!(acc >= 0.0 && acc <= 1.0)) throw malformed("accuracy " + std::to_string(acc) + " is outside [0, 1]");
    return acc;
  }

  std::string name() const override { return "external:" + proc_.command(); }

 private:
  LineProcess proc_;
  ExternalConfig cfg_;
};

// ---------------------------------------------------------------------------
// Evaluated set.

struct EvalRecord {
  std::string id;
  ArchGraph arch;
  double accuracy = 0.0;
  std::int64_t params = 0;
  double reward = 0.0;
  EvalMode mode = EvalMode::kProxy;
  std::uint64_t seed = 0;
  std::string timestamp;  // wall clock, not compared
  int step = -1;          // -1 outside the search loop
  int kernel = -1;
  bool failed = false;
  std::string message;

  bool operator==(const EvalRecord& o) const {
    return id == o.id && arch == o.arch && accuracy == o.accuracy && params == o.params && reward == o.reward &&
           mode == o.mode && seed == o.seed && step == o.step && kernel == o.kernel && failed == o.failed &&
           message == o.message;
  }
};

struct EvalSet {
  ArchGraph teacher;
  double teacher_accuracy = 0.0;
  std::vector<EvalRecord> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  bool operator==(const EvalSet&) const = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

/// Evaluates g once. Backend errors propagate unchanged.
inline EvalRecord evaluate(const ArchGraph& g, EvaluationBackend& backend, const EvalRequestMode& mode,
                           const ArchGraph& teacher, double teacher_accuracy, std::string id, std::uint64_t seed) {
  EvalRecord r;
  r.id = std::move(id);
  r.arch = g;
  r.mode = mode.mode;
  r.seed = seed;
  r.params = param_count(g);
  r.accuracy = backend.accuracy(g, mode, seed, r.id);
  r.reward = reward(r.accuracy, r.params, teacher_accuracy, param_count(teacher));
  r.timestamp = utc_timestamp();
  return r;
}

inline constexpr int kEvalLogVersion = 1;

inline nlohmann::json to_json(const EvalRecord& r) {
  nlohmann::json j = {{"id", r.id},
                      {"architecture", to_json(r.arch)},
                      {"accuracy", r.accuracy},
                      {"params", r.params},
                      {"reward", r.reward},
                      {"mode", std::string(to_string(r.mode))},
                      {"seed", r.seed},
                      {"timestamp", r.timestamp},
                      {"step", r.step},
                      {"kernel", r.kernel},
                      {"failed", r.failed}};
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

inline nlohmann::json log_header(const ArchGraph& teacher, double teacher_accuracy) {
  return {{"format", "esnac-evalset"},
          {"version", kEvalLogVersion},
          {"teacher", to_json(teacher)},
          {"teacher_accuracy", teacher_accuracy}};
}

/// Append-only writer: one header line, then one record per line, flushed
/// after every append.
class EvalLog {
 public:
  EvalLog() = default;
  EvalLog(const std::string& path, const ArchGraph& teacher, double teacher_accuracy) { open(path, teacher, teacher_accuracy); }

  void open(const std::string& path, const ArchGraph& teacher, double teacher_accuracy) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw Error("cannot open evaluation log '" + path + "'");
    if (fresh) {
      out_ << log_header(teacher, teacher_accuracy).dump() << '\n';
      out_.flush();
    }
  }
  bool is_open() const { return out_.is_open(); }

  void append(const EvalRecord& r) {
    if (!out_) return;
    out_ << to_json(r).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void save_eval_set(const EvalSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << log_header(set.teacher, set.teacher_accuracy).dump() << '\n';
  for (const auto& r : set.records) out << to_json(r).dump() << '\n';
}

/// Reads a log written by EvalLog / save_eval_set. Every record's params and
/// reward are recomputed and must match what was stored.
inline EvalSet load_eval_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptLog("cannot open '" + path + "'");
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EvalSet set;
  if (content.empty()) return set;
  if (content.back() != '\n') {
    const auto lines = std::count(content.begin(), content.end(), '\n') + 1;
    throw CorruptLog(path + ":" + std::to_string(lines) + ": truncated line (no trailing newline)");
  }
  std::istringstream stream(content);
  std::string line;
  int lineno = 0;
  std::int64_t teacher_params = 0;
  while (std::getline(stream, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorruptLog(where + "not valid JSON");
    }
    try {
      if (lineno == 1) {
        if (j.value("format", "") != "esnac-evalset") throw CorruptLog(where + "missing log header");
        if (j.value("version", 0) != kEvalLogVersion) throw CorruptLog(where + "unsupported log version");
        set.teacher = arch_from_json(j.at("teacher"));
        set.teacher_accuracy = j.at("teacher_accuracy").get<double>();
        teacher_params = param_count(set.teacher);
        continue;
      }
      EvalRecord r;
      r.id = j.at("id").get<std::string>();
      r.arch = arch_from_json(j.at("architecture"));
      r.accuracy = j.at("accuracy").get<double>();
      r.params = j.at("params").get<std::int64_t>();
      r.reward = j.at("reward").get<double>();
      const auto mode = eval_mode_from_string(j.at("mode").get<std::string>());
      if (!mode) throw CorruptLog(where + "unknown mode");
      r.mode = *mode;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.timestamp = j.value("timestamp", std::string{});
      r.step = j.value("step", -1);
      r.kernel = j.value("kernel", -1);
      r.failed = j.value("failed", false);
      r.message = j.value("message", std::string{});
      if (r.params != param_count(r.arch)) throw CorruptLog(where + "params do not match the architecture");
      const double expect = reward(r.accuracy, r.params, set.teacher_accuracy, teacher_params);
      if (std::abs(expect - r.reward) > 1e-12 * std::max(1.0, std::abs(expect)))
        throw CorruptLog(where + "stored reward does not match accuracy and params");
      set.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptLog(where + e.what());
    } catch (const InvalidGraph& e) {
      throw CorruptLog(where + e.what());
    }
  }
  return set;
}

}  // namespace esnac
