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

// esnac: command-line front end.
//
//   esnac search --config C.json --out DIR [--seed N] [--backend B] [--n-max N]
//                [--baseline rs --budget N] [--transfer K1.json ...] [--condition LOG]
//                [--resume]
//   esnac encode ARCH.json [--n-max N] [--teacher T.json] [--header]
//   esnac mutate ARCH.json --seed N [--policy P.json] [--out FILE]
//   esnac report --log LOG --out DIR [--bins N]
//
// Exit status: 0 on success, 2 for invalid configuration or input, 1 for
// failures while running.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esnac/esnac.hpp"

namespace fs = std::filesystem;
using namespace esnac;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

nlohmann::json load_json(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(what + ": cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": '" + path + "' is not valid JSON: " + e.what());
  }
}

struct SearchArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string baseline;
  int budget = 0;
  std::vector<std::string> transfer;
  std::string condition;
  std::string backend;
  int n_max = 0;
  bool resume = false;
};

int cmd_search(const SearchArgs& a) {
  SearchConfig cfg = load_search_config(a.config);
  if (auto env = seed_from_environment()) cfg.master_seed = *env;
  if (a.seed) cfg.master_seed = *a.seed;
  if (!a.backend.empty()) cfg.backend = a.backend;
  if (a.n_max > 0) cfg.n_max = a.n_max;
  validate(cfg);

  std::string mode = "bo";
  if (!a.baseline.empty()) {
    if (a.baseline != "rs") throw ConfigError("--baseline: only 'rs' is supported");
    if (a.budget < 1) throw ConfigError("--budget: a positive budget is required with --baseline rs");
    if (!a.transfer.empty()) throw ConfigError("--transfer: cannot be combined with --baseline");
    mode = "rs";
  } else if (!a.transfer.empty()) {
    mode = "transfer";
  }
  if (a.resume && mode != "bo") throw ConfigError("--resume: only a Bayesian-optimization search can be resumed");

  std::vector<EmbedderParams> pretrained;
  for (const auto& p : a.transfer) {
    try {
      pretrained.push_back(load_embedder(p));
    } catch (const Error& e) {
      throw ConfigError("--transfer: " + std::string(e.what()));
    }
  }
  EvalSet conditioning;
  if (!a.condition.empty()) {
    if (mode != "transfer") throw ConfigError("--condition: only used with --transfer");
    conditioning = load_eval_set(a.condition);
  }

  const fs::path dir = a.out;
  fs::create_directories(dir);
  const fs::path log_path = dir / "evals.jsonl";
  const fs::path manifest_path = dir / "manifest.json";
  std::optional<EvalSet> previous;
  if (a.resume) {
    if (fs::exists(log_path)) previous = load_eval_set(log_path.string());
  } else if (fs::exists(log_path) && fs::file_size(log_path) > 0) {
    throw ConfigError("--out: '" + log_path.string() + "' already exists (use --resume to continue it)");
  }

  nlohmann::json manifest = {{"tool", "esnac"},
                             {"version", kVersion},
                             {"command", "search"},
                             {"mode", mode},
                             {"master_seed", cfg.master_seed},
                             {"config", to_json(cfg)},
                             {"budget", a.budget},
                             {"transfer", a.transfer},
                             {"condition", a.condition},
                             {"resumed", previous.has_value()},
                             {"started", utc_timestamp()},
                             {"finished", nullptr},
                             {"outputs",
                              {{"log", "evals.jsonl"},
                               {"rewards", "rewards.csv"},
                               {"histogram", "histogram.csv"},
                               {"summary", "summary.csv"},
                               {"best", "best.json"},
                               {"kernels", "kernels"}}}};
  write_atomically(manifest_path, manifest.dump(2) + "\n");

  EvalLog log(log_path.string(), cfg.teacher, cfg.teacher_accuracy);
  SearchOptions opts;
  opts.on_record = [&](const EvalRecord& r) {
    log.append(r);
    std::cerr << r.id << " " << to_string(r.mode) << " reward " << r.reward << (r.failed ? " (failed)" : "") << '\n';
  };
  if (previous) opts.resume = &*previous;

  auto backend = make_backend(cfg);
  SearchTrace trace;
  if (mode == "rs") {
    trace = run_random_search(cfg, a.budget, *backend, opts);
  } else if (mode == "transfer") {
    trace = run_transfer_search(cfg, pretrained, conditioning, *backend, opts);
  } else {
    trace = run_search(cfg, *backend, opts);
  }

  EvalSet reported = trace.evals;
  if (mode == "transfer") reported.records = trace.finalists;
  write_reports(reported, trace.best, dir.string());
  save_arch(trace.best.arch, (dir / "best.json").string());
  if (mode == "bo") {
    fs::create_directories(dir / "kernels");
    for (std::size_t k = 0; k < trace.kernels.size(); ++k)
      save_embedder(trace.kernels[k], (dir / "kernels" / ("kernel-" + std::to_string(k) + ".json")).string());
  }
  manifest["finished"] = utc_timestamp();
  write_atomically(manifest_path, manifest.dump(2) + "\n");

  const SummaryRow s = summarize(trace.best, cfg.teacher);
  std::cout << "best " << trace.best.id << ": accuracy " << s.accuracy << ", params " << s.params << ", ratio "
            << s.ratio << ", times " << s.times << ", f " << s.reward << '\n';
  return 0;
}

int cmd_encode(const std::string& arch_path, int n_max, const std::string& teacher_path, bool header) {
  const ArchGraph g = load_arch(arch_path, n_max);
  const ArchGraph ref = teacher_path.empty() ? g : load_arch(teacher_path);
  const int n = n_max > 0 ? n_max : static_cast<int>(g.size());
  write_csv(std::cout, encode(g, n, AttributeScaling::for_teacher(ref)), header);
  return 0;
}

int cmd_mutate(const std::string& arch_path, std::uint64_t seed, const std::string& policy_path,
               const std::string& out_path) {
  const ArchGraph teacher = load_arch(arch_path);
  SamplePolicy policy;
  if (!policy_path.empty()) policy = sample_policy_from_json(load_json(policy_path, "--policy"));
  const ArchGraph g = sample_compressed(teacher, seed, policy);
  if (out_path.empty()) {
    std::cout << to_json(g).dump(2) << '\n';
  } else {
    save_arch(g, out_path);
  }
  const std::int64_t p = param_count(g), tp = param_count(teacher);
  (out_path.empty() ? std::cerr : std::cout)
      << "params " << p << " teacher_params " << tp << " ratio " << static_cast<double>(p) / static_cast<double>(tp)
      << '\n';
  return 0;
}

int cmd_report(const std::string& log_path, const std::string& out, int bins) {
  const EvalSet set = load_eval_set(log_path);
  if (set.empty()) throw ConfigError("--log: '" + log_path + "' holds no records");
  // Best full-mode record if there is one, otherwise the best proxy record.
  const EvalRecord* best = nullptr;
  for (const auto mode : {EvalMode::kFull, EvalMode::kProxy}) {
    for (const auto& r : set.records)
      if (r.mode == mode && (!best || r.reward > best->reward)) best = &r;
    if (best) break;
  }
  write_reports(set, *best, out, bins);
  write_summary(std::cout, summarize(*best, set.teacher));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed architecture search with learned-kernel Bayesian optimization"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SearchArgs sa;
  std::uint64_t seed_value = 0;
  auto* search = app.add_subcommand("search", "run a search and write its artifacts to --out");
  search->add_option("--config", sa.config, "search configuration (JSON)")->required();
  search->add_option("--out", sa.out, "output directory")->required();
  auto* seed_opt = search->add_option("--seed", seed_value, "master seed (overrides ESNAC_SEED and the config)");
  search->add_option("--baseline", sa.baseline, "run a baseline instead: 'rs' (random search)");
  search->add_option("--budget", sa.budget, "number of proxy evaluations for the baseline");
  search->add_option("--transfer", sa.transfer, "kernel weight files to search with, without training");
  search->add_option("--condition", sa.condition, "evaluation log to condition transferred kernels on");
  search->add_option("--backend", sa.backend, "'surrogate' or 'external:<command>'");
  search->add_option("--n-max", sa.n_max, "maximum sequence length (default: teacher node count)");
  search->add_flag("--resume", sa.resume, "continue the evaluation log in --out");

  std::string arch_path, teacher_path;
  int n_max = 0;
  bool header = false;
  auto* enc = app.add_subcommand("encode", "print the layer encoding of an architecture as CSV");
  enc->add_option("arch", arch_path, "architecture file")->required();
  enc->add_option("--n-max", n_max, "sequence length (default: node count)");
  enc->add_option("--teacher", teacher_path, "teacher used for attribute scaling (default: the architecture)");
  enc->add_flag("--header", header, "print a header row");

  std::string policy_path, mutate_out;
  std::uint64_t mutate_seed = 0;
  auto* mut = app.add_subcommand("mutate", "sample one compressed architecture from a teacher");
  mut->add_option("arch", arch_path, "teacher architecture file")->required();
  mut->add_option("--seed", mutate_seed, "sampling seed")->required();
  mut->add_option("--policy", policy_path, "sampling policy (JSON)");
  mut->add_option("--out", mutate_out, "output file (default: stdout)");

  std::string log_path, report_out;
  int bins = 10;
  auto* rep = app.add_subcommand("report", "write reward tables for an evaluation log");
  rep->add_option("--log", log_path, "evaluation log")->required();
  rep->add_option("--out", report_out, "output directory")->required();
  rep->add_option("--bins", bins, "histogram bins")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*search) {
      if (*seed_opt) sa.seed = seed_value;
      return cmd_search(sa);
    }
    if (*enc) return cmd_encode(arch_path, n_max, teacher_path, header);
    if (*mut) return cmd_mutate(arch_path, mutate_seed, policy_path, mutate_out);
    if (*rep) return cmd_report(log_path, report_out, bins);
  } catch (const ConfigError& e) {
    std::cerr << "esnac: " << e.what() << '\n';
    return kExitInput;
  } catch (const InvalidGraph& e) {
    std::cerr << "esnac: " << e.what() << '\n';
    return kExitInput;
  } catch (const TooManyLayers& e) {
    std::cerr << "esnac: " << e.what() << '\n';
    return kExitInput;
  } catch (const OffsetOverflow& e) {
    std::cerr << "esnac: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "esnac: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
