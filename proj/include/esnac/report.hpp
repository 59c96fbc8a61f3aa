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

// Tabular reports of a finished search: reward per evaluation, a reward
// histogram and a one-row summary of the best architecture.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "esnac/evaluator.hpp"

namespace esnac {

/// One row per proxy evaluation, in evaluation order (index starts at 1).
inline void write_reward_csv(std::ostream& out, const EvalSet& evals) {
  out << "index,step,kernel,reward\n";
  out << std::setprecision(10);
  int index = 0;
  for (const auto& r : evals.records) {
    if (r.mode != EvalMode::kProxy) continue;
    out << ++index << ',' << r.step << ',' << r.kernel << ',' << r.reward << '\n';
  }
}

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges; the last bin is closed
  std::vector<int> counts;

  int total() const {
    int n = 0;
    for (int c : counts) n += c;
    return n;
  }
};

/// Equal-width bins over [0, 1], widened to cover any reward outside it.
inline Histogram reward_histogram(const EvalSet& evals, int bins = 10) {
  if (bins < 1) throw DimensionMismatch("histogram needs at least one bin");
  double lo = 0.0, hi = 1.0;
  for (const auto& r : evals.records)
    if (r.mode == EvalMode::kProxy) {
      lo = std::min(lo, r.reward);
      hi = std::max(hi, r.reward);
    }
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
  for (const auto& r : evals.records) {
    if (r.mode != EvalMode::kProxy) continue;
    int b = static_cast<int>(std::floor((r.reward - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

inline void write_histogram(std::ostream& out, const Histogram& h) {
  out << "bin_low,bin_high,count\n";
  out << std::setprecision(6);
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
}

/// Columns: accuracy, #params, compression ratio C, times smaller than the
/// teacher, reward.
struct SummaryRow {
  double accuracy = 0.0;
  std::int64_t params = 0;
  double ratio = 0.0;
  double times = 0.0;
  double reward = 0.0;
};

inline SummaryRow summarize(const EvalRecord& best, const ArchGraph& teacher) {
  const std::int64_t tp = param_count(teacher);
  SummaryRow s;
  s.accuracy = best.accuracy;
  s.params = best.params;
  s.ratio = compression_ratio(best.params, tp);
  s.times = best.params > 0 ? static_cast<double>(tp) / static_cast<double>(best.params)
                            : std::numeric_limits<double>::infinity();
  s.reward = best.reward;
  return s;
}

inline void write_summary(std::ostream& out, const SummaryRow& s) {
  out << "accuracy,params,ratio,times,f\n";
  out << std::fixed << std::setprecision(4) << s.accuracy << ',' << s.params << ',' << s.ratio << ','
      << std::setprecision(2) << s.times << ',' << std::setprecision(4) << s.reward << '\n';
  out.unsetf(std::ios::floatfield);
}

struct ReportPaths {
  std::string rewards, histogram, summary;
};

/// Writes rewards.csv, histogram.csv and summary.csv into `dir`.
inline ReportPaths write_reports(const EvalSet& evals, const EvalRecord& best, const std::string& dir, int bins = 10) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  ReportPaths p{(fs::path(dir) / "rewards.csv").string(), (fs::path(dir) / "histogram.csv").string(),
                (fs::path(dir) / "summary.csv").string()};
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
  };
  {
    auto out = open(p.rewards);
    write_reward_csv(out, evals);
  }
  {
    auto out = open(p.histogram);
    write_histogram(out, reward_histogram(evals, bins));
  }
  {
    auto out = open(p.summary);
    write_summary(out, summarize(best, evals.teacher));
  }
  return p;
}

}  // namespace esnac
