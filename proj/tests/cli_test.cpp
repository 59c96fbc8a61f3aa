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

// Drives the esnac binary as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "esnac/esnac.hpp"
#include "esnac/zoo.hpp"

namespace esnac {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("esnac-cli-") + info->name() + "-" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    save_arch(toy_resnet(), (dir_ / "teacher.json").string());
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  // `env` is a prefix such as "ESNAC_SEED=3"; empty clears ESNAC_SEED.
  Result esnac(const std::string& args, const std::string& env = "") {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = (env.empty() ? std::string("env -u ESNAC_SEED ") : "env " + env + " ") + quote(ESNAC_CLI) +
                            " " + args + " > " + quote(out.string()) + " 2> " + quote(err.string());
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  nlohmann::json small_config(int steps, int kernels) const {
    return {{"teacher", "teacher.json"},
            {"teacher_accuracy", 0.9},
            {"steps", steps},
            {"kernels", kernels},
            {"hidden_size", 4},
            {"master_seed", 7},
            {"finalists", 2},
            {"acquisition", {{"num_candidates", 30}}},
            {"train", {{"epochs", 5}, {"learning_rate", 0.01}}}};
  }

  std::string write_config(const nlohmann::json& doc, const std::string& name = "config.json") {
    spit(dir_ / name, doc.dump(2));
    return quote((dir_ / name).string());
  }

  std::string out_dir(const std::string& name) const { return quote((dir_ / name).string()); }

  static int count_proxy(const EvalSet& s) {
    int n = 0;
    for (const auto& r : s.records) n += r.mode == EvalMode::kProxy;
    return n;
  }

  fs::path dir_;
};

TEST_F(Cli, SearchWritesLogReportsKernelsAndManifest) {
  const Result r = esnac("search --config " + write_config(small_config(2, 2)) + " --out " + out_dir("run"));
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run = dir_ / "run";
  const EvalSet log = load_eval_set((run / "evals.jsonl").string());
  EXPECT_EQ(count_proxy(log), 4);
  for (const char* f : {"manifest.json", "rewards.csv", "histogram.csv", "summary.csv", "best.json",
                        "kernels/kernel-0.json", "kernels/kernel-1.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_NO_THROW(validate(load_arch((run / "best.json").string())));
  const auto manifest = nlohmann::json::parse(slurp(run / "manifest.json"));
  EXPECT_EQ(manifest["mode"], "bo");
  EXPECT_EQ(manifest["master_seed"], 7);
  EXPECT_FALSE(manifest["finished"].is_null());
  EXPECT_NE(r.out.find("best "), std::string::npos);
}

TEST_F(Cli, ManifestReproducesTheRun) {
  ASSERT_EQ(esnac("search --config " + write_config(small_config(2, 2)) + " --out " + out_dir("a")).code, 0);
  const auto manifest = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
  const Result again = esnac("search --config " + write_config(manifest["config"], "from-manifest.json") + " --out " +
                          out_dir("b"));
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(dir_ / "a" / "rewards.csv"), slurp(dir_ / "b" / "rewards.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "best.json"), slurp(dir_ / "b" / "best.json"));
}

TEST_F(Cli, MissingTeacherIsAConfigError) {
  auto doc = small_config(2, 2);
  doc.erase("teacher");
  const Result r = esnac("search --config " + write_config(doc) + " --out " + out_dir("run"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("teacher"), std::string::npos) << r.err;
}

TEST_F(Cli, BadNestedFieldIsNamedByPath) {
  auto doc = small_config(2, 2);
  doc["train"]["epochz"] = 3;
  Result r = esnac("search --config " + write_config(doc) + " --out " + out_dir("run"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.epochz"), std::string::npos) << r.err;

  doc = small_config(2, 2);
  doc["kernels"] = 0;
  r = esnac("search --config " + write_config(doc) + " --out " + out_dir("run"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("kernels"), std::string::npos) << r.err;
}

TEST_F(Cli, RandomSearchBaseline) {
  const Result r =
      esnac("search --config " + write_config(small_config(2, 2)) + " --out " + out_dir("rs") + " --baseline rs --budget 4");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_proxy(load_eval_set((dir_ / "rs" / "evals.jsonl").string())), 4);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "rs" / "manifest.json"))["mode"], "rs");
  EXPECT_FALSE(fs::exists(dir_ / "rs" / "kernels"));
}

TEST_F(Cli, SeedPrecedence) {
  const std::string cfg = write_config(small_config(1, 1));
  auto seed_of = [&](const std::string& name) {
    return nlohmann::json::parse(slurp(dir_ / name / "manifest.json"))["master_seed"].get<std::uint64_t>();
  };
  ASSERT_EQ(esnac("search --config " + cfg + " --out " + out_dir("c") + " --baseline rs --budget 2").code, 0);
  EXPECT_EQ(seed_of("c"), 7u);
  ASSERT_EQ(esnac("search --config " + cfg + " --out " + out_dir("e") + " --baseline rs --budget 2", "ESNAC_SEED=11").code,
            0);
  EXPECT_EQ(seed_of("e"), 11u);
  ASSERT_EQ(esnac("search --config " + cfg + " --out " + out_dir("s") + " --baseline rs --budget 2 --seed 13",
                  "ESNAC_SEED=11")
                .code,
            0);
  EXPECT_EQ(seed_of("s"), 13u);
  const Result bad = esnac("search --config " + cfg + " --out " + out_dir("x") + " --baseline rs --budget 2", "ESNAC_SEED=abc");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("ESNAC_SEED"), std::string::npos) << bad.err;
}

TEST_F(Cli, RefusesToOverwriteAndResumesATruncatedLog) {
  const std::string cfg = write_config(small_config(2, 2));
  ASSERT_EQ(esnac("search --config " + cfg + " --out " + out_dir("a")).code, 0);
  EXPECT_EQ(esnac("search --config " + cfg + " --out " + out_dir("a")).code, 2);

  // Keep the header and the first step, as if the run had been interrupted.
  std::istringstream lines(slurp(dir_ / "a" / "evals.jsonl"));
  std::string line, kept;
  for (int i = 0; i < 3 && std::getline(lines, line); ++i) kept += line + "\n";
  fs::create_directories(dir_ / "b");
  spit(dir_ / "b" / "evals.jsonl", kept);

  const Result r = esnac("search --config " + cfg + " --out " + out_dir("b") + " --resume");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "a" / "rewards.csv"), slurp(dir_ / "b" / "rewards.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "best.json"), slurp(dir_ / "b" / "best.json"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir_ / "b" / "manifest.json"))["resumed"].get<bool>());
}

TEST_F(Cli, ExternalBackendOverride) {
  const Result r = esnac("search --config " + write_config(small_config(1, 2)) + " --out " + out_dir("ext") +
                      " --backend " + quote(std::string("external:") + ESNAC_STUB_EVALUATOR + " echo 0.6"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& rec : load_eval_set((dir_ / "ext" / "evals.jsonl").string()).records) EXPECT_EQ(rec.accuracy, 0.6);
}

TEST_F(Cli, ReportRebuildsTablesFromALog) {
  ASSERT_EQ(esnac("search --config " + write_config(small_config(2, 2)) + " --out " + out_dir("run")).code, 0);
  const Result r = esnac("report --log " + quote((dir_ / "run" / "evals.jsonl").string()) + " --out " + out_dir("rep"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "run" / "rewards.csv"), slurp(dir_ / "rep" / "rewards.csv"));
  EXPECT_EQ(slurp(dir_ / "run" / "summary.csv"), slurp(dir_ / "rep" / "summary.csv"));
  EXPECT_EQ(r.out.rfind("accuracy,params,ratio,times,f\n", 0), 0u) << r.out;
}

TEST_F(Cli, EncodeSingleLayer) {
  LayerNode conv{.id = 0, .type = LayerType::kConv, .kernel_size = 3, .stride = 1, .padding = 1, .group = 1,
                 .in_channels = 3, .out_channels = 8, .in_spatial = 32, .out_spatial = 32};
  ArchGraph g;
  g.nodes = {conv};
  save_arch(g, (dir_ / "one.json").string());
  const Result r = esnac("encode " + quote((dir_ / "one.json").string()) + " --n-max 3");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream rows(r.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(rows, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u);
  const auto commas = std::count(lines[0].begin(), lines[0].end(), ',');
  EXPECT_EQ(commas + 1, encoding_width(3));
  EXPECT_EQ(encoding_width(3), kNumLayerTypes + 2 * 3 + 6);

  const Result h = esnac("encode " + quote((dir_ / "one.json").string()) + " --header");
  ASSERT_EQ(h.code, 0);
  EXPECT_EQ(std::count(h.out.begin(), h.out.end(), '\n'), 2);
}

TEST_F(Cli, EncodeRejectsACycle) {
  nlohmann::json doc = to_json(toy_chain6());
  doc["edges"].push_back({5, 0});
  spit(dir_ / "cycle.json", doc.dump());
  const Result r = esnac("encode " + quote((dir_ / "cycle.json").string()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cycle"), std::string::npos) << r.err;
}

TEST_F(Cli, EncodeRejectsTooManyLayers) {
  const Result r = esnac("encode " + quote((dir_ / "teacher.json").string()) + " --n-max 5");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("n_max=5"), std::string::npos) << r.err;
}

TEST_F(Cli, MutateIsValidSmallerAndDeterministic) {
  const std::string teacher = quote((dir_ / "teacher.json").string());
  for (int seed : {1, 2, 3}) {
    const std::string a = "a" + std::to_string(seed) + ".json", b = "b" + std::to_string(seed) + ".json";
    const Result ra = esnac("mutate " + teacher + " --seed " + std::to_string(seed) + " --out " + out_dir(a));
    const Result rb = esnac("mutate " + teacher + " --seed " + std::to_string(seed) + " --out " + out_dir(b));
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(rb.code, 0) << rb.err;
    EXPECT_EQ(slurp(dir_ / a), slurp(dir_ / b));
    const ArchGraph g = load_arch((dir_ / a).string());
    EXPECT_NO_THROW(validate(g));
    EXPECT_LE(param_count(g), param_count(toy_resnet()));
    EXPECT_NE(ra.out.find("teacher_params " + std::to_string(param_count(toy_resnet()))), std::string::npos) << ra.out;
  }
}

TEST_F(Cli, MutateWithTheIdentityPolicyReturnsTheTeacher) {
  spit(dir_ / "policy.json", R"({"removal_prob": 0, "ratios": [1.0], "max_skips": 0})");
  const Result r = esnac("mutate " + quote((dir_ / "teacher.json").string()) + " --seed 5 --policy " +
                      quote((dir_ / "policy.json").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  const ArchGraph out = arch_from_json(nlohmann::json::parse(r.out));
  const ArchGraph in = toy_resnet();
  EXPECT_EQ(to_json(out)["nodes"], to_json(in)["nodes"]);
  EXPECT_EQ(to_json(out)["edges"], to_json(in)["edges"]);
}

TEST_F(Cli, SampleConfigsLoad) {
  for (const char* name : {"search_surrogate.json", "search_external.json"}) {
    const fs::path p = fs::path(ESNAC_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_search_config(p.string())) << name;
  }
  const Result r = esnac("search --config " + quote((fs::path(ESNAC_SOURCE_DIR) / "configs" / "search_surrogate.json").string()) +
                      " --out " + out_dir("sample") + " --baseline rs --budget 3");
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(esnac("").code, 2);
  EXPECT_EQ(esnac("frobnicate").code, 2);
  EXPECT_EQ(esnac("search --out " + out_dir("x")).code, 2);
  EXPECT_EQ(esnac("encode " + quote((dir_ / "missing.json").string())).code, 2);
}

}  // namespace
}  // namespace esnac
