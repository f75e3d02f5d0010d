// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "hld/app/commands.hpp"
#include "hld/app/gradcheck_suite.hpp"
#include "hld/data/ops.hpp"
#include "hld/util/error.hpp"

namespace fs = std::filesystem;
using namespace hld::app;
using hld::ErrorCode;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hld::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no hld::Error thrown";
  return ErrorCode::TrainingFailure;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hld_app_" + name);
  fs::remove_all(p);
  return p;
}

json tiny_config(const fs::path& out) {
  json j = json::parse(R"({
    "format_version": 1,
    "generator": {"seed": 3, "subjects": 10, "feature_dim": 3, "schedule_entries": 8,
                  "min_duration_s": 4, "max_duration_s": 5},
    "variant": "AnchorVMABM",
    "hidden_dim": 3,
    "pretrain": {"epochs": 1, "triplets_per_subject_per_epoch": 2},
    "finetune": {"epochs": 1},
    "folds": 2,
    "seeds": [0, 1]
  })");
  j["output_dir"] = out.string();
  return j;
}

}  // namespace

TEST(RunConfig, ParsesAndRoundTrips) {
  auto c = run_config_from_json(tiny_config("x"));
  EXPECT_EQ(c.hidden_dim, 3u);
  EXPECT_EQ(c.folds, 2u);
  ASSERT_TRUE(c.generator.has_value());
  EXPECT_EQ(c.generator->subjects, 10u);
  EXPECT_FALSE(c.dataset.has_value());
  auto again = run_config_from_json(json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(RunConfig, Invariants) {
  auto j = tiny_config("x");
  j["dataset"] = "somewhere";
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j.erase("generator");
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j["seeds"] = json::array();
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j["hiden_dim"] = 4;
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j["format_version"] = 2;
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j["variant"] = "bogus";
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
  j = tiny_config("x");
  j["hidden_dim"] = "wide";
  EXPECT_EQ(code_of([&] { run_config_from_json(j); }), ErrorCode::InvalidConfig);
}

TEST(RunConfig, Overrides) {
  auto j = tiny_config("x");
  apply_override(j, "pretrain.lr=0.01");
  apply_override(j, "variant=Single");
  apply_override(j, "seeds=[7]");
  apply_override(j, "output_dir=runs/a");
  auto c = run_config_from_json(j);
  EXPECT_EQ(c.pretrain.lr, 0.01);
  EXPECT_EQ(c.variant, hld::pipeline::ModelVariant::Single);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{7});
  EXPECT_EQ(c.output_dir, fs::path("runs/a"));
  apply_override(j, "generator=null");
  EXPECT_FALSE(j.contains("generator"));
  EXPECT_EQ(code_of([&] { apply_override(j, "no_equals_sign"); }), ErrorCode::InvalidConfig);
}

TEST(RunConfig, LoadFromFile) {
  auto dir = temp_dir("load");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << tiny_config(dir / "out").dump(2);
  auto c = load_run_config(dir / "c.json", {"folds=3"});
  EXPECT_EQ(c.folds, 3u);
  EXPECT_EQ(code_of([&] { load_run_config(dir / "missing.json"); }), ErrorCode::IoError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(code_of([&] { load_run_config(dir / "bad.json"); }), ErrorCode::InvalidConfig);
  fs::remove_all(dir);
}

TEST(Commands, GenerateIsByteIdenticalAndCreatesDirectories) {
  auto dir = temp_dir("generate");
  auto c = run_config_from_json(tiny_config(dir));
  std::ostringstream log;
  const auto a = cmd_generate(c, dir / "nested" / "a", log);
  const auto b = cmd_generate(c, dir / "b", log);
  for (const char* f : {"manifest.json", "subjects.jsonl", "sessions.jsonl", "segments.jsonl"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(hld::data::load_dataset(a) == resolve_dataset(c));
  EXPECT_EQ(cmd_generate(c, std::nullopt, log), dir / "dataset");
  fs::remove_all(dir);
}

TEST(Commands, RunTwiceGivesIdenticalReports) {
  auto a = temp_dir("run_a"), b = temp_dir("run_b");
  std::ostringstream log;
  cmd_run(run_config_from_json(tiny_config(a)), log);
  cmd_run(run_config_from_json(tiny_config(b)), log);
  for (const char* f : {"report.json", "seed_0.json", "seed_1.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  auto report = json::parse(slurp(a / "report.json"));
  EXPECT_EQ(report["format_version"], 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Commands, RunReadsDatasetDirectory) {
  auto dir = temp_dir("run_dir");
  std::ostringstream log;
  auto gen = run_config_from_json(tiny_config(dir / "gen_out"));
  const auto ds_dir = cmd_generate(gen, dir / "ds", log);
  auto j = tiny_config(dir / "from_dir");
  j.erase("generator");
  j["dataset"] = ds_dir.string();
  auto from_dir = cmd_run(run_config_from_json(j), log);
  auto in_memory = cmd_run(gen, log);
  EXPECT_EQ(hld::eval::report_json(from_dir, true), hld::eval::report_json(in_memory, true));
  fs::remove_all(dir);
}

TEST(Commands, ExportWritesBundleAndEmbeddings) {
  auto dir = temp_dir("export");
  auto j = tiny_config(dir);
  j["export"] = true;
  j["age_probe"] = false;
  std::ostringstream log;
  cmd_run(run_config_from_json(j), log);
  ASSERT_TRUE(fs::exists(dir / "bundle.json"));
  ASSERT_TRUE(fs::exists(dir / "embeddings.csv"));
  auto bundle = hld::pipeline::load_bundle(dir / "bundle.json");
  EXPECT_EQ(bundle.variant, hld::pipeline::ModelVariant::AnchorVMABM);
  fs::remove_all(dir);
}

TEST(GradcheckSuite, CleanRunPasses) {
  SuiteOptions o;
  o.instances = 5;
  auto r = run_gradcheck_suite(o);
  EXPECT_TRUE(r.passed()) << r.format();
  EXPECT_GE(r.checks.size(), 20u);
}

TEST(GradcheckSuite, InjectedFaultIsNamed) {
  SuiteOptions o;
  o.instances = 3;
  o.fault = op_kind_from_string("tanh");
  auto r = run_gradcheck_suite(o);
  EXPECT_FALSE(r.passed());
  bool tanh_failed = false, matmul_passed = false;
  for (const auto& c : r.checks) {
    if (c.name == "tanh") tanh_failed = !c.passed;
    if (c.name == "matmul") matmul_passed = c.passed;
  }
  EXPECT_TRUE(tanh_failed);
  EXPECT_TRUE(matmul_passed);
  EXPECT_EQ(code_of([] { op_kind_from_string("softmax"); }), ErrorCode::InvalidConfig);
}
