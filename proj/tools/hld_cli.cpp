// SPDX-License-Identifier: Apache-2.0
// hld: generate / run / ablation / gradcheck / export-embeddings / predict.
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 IO or file format, 4 training,
// 5 gradient check failure.
#include <omp.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hld/app/commands.hpp"
#include "hld/app/gradcheck_suite.hpp"
#include "hld/data/ops.hpp"
#include "hld/data/serialize.hpp"
#include "hld/util/error.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kTraining = 4, kGradcheck = 5 };

int exit_code(hld::ErrorCode code) {
  using hld::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::VariantInputMismatch:
      return kConfig;
    case ErrorCode::IoError:
    case ErrorCode::FormatError:
      return kIo;
    default:
      return kTraining;
  }
}

hld::data::Segment read_segment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hld::Error(hld::ErrorCode::IoError, "cannot read " + path);
  try {
    return nlohmann::json::parse(in).get<hld::data::Segment>();
  } catch (const nlohmann::json::exception& e) {
    throw hld::Error(hld::ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hearing-loss detection from variation embeddings"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 0;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "run config (JSON)")->required();
    cmd->add_option("--set", overrides, "override a config key, e.g. --set finetune.lr=0.001");
    cmd->add_option("--jobs", jobs, "parallel (seed, fold) jobs; 0 = OpenMP default")->check(CLI::NonNegativeNumber);
  };

  std::optional<std::string> generate_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_config(gen);
  gen->add_option("--out", generate_out, "dataset directory (default <output_dir>/dataset)");

  auto* run = app.add_subcommand("run", "cross-validated evaluation of one variant");
  add_config(run);
  bool export_flag = false;
  run->add_flag("--export", export_flag, "also write bundle.json and embeddings.csv");

  auto* ablation = app.add_subcommand("ablation", "all variants plus the noise-filter sweep");
  add_config(ablation);

  std::string fault;
  std::size_t instances = 20;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--inject-fault", fault, "flip the backward sign of this op (e.g. tanh)");
  gradcheck->add_option("--instances", instances, "random instances per check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "instance seed");

  std::string bundle_path, dataset_path, out_path;
  auto* exp = app.add_subcommand("export-embeddings", "frozen variation embeddings as CSV");
  exp->add_option("--bundle", bundle_path, "bundle.json")->required();
  exp->add_option("--dataset", dataset_path, "dataset directory")->required();
  exp->add_option("--out", out_path, "CSV path")->required();

  std::string current_path;
  std::optional<std::string> anchor_path;
  std::optional<double> age;
  auto* pred = app.add_subcommand("predict", "probability of hearing loss for one segment");
  pred->add_option("--bundle", bundle_path, "bundle.json")->required();
  pred->add_option("--current", current_path, "segment JSON")->required();
  pred->add_option("--anchor", anchor_path, "quiet anchor segment JSON (anchor variants)");
  pred->add_option("--age", age, "age in years (SingleWithAge)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (jobs > 0) omp_set_num_threads(jobs);
    if (*gen) {
      hld::app::cmd_generate(hld::app::load_run_config(config_path, overrides), generate_out, std::cout);
    } else if (*run) {
      auto config = hld::app::load_run_config(config_path, overrides);
      if (export_flag) config.export_bundle = true;
      hld::app::cmd_run(config, std::cout);
    } else if (*ablation) {
      hld::app::cmd_ablation(hld::app::load_run_config(config_path, overrides), std::cout);
    } else if (*gradcheck) {
      hld::app::SuiteOptions options;
      options.seed = gc_seed;
      options.instances = instances;
      if (!fault.empty()) options.fault = hld::app::op_kind_from_string(fault);
      const auto report = hld::app::run_gradcheck_suite(options);
      std::cout << report.format();
      if (!report.passed()) {
        for (const auto& c : report.checks) {
          if (!c.passed) std::cerr << "gradient check failed: " << c.name << "\n";
        }
        return kGradcheck;
      }
    } else if (*exp) {
      const auto bundle = hld::pipeline::load_bundle(bundle_path);
      const auto ds = hld::data::load_dataset(dataset_path);
      const auto rows = hld::eval::export_embeddings(bundle, ds, out_path);
      std::cout << "wrote " << out_path << " (" << rows << " rows)\n";
    } else if (*pred) {
      const auto bundle = hld::pipeline::load_bundle(bundle_path);
      const auto current = read_segment(current_path);
      std::optional<hld::data::Segment> anchor;
      if (anchor_path) anchor = read_segment(*anchor_path);
      hld::pipeline::PredictInput input;
      input.current = &current;
      input.anchor = anchor ? &*anchor : nullptr;
      input.age_years = age;
      std::printf("%.17g\n", hld::pipeline::predict(bundle, input));
    }
  } catch (const hld::Error& e) {
    std::cerr << "hld: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "hld: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "hld: " << e.what() << "\n";
    return kTraining;
  }
  return kOk;
}
