// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hld/data/dataset.hpp"
#include "hld/eval/cv.hpp"

namespace hld::app {

/// Declarative run description. JSON, `format_version` 1; see README for keys.
struct RunConfig {
  static constexpr int kFormatVersion = 1;

  /// Exactly one of the two is set.
  std::optional<std::filesystem::path> dataset;
  std::optional<data::GeneratorConfig> generator;

  pipeline::ModelVariant variant = pipeline::ModelVariant::AnchorVMABM;
  std::size_t hidden_dim = 32;
  pipeline::PretrainConfig pretrain;
  pipeline::FinetuneConfig finetune;
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "out";
  bool age_probe = true;
  /// cmd_run also trains a final bundle on all sessions with the first seed
  /// and writes bundle.json (+ embeddings.csv for anchor variants).
  bool export_bundle = false;
  /// Pre-training filters compared by cmd_ablation, one column each.
  std::vector<std::vector<data::NoiseLevel>> ablation_filters;

  void validate() const;
  eval::EvalConfig eval_config() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& config);

/// `key.path=value`; the value is parsed as JSON, falling back to a plain
/// string. A null value removes the key.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads the file, applies overrides in order, parses. IoError when the file
/// cannot be read, InvalidConfig otherwise.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Loads the dataset directory or generates in memory.
data::Dataset resolve_dataset(const RunConfig& config);

/// Writes the generated dataset to `out` (default output_dir/dataset).
std::filesystem::path cmd_generate(const RunConfig& config, const std::optional<std::filesystem::path>& out,
                                   std::ostream& log);

/// Writes report.json, seed_<s>.json per seed, and the optional bundle export.
eval::EvalReport cmd_run(const RunConfig& config, std::ostream& log);

/// Runs the five variants in ladder order on identical splits plus the
/// pre-training filter sweep; writes ablation.json and prints the table.
void cmd_ablation(const RunConfig& config, std::ostream& log);

/// The ablation ladder, top to bottom.
const std::vector<pipeline::ModelVariant>& ladder();

/// Truncates and writes; IoError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hld::app
