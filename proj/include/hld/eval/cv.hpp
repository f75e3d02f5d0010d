// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hld/data/dataset.hpp"
#include "hld/eval/stats.hpp"
#include "hld/pipeline/training.hpp"

namespace hld::eval {

using FoldSplit = std::vector<std::vector<data::SessionId>>;

/// Shuffles the ids, then deals them round-robin: fold sizes differ by at
/// most one and the first folds take the remainder. Throws TooFewSessions.
FoldSplit split_sessions_kfold(std::span<const data::SessionId> session_ids, std::size_t k, std::uint64_t seed);

/// FNV-1a over the fold contents; used to log that runs share a split.
std::uint64_t split_hash(const FoldSplit& split);

/// Young / mid / old by age, ties broken by subject id; remainders go to the
/// younger groups. Throws TooFewSubjects.
std::array<std::vector<data::SubjectId>, 3> age_tercile_groups(std::span<const data::SubjectRecord> subjects);

/// Ridge-regularized least squares with an unpenalized intercept.
struct LinearProbe {
  std::vector<double> weights;
  double intercept = 0.0;

  double predict(std::span<const double> x) const;
};
LinearProbe fit_linear_probe(const std::vector<std::vector<double>>& x, std::span<const double> y,
                             double ridge = 1e-6);

enum class Stage { Pretrain, Finetune, Predict, Probe };
std::string_view to_string(Stage stage);

/// One frame read inside a CV job.
struct AccessEvent {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  Stage stage = Stage::Finetune;
  std::size_t segment = 0;
  data::SessionId session = 0;
};
/// Must be thread-safe when jobs run in parallel.
using AccessObserver = std::function<void(const AccessEvent&)>;

struct EvalConfig {
  pipeline::ModelVariant variant = pipeline::ModelVariant::AnchorVMABM;
  std::size_t hidden_dim = 32;
  pipeline::PretrainConfig pretrain;
  pipeline::FinetuneConfig finetune;
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Subject-level age probe on frozen held-out embeddings.
  bool age_probe = true;
  /// Run (seed, fold) jobs on OpenMP threads; false keeps everything on the caller's thread.
  bool parallel = true;
  AccessObserver observer;

  void validate() const;
};

struct Prediction {
  std::size_t segment = 0;
  data::SubjectId subject = 0;
  std::size_t fold = 0;
  double probability = 0.0;
  int label = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::uint64_t split_hash = 0;
  double overall_f1 = 0.0;
  std::array<std::optional<double>, 3> group_f1;
  std::vector<std::optional<double>> fold_f1;
  std::optional<PearsonResult> probe;
  std::vector<double> pretrain_final_loss;  // per fold, VM variants only
  std::vector<double> finetune_final_loss;  // per fold
  std::vector<Prediction> predictions;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;  // seeds that contributed
};

struct EvalReport {
  static constexpr int kFormatVersion = 1;

  pipeline::ModelVariant variant = pipeline::ModelVariant::Single;
  std::size_t folds = 0;
  std::vector<SeedResult> seeds;
  Summary overall;
  std::array<Summary, 3> groups;
  std::optional<Summary> probe_abs_r;
  std::size_t evaluated_segments = 0;  // per seed
  std::size_t evaluated_subjects = 0;
  std::size_t skipped_subjects = 0;  // no quiet anchor

  std::vector<double> overall_scores() const;
  std::vector<double> group_scores(std::size_t group) const;
};

/// For each seed: split sessions, then for every fold train on the others
/// (pre-training first for VM variants) and predict every non-anchor
/// segment of the held-out subjects that have an anchor. The same held-out
/// set is used for every variant. Training errors are rethrown as
/// TrainingFailure naming the (fold, seed).
EvalReport evaluate(const data::Dataset& dataset, const EvalConfig& config);

/// Pre-trains (VM variants) and fine-tunes one bundle on every session; the
/// model that `export_embeddings` and `predict` consume.
pipeline::ModelBundle train_final(const data::Dataset& dataset, const EvalConfig& config, std::uint64_t seed);

/// Aggregates already-filled per-seed results.
void summarize(EvalReport& report);

/// Versioned JSON; `include_predictions` adds the per-segment rows.
std::string report_json(const EvalReport& report, bool include_predictions = false);
std::string seed_report_json(const EvalReport& report, std::size_t seed_index);

/// CSV header: segment_index,session_id,subject_id,order_index,noise_level,age,hearing_status,e0..
/// One row per non-anchor segment of subjects that have an anchor. Throws
/// VariantInputMismatch for non-anchor bundles.
std::size_t export_embeddings(const pipeline::ModelBundle& bundle, const data::Dataset& dataset,
                              const std::filesystem::path& path);

struct Comparison {
  std::string better;
  std::string worse;
  std::string metric;  // "overall", "young", "mid", "old"
  WelchResult test;
  double adjusted_p = 1.0;
};

/// Welch one-tailed tests of each row against the previous one on per-seed
/// scores, Holm-adjusted within each metric. Rows with too few scores are
/// left out.
std::vector<Comparison> ladder_comparisons(std::span<const EvalReport> rows, std::span<const std::string> names);

}  // namespace hld::eval
