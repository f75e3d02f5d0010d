// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "hld/data/dataset.hpp"
#include "hld/nn/adamw.hpp"
#include "hld/pipeline/model.hpp"

namespace hld::pipeline {

/// Called whenever a segment's frames are read.
using SegmentObserver = std::function<void(const data::Segment&)>;

/// What a training stage looked at besides frames.
struct AccessStats {
  std::size_t frame_reads = 0;
  std::size_t noise_level_reads = 0;
  std::size_t age_reads = 0;
  std::size_t label_reads = 0;
};

/// Read access to the segments of a chosen set of sessions. Everything a
/// training stage reads goes through this view, so an observer can prove
/// nothing outside those sessions was used and the stats show which
/// metadata a variant consumed.
class DatasetView {
 public:
  DatasetView(const data::Dataset& dataset, std::span<const data::SessionId> sessions,
              SegmentObserver observer = {});

  const data::Dataset& dataset() const { return *dataset_; }
  /// Subjects of the selected sessions, ascending id.
  const std::vector<data::SubjectId>& subjects() const { return subjects_; }
  /// Segment indices of one subject, ascending order_index.
  std::span<const std::size_t> segments_of(data::SubjectId id) const;
  const data::Segment& touch(std::size_t index) const;
  data::NoiseLevel noise_level(std::size_t index) const;
  double age(data::SubjectId id) const;
  double label(data::SubjectId id) const;
  std::optional<std::size_t> anchor_of(data::SubjectId id) const;
  /// Every segment index of the selected sessions.
  std::vector<std::size_t> all_segments() const;
  bool contains_session(data::SessionId id) const;

  const AccessStats& stats() const { return stats_; }

 private:
  const data::Dataset* dataset_;
  SegmentObserver observer_;
  std::vector<data::SubjectId> subjects_;
  std::vector<data::SessionId> sessions_;
  std::map<data::SubjectId, std::vector<std::size_t>> by_subject_;
  std::map<data::SubjectId, const data::SubjectRecord*> records_;
  mutable AccessStats stats_;
};

struct PretrainConfig {
  std::size_t epochs = 15;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<data::NoiseLevel> noise_filter{data::NoiseLevel::Db75};
  std::size_t triplets_per_subject_per_epoch = 8;
  double weight_decay = 0.01;

  void validate() const;
  nn::AdamWConfig optimizer() const;
};

struct FinetuneConfig {
  std::size_t epochs = 15;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;

  void validate() const;
  nn::AdamWConfig optimizer() const;
};

struct PretrainResult {
  nn::GruParams encoder;
  std::vector<double> loss_trace;  // mean triplet loss per epoch
  std::size_t triplets_per_epoch = 0;
};

/// Variation-modeling pre-training with the triplet objective. Trains
/// `encoder` in place (it is returned for convenience).
/// Throws NoValidTriplets when no subject yields a triplet.
PretrainResult pretrain_vm(const DatasetView& view, nn::GruParams encoder, const PretrainConfig& config);

/// One supervised example: a current segment, its subject's anchor, labels.
struct Instance {
  std::size_t current = 0;
  std::optional<std::size_t> anchor;
  data::SubjectId subject = 0;
  double label = 0.0;
  double age = 0.0;
};

struct InstanceSet {
  std::vector<Instance> instances;
  std::size_t skipped_subjects = 0;
};

/// Anchor variants: every non-anchor segment of subjects that have an
/// anchor (the rest are counted as skipped). Other variants: every segment,
/// without looking at noise levels.
InstanceSet build_instances(const DatasetView& view, ModelVariant variant);

struct FinetuneResult {
  ModelBundle bundle;
  std::vector<double> loss_trace;  // total
  std::vector<double> bce_trace;
  std::vector<double> mse_trace;  // AnchorVMABM only, else zeros
  std::size_t instances = 0;
  std::size_t skipped_subjects = 0;
};

/// Supervised fine-tuning of encoder + heads (one AdamW over all of them).
/// For AnchorVMABM the loss is mean BCE + mean MSE on normalized age, with
/// the age head behind a gradient reversal. `bundle.age_norm` is replaced
/// by constants computed from the view's subjects.
FinetuneResult finetune(const DatasetView& view, ModelBundle bundle, const FinetuneConfig& config);

/// Total loss of one batch on a fresh tape (parameter gradients are
/// accumulated). Exposed for gradient checks and the GRL identity test.
struct BatchLoss {
  Tensor total;
  Tensor bce;
  std::optional<Tensor> mse;
};
BatchLoss batch_loss(Tape& tape, const DatasetView& view, const ModelBundle& bundle,
                     std::span<const Instance> batch);

}  // namespace hld::pipeline
