// SPDX-License-Identifier: Apache-2.0
#include "hld/pipeline/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "hld/data/ops.hpp"
#include "hld/nn/losses.hpp"
#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::pipeline {
namespace {

void require_positive(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, what);
}

Tensor accumulate(Tape& tape, std::optional<Tensor>& acc, const Tensor& term) {
  acc = acc ? tape.add(*acc, term) : term;
  return *acc;
}

}  // namespace

// --- DatasetView ---

DatasetView::DatasetView(const data::Dataset& dataset, std::span<const data::SessionId> sessions,
                         SegmentObserver observer)
    : dataset_(&dataset), observer_(std::move(observer)), sessions_(sessions.begin(), sessions.end()) {
  std::sort(sessions_.begin(), sessions_.end());
  sessions_.erase(std::unique(sessions_.begin(), sessions_.end()), sessions_.end());
  for (data::SessionId sid : sessions_) {
    const auto& session = dataset.session(sid);
    for (data::SubjectId id : session.subject_ids) {
      subjects_.push_back(id);
      records_[id] = &dataset.subject(id);
      by_subject_[id];
    }
  }
  std::sort(subjects_.begin(), subjects_.end());
  for (std::size_t i = 0; i < dataset.segments.size(); ++i) {
    const auto& seg = dataset.segments[i];
    if (!contains_session(seg.session_id)) continue;
    by_subject_[seg.subject_id].push_back(i);
  }
  for (auto& [id, idx] : by_subject_) {
    std::sort(idx.begin(), idx.end(), [&dataset](std::size_t a, std::size_t b) {
      return dataset.segments[a].order_index < dataset.segments[b].order_index;
    });
  }
}

bool DatasetView::contains_session(data::SessionId id) const {
  return std::binary_search(sessions_.begin(), sessions_.end(), id);
}

std::span<const std::size_t> DatasetView::segments_of(data::SubjectId id) const {
  auto it = by_subject_.find(id);
  if (it == by_subject_.end()) throw Error(ErrorCode::FormatError, "subject outside the view");
  return it->second;
}

std::vector<std::size_t> DatasetView::all_segments() const {
  std::vector<std::size_t> out;
  for (const auto& [id, idx] : by_subject_) out.insert(out.end(), idx.begin(), idx.end());
  return out;
}

const data::Segment& DatasetView::touch(std::size_t index) const {
  const auto& seg = dataset_->segments.at(index);
  if (!contains_session(seg.session_id)) throw Error(ErrorCode::FormatError, "segment outside the view");
  ++stats_.frame_reads;
  if (observer_) observer_(seg);
  return seg;
}

data::NoiseLevel DatasetView::noise_level(std::size_t index) const {
  ++stats_.noise_level_reads;
  return dataset_->segments.at(index).noise_level;
}

double DatasetView::age(data::SubjectId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::FormatError, "subject outside the view");
  ++stats_.age_reads;
  return it->second->age;
}

double DatasetView::label(data::SubjectId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::FormatError, "subject outside the view");
  ++stats_.label_reads;
  return it->second->hearing_status;
}

std::optional<std::size_t> DatasetView::anchor_of(data::SubjectId id) const {
  // segments_of is in order_index order, so the first quiet one wins.
  for (std::size_t idx : segments_of(id)) {
    if (noise_level(idx) == data::NoiseLevel::Quiet) return idx;
  }
  return std::nullopt;
}

// --- configs ---

void PretrainConfig::validate() const {
  require_positive(epochs > 0, "pretrain epochs must be positive");
  require_positive(lr > 0.0 && std::isfinite(lr), "pretrain lr must be positive");
  require_positive(batch_size > 0, "pretrain batch_size must be positive");
  require_positive(triplets_per_subject_per_epoch > 0, "triplets_per_subject_per_epoch must be positive");
  require_positive(!noise_filter.empty(), "noise_filter must not be empty");
  for (auto level : noise_filter) {
    require_positive(level != data::NoiseLevel::Quiet, "noise_filter may only hold noisy levels");
  }
  require_positive(weight_decay >= 0.0, "weight_decay must be non-negative");
}

nn::AdamWConfig PretrainConfig::optimizer() const {
  nn::AdamWConfig c;
  c.lr = lr;
  c.weight_decay = weight_decay;
  return c;
}

void FinetuneConfig::validate() const {
  require_positive(epochs > 0, "finetune epochs must be positive");
  require_positive(lr > 0.0 && std::isfinite(lr), "finetune lr must be positive");
  require_positive(batch_size > 0, "finetune batch_size must be positive");
  require_positive(weight_decay >= 0.0, "weight_decay must be non-negative");
}

nn::AdamWConfig FinetuneConfig::optimizer() const {
  nn::AdamWConfig c;
  c.lr = lr;
  c.weight_decay = weight_decay;
  return c;
}

// --- pre-training ---

PretrainResult pretrain_vm(const DatasetView& view, nn::GruParams encoder, const PretrainConfig& config) {
  config.validate();
  encoder.validate();
  Rng rng = make_rng(config.seed, "pretrain.sampling");
  nn::AdamW opt(encoder.parameters(), config.optimizer());
  PretrainResult result;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<data::Triplet> triplets;
    for (data::SubjectId id : view.subjects()) {
      auto t = data::sample_triplets(view.dataset(), view.segments_of(id), config.noise_filter,
                                     config.triplets_per_subject_per_epoch, rng);
      triplets.insert(triplets.end(), t.begin(), t.end());
    }
    if (triplets.empty()) throw Error(ErrorCode::NoValidTriplets, "no subject yields a triplet under the noise filter");
    std::shuffle(triplets.begin(), triplets.end(), rng);
    result.triplets_per_epoch = triplets.size();

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < triplets.size(); begin += config.batch_size) {
      const std::size_t end = std::min(triplets.size(), begin + config.batch_size);
      Tape tape;
      EncodingCache cache(tape, encoder);
      std::optional<Tensor> total;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& t = triplets[i];
        Tensor fn = cache.get(t.noisy, view.touch(t.noisy));
        Tensor fq1 = cache.get(t.quiet_1, view.touch(t.quiet_1));
        Tensor fq2 = cache.get(t.quiet_2, view.touch(t.quiet_2));
        Tensor va = tape.concat(fn, fq1);
        Tensor vp = tape.concat(fn, fq2);
        Tensor vn = tape.concat(fq1, fq2);
        accumulate(tape, total, nn::triplet_loss(tape, va, vp, vn));
      }
      Tensor loss = tape.scale(*total, 1.0 / static_cast<double>(end - begin));
      epoch_loss += total->item();
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(triplets.size()));
  }
  result.encoder = std::move(encoder);
  return result;
}

// --- fine-tuning ---

InstanceSet build_instances(const DatasetView& view, ModelVariant variant) {
  InstanceSet set;
  const bool anchored = uses_anchor(variant);
  const bool aged = uses_age_input(variant) || uses_age_adversary(variant);
  for (data::SubjectId id : view.subjects()) {
    std::optional<std::size_t> anchor;
    if (anchored) {
      anchor = view.anchor_of(id);
      if (!anchor) {
        ++set.skipped_subjects;
        continue;
      }
    }
    const double label = view.label(id);
    const double age = aged ? view.age(id) : 0.0;
    for (std::size_t idx : view.segments_of(id)) {
      if (anchor && idx == *anchor) continue;
      set.instances.push_back({idx, anchor, id, label, age});
    }
  }
  return set;
}

BatchLoss batch_loss(Tape& tape, const DatasetView& view, const ModelBundle& bundle, std::span<const Instance> batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  EncodingCache cache(tape, bundle.encoder);
  std::optional<Tensor> bce_sum, mse_sum;
  for (const auto& inst : batch) {
    Tensor cur = cache.get(inst.current, view.touch(inst.current));
    std::optional<Tensor> anc;
    if (inst.anchor) anc = cache.get(*inst.anchor, view.touch(*inst.anchor));
    std::optional<double> age;
    if (uses_age_input(bundle.variant)) age = bundle.age_norm.normalize(inst.age);
    auto out = forward_heads(tape, bundle, cur, anc ? &*anc : nullptr, age);
    accumulate(tape, bce_sum, nn::bce_with_logits(tape, out.logit, inst.label));
    if (out.age_estimate) {
      const double target = bundle.age_norm.normalize(inst.age);
      accumulate(tape, mse_sum, tape.sum(nn::mse_loss(tape, *out.age_estimate, target)));
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchLoss loss;
  loss.bce = tape.scale(*bce_sum, inv);
  loss.total = loss.bce;
  if (mse_sum) {
    loss.mse = tape.scale(*mse_sum, inv);
    loss.total = tape.add(loss.bce, *loss.mse);
  }
  return loss;
}

FinetuneResult finetune(const DatasetView& view, ModelBundle bundle, const FinetuneConfig& config) {
  config.validate();
  bundle.validate();
  if (view.subjects().empty()) throw Error(ErrorCode::EmptyDataset, "no training subjects");
  if (uses_age_input(bundle.variant) || uses_age_adversary(bundle.variant)) {
    std::vector<double> ages;
    for (data::SubjectId id : view.subjects()) ages.push_back(view.age(id));
    bundle.age_norm = compute_age_norm(ages);
  }

  InstanceSet set = build_instances(view, bundle.variant);
  if (set.instances.empty()) {
    if (uses_anchor(bundle.variant) && set.skipped_subjects == view.subjects().size()) {
      throw Error(ErrorCode::MissingAnchors, "no training subject has a quiet anchor segment");
    }
    throw Error(ErrorCode::EmptyDataset, "no training instances");
  }

  Rng rng = make_rng(config.seed, "finetune.shuffle");
  nn::AdamW opt(bundle.parameters(), config.optimizer());
  FinetuneResult result;
  result.instances = set.instances.size();
  result.skipped_subjects = set.skipped_subjects;
  std::vector<Instance> order = set.instances;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, bce = 0.0, mse = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const Instance> batch(order.data() + begin, end - begin);
      Tape tape;
      BatchLoss loss = batch_loss(tape, view, bundle, batch);
      const auto n = static_cast<double>(batch.size());
      total += loss.total.item() * n;
      bce += loss.bce.item() * n;
      if (loss.mse) mse += loss.mse->item() * n;
      opt.zero_grad();
      tape.backward(loss.total);
      opt.step();
    }
    const auto n = static_cast<double>(order.size());
    result.loss_trace.push_back(total / n);
    result.bce_trace.push_back(bce / n);
    result.mse_trace.push_back(mse / n);
  }
  result.bundle = std::move(bundle);
  return result;
}

}  // namespace hld::pipeline
