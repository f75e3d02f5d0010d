// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hld/data/dataset.hpp"
#include "hld/util/rng.hpp"

namespace hld::data {

/// Deterministic synthetic dataset; subjects are paired into two-person
/// sessions, each with a balanced, shuffled noise schedule.
Dataset generate_synthetic(const GeneratorConfig& config);

/// Cuts a continuous frame stream at the schedule's noise-level changes.
/// Boundary k is floor(cumulative_duration_k * fps).
std::vector<Segment> segment_stream(const FrameMatrix& frames, std::span<const ScheduleEntry> schedule,
                                    int fps, SessionId session_id, SubjectId subject_id);

/// Writes manifest.json, subjects.jsonl, sessions.jsonl and segments.jsonl.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// A (noisy, quiet, quiet) triple of one subject's segments, as indices
/// into the dataset's segment list. The variation pairs are
///   anchor   = V(noisy, quiet_1)
///   positive = V(noisy, quiet_2)
///   negative = V(quiet_1, quiet_2)
struct Triplet {
  std::size_t noisy = 0;
  std::size_t quiet_1 = 0;
  std::size_t quiet_2 = 0;

  bool operator==(const Triplet&) const = default;
};

/// Samples up to `count` distinct triplets (unordered in the quiet pair,
/// orientation then drawn uniformly) from one subject's segments.
/// Subjects without an eligible noisy segment or two quiet segments yield
/// nothing.
std::vector<Triplet> sample_triplets(const Dataset& dataset, std::span<const std::size_t> subject_segments,
                                     std::span<const NoiseLevel> noise_filter, std::size_t count, Rng& rng);

/// The subject's first quiet segment in the session (minimal order_index).
/// Throws NoQuietSegment.
std::size_t select_anchor(const Dataset& dataset, std::span<const std::size_t> subject_segments);

/// Non-throwing variant.
std::optional<std::size_t> find_anchor(const Dataset& dataset, std::span<const std::size_t> subject_segments);

}  // namespace hld::data
