// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hld::data {

enum class NoiseLevel : std::uint8_t { Quiet = 0, Db55 = 1, Db65 = 2, Db75 = 3 };

inline constexpr std::array<NoiseLevel, 4> kNoiseLevels = {NoiseLevel::Quiet, NoiseLevel::Db55,
                                                           NoiseLevel::Db65, NoiseLevel::Db75};

std::string_view to_string(NoiseLevel level);
NoiseLevel noise_level_from_string(std::string_view name);

using SubjectId = std::uint32_t;
using SessionId = std::uint32_t;

/// Row-major (rows x cols) per-frame feature matrix.
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  bool operator==(const FrameMatrix&) const = default;
};

/// A constant-noise clip of one subject; the unit of prediction.
struct Segment {
  SessionId session_id = 0;
  SubjectId subject_id = 0;
  std::uint32_t order_index = 0;
  NoiseLevel noise_level = NoiseLevel::Quiet;
  FrameMatrix frames;

  bool operator==(const Segment&) const = default;
};

struct SubjectRecord {
  SubjectId subject_id = 0;
  int age = 0;
  int hearing_status = 0;

  bool operator==(const SubjectRecord&) const = default;
};

struct ScheduleEntry {
  NoiseLevel noise_level = NoiseLevel::Quiet;
  int duration_s = 0;

  bool operator==(const ScheduleEntry&) const = default;
};

struct SessionRecord {
  SessionId session_id = 0;
  std::array<SubjectId, 2> subject_ids{};
  std::vector<ScheduleEntry> schedule;

  bool operator==(const SessionRecord&) const = default;
};

/// Synthetic generator settings.
///
/// Per-frame features of a subject at noise level n:
///   x = style_gain * u_s + b_s * r + age_leak_gain * g(age)
///       + response(n) * (normal_gain + hearing_gain * h) * w_s + segment offset + frame noise
/// where u_s, w_s are per-subject latent directions, r the shared response
/// direction, b_s ~ N(0, baseline_shift_std^2), and g(age) is the
/// normalized age along a fixed unit direction. The hearing signal lives
/// only in the quiet-vs-noisy displacement; age leaks into every frame.
struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t subjects = 60;
  std::size_t feature_dim = 16;
  int fps = 5;
  std::size_t schedule_entries = 12;
  int min_duration_s = 25;
  int max_duration_s = 35;
  std::array<std::array<int, 2>, 3> age_ranges{{{18, 39}, {40, 56}, {57, 88}}};
  std::array<double, 3> positive_rates{0.18, 0.52, 0.76};
  double hearing_variation_gain = 6.0;
  double normal_variation_gain = 0.5;
  double age_leak_gain = 0.0;
  double subject_style_gain = 0.5;
  double frame_noise_std = 0.5;
  double segment_noise_std = 0.1;
  /// Spread of the per-subject response direction around a shared direction.
  double response_direction_jitter = 0.5;
  /// Std of each subject's resting offset along the shared response
  /// direction, so a single segment cannot tell baseline from response.
  double baseline_shift_std = 0.75;
  /// response(level) indexed by NoiseLevel; response(Quiet) must be 0.
  std::array<double, 4> noise_response{0.0, 0.4, 0.7, 1.0};

  /// Throws InvalidConfig.
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::size_t feature_dim = 0;
  int fps = 5;
  std::size_t min_frames = 0;
  std::size_t max_frames = 0;
  int min_age = 0;
  int max_age = 200;
  std::size_t subject_count = 0;
  std::size_t session_count = 0;
  std::size_t segment_count = 0;
  std::optional<GeneratorConfig> generator;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SubjectRecord> subjects;
  std::vector<SessionRecord> sessions;
  std::vector<Segment> segments;

  const SubjectRecord& subject(SubjectId id) const;
  const SessionRecord& session(SessionId id) const;
  std::vector<SessionId> session_ids() const;
  /// Indices into `segments` of one subject, ordered by order_index.
  std::vector<std::size_t> segments_of(SubjectId id) const;

  /// Throws FormatError on any invariant violation.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

}  // namespace hld::data
