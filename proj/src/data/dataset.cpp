// SPDX-License-Identifier: Apache-2.0
#include "hld/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "hld/util/error.hpp"

namespace hld::data {
namespace {

[[noreturn]] void format_error(const std::string& what) { throw Error(ErrorCode::FormatError, what); }

}  // namespace

std::string_view to_string(NoiseLevel level) {
  switch (level) {
    case NoiseLevel::Quiet: return "quiet";
    case NoiseLevel::Db55: return "db55";
    case NoiseLevel::Db65: return "db65";
    case NoiseLevel::Db75: return "db75";
  }
  return "quiet";
}

NoiseLevel noise_level_from_string(std::string_view name) {
  for (NoiseLevel level : kNoiseLevels) {
    if (to_string(level) == name) return level;
  }
  if (name == "55") return NoiseLevel::Db55;
  if (name == "65") return NoiseLevel::Db65;
  if (name == "75") return NoiseLevel::Db75;
  format_error("unknown noise level '" + std::string(name) + "'");
}

void GeneratorConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (subjects == 0 || subjects % 2 != 0) bad("subject count must be positive and even");
  if (feature_dim == 0) bad("feature_dim must be positive");
  if (fps <= 0) bad("fps must be positive");
  if (schedule_entries == 0) bad("schedule_entries must be positive");
  if (min_duration_s <= 0 || max_duration_s < min_duration_s) bad("invalid duration bounds");
  for (const auto& range : age_ranges) {
    if (range[0] <= 0 || range[1] < range[0]) bad("invalid age range");
  }
  for (double rate : positive_rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) bad("positive rates must lie in [0, 1]");
  }
  for (double gain : {hearing_variation_gain, normal_variation_gain, age_leak_gain, subject_style_gain,
                      frame_noise_std, segment_noise_std, response_direction_jitter, baseline_shift_std}) {
    if (!std::isfinite(gain) || gain < 0.0) bad("gains and noise scales must be finite and non-negative");
  }
  if (noise_response[0] != 0.0) bad("response(quiet) must be 0");
  for (std::size_t i = 1; i < noise_response.size(); ++i) {
    if (!std::isfinite(noise_response[i]) || noise_response[i] < noise_response[i - 1]) {
      bad("noise response must be finite and non-decreasing in dBA");
    }
  }
}

const SubjectRecord& Dataset::subject(SubjectId id) const {
  auto it = std::find_if(subjects.begin(), subjects.end(), [id](const auto& s) { return s.subject_id == id; });
  if (it == subjects.end()) format_error("unknown subject " + std::to_string(id));
  return *it;
}

const SessionRecord& Dataset::session(SessionId id) const {
  auto it = std::find_if(sessions.begin(), sessions.end(), [id](const auto& s) { return s.session_id == id; });
  if (it == sessions.end()) format_error("unknown session " + std::to_string(id));
  return *it;
}

std::vector<SessionId> Dataset::session_ids() const {
  std::vector<SessionId> ids;
  ids.reserve(sessions.size());
  for (const auto& s : sessions) ids.push_back(s.session_id);
  return ids;
}

std::vector<std::size_t> Dataset::segments_of(SubjectId id) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].subject_id == id) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [this](std::size_t a, std::size_t b) {
    return segments[a].order_index < segments[b].order_index;
  });
  return idx;
}

void Dataset::validate() const {
  const auto& m = manifest;
  if (m.format_version != DatasetManifest::kFormatVersion) {
    format_error("unsupported format version " + std::to_string(m.format_version));
  }
  if (m.feature_dim == 0 || m.fps <= 0) format_error("manifest feature_dim and fps must be positive");
  if (m.min_frames == 0 || m.max_frames < m.min_frames) format_error("invalid manifest frame bounds");
  if (m.subject_count != subjects.size()) format_error("manifest subject count mismatch");
  if (m.session_count != sessions.size()) format_error("manifest session count mismatch");
  if (m.segment_count != segments.size()) format_error("manifest segment count mismatch");

  std::set<SubjectId> subject_ids;
  for (const auto& s : subjects) {
    if (!subject_ids.insert(s.subject_id).second) format_error("duplicate subject " + std::to_string(s.subject_id));
    if (s.age < m.min_age || s.age > m.max_age) format_error("subject age out of range");
    if (s.hearing_status != 0 && s.hearing_status != 1) format_error("hearing_status must be 0 or 1");
  }

  std::map<SubjectId, SessionId> session_of;
  std::set<SessionId> session_ids;
  for (const auto& s : sessions) {
    if (!session_ids.insert(s.session_id).second) format_error("duplicate session " + std::to_string(s.session_id));
    if (s.subject_ids[0] == s.subject_ids[1]) format_error("session lists the same subject twice");
    for (SubjectId id : s.subject_ids) {
      if (!subject_ids.count(id)) format_error("session references unknown subject " + std::to_string(id));
      if (!session_of.emplace(id, s.session_id).second) {
        format_error("subject " + std::to_string(id) + " appears in more than one session");
      }
    }
    if (s.schedule.empty()) format_error("empty session schedule");
    std::array<int, 4> histogram{};
    for (const auto& e : s.schedule) {
      const auto frames = static_cast<std::size_t>(e.duration_s) * static_cast<std::size_t>(m.fps);
      if (e.duration_s <= 0 || frames < m.min_frames || frames > m.max_frames) {
        format_error("schedule duration out of manifest bounds");
      }
      ++histogram[static_cast<std::size_t>(e.noise_level)];
    }
    const auto [lo, hi] = std::minmax_element(histogram.begin(), histogram.end());
    if (*hi - *lo > 1) format_error("session noise schedule is not balanced");
  }

  std::set<std::tuple<SessionId, SubjectId, std::uint32_t>> orders;
  for (const auto& seg : segments) {
    auto it = session_of.find(seg.subject_id);
    if (it == session_of.end() || it->second != seg.session_id) {
      format_error("segment subject/session pair not declared by any session");
    }
    if (seg.frames.cols != m.feature_dim) {
      format_error("segment feature dim " + std::to_string(seg.frames.cols) + " != manifest " +
                   std::to_string(m.feature_dim));
    }
    if (seg.frames.rows < m.min_frames || seg.frames.rows > m.max_frames) {
      format_error("segment frame count outside manifest bounds");
    }
    if (seg.frames.values.size() != seg.frames.rows * seg.frames.cols) format_error("ragged frame matrix");
    for (double v : seg.frames.values) {
      if (!std::isfinite(v)) format_error("non-finite frame value");
    }
    if (!orders.emplace(seg.session_id, seg.subject_id, seg.order_index).second) {
      format_error("duplicate order_index within a subject's session");
    }
  }
}

}  // namespace hld::data
