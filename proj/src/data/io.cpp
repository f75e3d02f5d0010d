// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <set>
#include <string>

#include "hld/data/ops.hpp"
#include "hld/data/serialize.hpp"
#include "hld/util/error.hpp"

namespace hld::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kSubjects = "subjects.jsonl";
constexpr const char* kSessions = "sessions.jsonl";
constexpr const char* kSegments = "segments.jsonl";

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  return in;
}

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::FormatError, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("field '") + key + "': " + e.what());
  }
}

template <typename Fn>
void for_each_line(const fs::path& p, Fn&& fn) {
  std::ifstream in = open_in(p);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, p.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fn(j);
  }
}

}  // namespace

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"seed", c.seed},
           {"subjects", c.subjects},
           {"feature_dim", c.feature_dim},
           {"fps", c.fps},
           {"schedule_entries", c.schedule_entries},
           {"min_duration_s", c.min_duration_s},
           {"max_duration_s", c.max_duration_s},
           {"age_ranges", c.age_ranges},
           {"positive_rates", c.positive_rates},
           {"hearing_variation_gain", c.hearing_variation_gain},
           {"normal_variation_gain", c.normal_variation_gain},
           {"age_leak_gain", c.age_leak_gain},
           {"subject_style_gain", c.subject_style_gain},
           {"frame_noise_std", c.frame_noise_std},
           {"segment_noise_std", c.segment_noise_std},
           {"response_direction_jitter", c.response_direction_jitter},
           {"baseline_shift_std", c.baseline_shift_std},
           {"noise_response", c.noise_response}};
}

void from_json(const json& j, GeneratorConfig& c) {
  static const std::set<std::string> known = {
      "seed", "subjects", "feature_dim", "fps", "schedule_entries", "min_duration_s", "max_duration_s",
      "age_ranges", "positive_rates", "hearing_variation_gain", "normal_variation_gain", "age_leak_gain",
      "subject_style_gain", "frame_noise_std", "segment_noise_std", "response_direction_jitter", "baseline_shift_std",
      "noise_response"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "generator config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown generator key '" + key + "'");
  }
  try {
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("seed", c.seed);
    opt("subjects", c.subjects);
    opt("feature_dim", c.feature_dim);
    opt("fps", c.fps);
    opt("schedule_entries", c.schedule_entries);
    opt("min_duration_s", c.min_duration_s);
    opt("max_duration_s", c.max_duration_s);
    opt("age_ranges", c.age_ranges);
    opt("positive_rates", c.positive_rates);
    opt("hearing_variation_gain", c.hearing_variation_gain);
    opt("normal_variation_gain", c.normal_variation_gain);
    opt("age_leak_gain", c.age_leak_gain);
    opt("subject_style_gain", c.subject_style_gain);
    opt("frame_noise_std", c.frame_noise_std);
    opt("segment_noise_std", c.segment_noise_std);
    opt("response_direction_jitter", c.response_direction_jitter);
    opt("baseline_shift_std", c.baseline_shift_std);
    opt("noise_response", c.noise_response);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("generator config: ") + e.what());
  }
}

void to_json(json& j, const Segment& s) {
  json frames = json::array();
  for (std::size_t r = 0; r < s.frames.rows; ++r) {
    const auto row = s.frames.row(r);
    frames.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j = json{{"session_id", s.session_id},
           {"subject_id", s.subject_id},
           {"order_index", s.order_index},
           {"noise_level", to_string(s.noise_level)},
           {"frames", std::move(frames)}};
}

void from_json(const json& j, Segment& s) {
  s.session_id = get_field<SessionId>(j, "session_id");
  s.subject_id = get_field<SubjectId>(j, "subject_id");
  s.order_index = get_field<std::uint32_t>(j, "order_index");
  s.noise_level = noise_level_from_string(get_field<std::string>(j, "noise_level"));
  const auto& frames = j.contains("frames") ? j.at("frames") : throw Error(ErrorCode::FormatError, "missing frames");
  if (!frames.is_array() || frames.empty()) throw Error(ErrorCode::FormatError, "frames must be a non-empty array");
  s.frames.rows = frames.size();
  s.frames.cols = frames.front().size();
  s.frames.values.clear();
  s.frames.values.reserve(s.frames.rows * s.frames.cols);
  for (const auto& row : frames) {
    if (!row.is_array() || row.size() != s.frames.cols) throw Error(ErrorCode::FormatError, "ragged frame rows");
    for (const auto& v : row) {
      if (!v.is_number()) throw Error(ErrorCode::FormatError, "non-numeric frame value");
      s.frames.values.push_back(v.get<double>());
    }
  }
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  const auto& m = dataset.manifest;
  json manifest{{"format_version", m.format_version},
                {"feature_dim", m.feature_dim},
                {"fps", m.fps},
                {"min_frames", m.min_frames},
                {"max_frames", m.max_frames},
                {"min_age", m.min_age},
                {"max_age", m.max_age},
                {"counts", {{"subjects", m.subject_count}, {"sessions", m.session_count}, {"segments", m.segment_count}}},
                {"generator", m.generator ? json(*m.generator) : json(nullptr)}};
  open_out(dir / kManifest) << manifest.dump(2) << '\n';

  auto subjects = open_out(dir / kSubjects);
  for (const auto& s : dataset.subjects) {
    subjects << json{{"subject_id", s.subject_id}, {"age", s.age}, {"hearing_status", s.hearing_status}}.dump() << '\n';
  }
  auto sessions = open_out(dir / kSessions);
  for (const auto& s : dataset.sessions) {
    json schedule = json::array();
    for (const auto& e : s.schedule) schedule.push_back(json::array({to_string(e.noise_level), e.duration_s}));
    sessions << json{{"session_id", s.session_id}, {"subject_ids", s.subject_ids}, {"schedule", schedule}}.dump()
             << '\n';
  }
  auto segments = open_out(dir / kSegments);
  for (const auto& s : dataset.segments) segments << json(s).dump() << '\n';
  if (!segments) throw Error(ErrorCode::IoError, "write failed in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  json manifest;
  try {
    manifest = json::parse(open_in(dir / kManifest));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("manifest.json: ") + e.what());
  }
  auto& m = ds.manifest;
  m.format_version = get_field<int>(manifest, "format_version");
  if (m.format_version != DatasetManifest::kFormatVersion) {
    throw Error(ErrorCode::FormatError, "unsupported format version " + std::to_string(m.format_version));
  }
  m.feature_dim = get_field<std::size_t>(manifest, "feature_dim");
  m.fps = get_field<int>(manifest, "fps");
  m.min_frames = get_field<std::size_t>(manifest, "min_frames");
  m.max_frames = get_field<std::size_t>(manifest, "max_frames");
  m.min_age = get_field<int>(manifest, "min_age");
  m.max_age = get_field<int>(manifest, "max_age");
  const json counts = get_field<json>(manifest, "counts");
  m.subject_count = get_field<std::size_t>(counts, "subjects");
  m.session_count = get_field<std::size_t>(counts, "sessions");
  m.segment_count = get_field<std::size_t>(counts, "segments");
  if (manifest.contains("generator") && !manifest.at("generator").is_null()) {
    try {
      m.generator = manifest.at("generator").get<GeneratorConfig>();
    } catch (const Error& e) {
      throw Error(ErrorCode::FormatError, e.what());
    }
  }

  for_each_line(dir / kSubjects, [&](const json& j) {
    ds.subjects.push_back({get_field<SubjectId>(j, "subject_id"), get_field<int>(j, "age"),
                           get_field<int>(j, "hearing_status")});
  });
  for_each_line(dir / kSessions, [&](const json& j) {
    SessionRecord s;
    s.session_id = get_field<SessionId>(j, "session_id");
    const auto ids = get_field<std::vector<SubjectId>>(j, "subject_ids");
    if (ids.size() != 2) throw Error(ErrorCode::FormatError, "a session lists exactly two subjects");
    s.subject_ids = {ids[0], ids[1]};
    for (const auto& e : get_field<json>(j, "schedule")) {
      if (!e.is_array() || e.size() != 2) throw Error(ErrorCode::FormatError, "schedule entries are [level, seconds]");
      s.schedule.push_back({noise_level_from_string(e[0].get<std::string>()), e[1].get<int>()});
    }
    ds.sessions.push_back(std::move(s));
  });
  for_each_line(dir / kSegments, [&](const json& j) { ds.segments.push_back(j.get<Segment>()); });

  ds.validate();
  return ds;
}

}  // namespace hld::data
