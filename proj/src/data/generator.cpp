// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hld/data/ops.hpp"
#include "hld/util/error.hpp"

namespace hld::data {
namespace {

using Vec = std::vector<double>;

Vec gaussian_vector(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = stddev * dist(rng);
  return v;
}

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec normalized(Vec v) {
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

struct Latents {
  Vec style;     // u_s
  Vec response;  // w_s
  double baseline = 0.0;
};

}  // namespace

std::vector<Segment> segment_stream(const FrameMatrix& frames, std::span<const ScheduleEntry> schedule,
                                    int fps, SessionId session_id, SubjectId subject_id) {
  if (fps <= 0) throw Error(ErrorCode::InvalidConfig, "fps must be positive");
  long long total_s = 0;
  for (const auto& e : schedule) total_s += e.duration_s;
  const auto needed = static_cast<std::size_t>(total_s) * static_cast<std::size_t>(fps);
  if (frames.rows < needed) {
    throw Error(ErrorCode::InsufficientFrames, "stream has " + std::to_string(frames.rows) +
                                                   " frames, schedule needs " + std::to_string(needed));
  }
  std::vector<Segment> out;
  out.reserve(schedule.size());
  std::size_t begin = 0;
  long long cumulative = 0;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    cumulative += schedule[k].duration_s;
    const auto end = static_cast<std::size_t>(cumulative) * static_cast<std::size_t>(fps);
    Segment seg;
    seg.session_id = session_id;
    seg.subject_id = subject_id;
    seg.order_index = static_cast<std::uint32_t>(k);
    seg.noise_level = schedule[k].noise_level;
    seg.frames.rows = end - begin;
    seg.frames.cols = frames.cols;
    seg.frames.values.assign(frames.values.begin() + static_cast<std::ptrdiff_t>(begin * frames.cols),
                             frames.values.begin() + static_cast<std::ptrdiff_t>(end * frames.cols));
    out.push_back(std::move(seg));
    begin = end;
  }
  return out;
}

Dataset generate_synthetic(const GeneratorConfig& config) {
  config.validate();
  const std::size_t d = config.feature_dim;

  Dataset ds;
  auto& m = ds.manifest;
  m.feature_dim = d;
  m.fps = config.fps;
  m.min_frames = static_cast<std::size_t>(config.min_duration_s * config.fps);
  m.max_frames = static_cast<std::size_t>(config.max_duration_s * config.fps);
  int min_age = config.age_ranges[0][0], max_age = config.age_ranges[0][1];
  for (const auto& r : config.age_ranges) {
    min_age = std::min(min_age, r[0]);
    max_age = std::max(max_age, r[1]);
  }
  m.min_age = min_age;
  m.max_age = max_age;
  m.generator = config;

  // Fixed directions shared by every subject.
  Rng dir_rng = make_rng(config.seed, "generator.directions");
  const Vec shared_response = normalized(gaussian_vector(d, 1.0, dir_rng));
  Vec age_direction = gaussian_vector(d, 1.0, dir_rng);
  if (d > 1) {
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += age_direction[i] * shared_response[i];
    for (std::size_t i = 0; i < d; ++i) age_direction[i] -= dot * shared_response[i];
  }
  age_direction = normalized(age_direction);
  const double age_center = 0.5 * (min_age + max_age);
  const double age_scale = std::max(1.0, (max_age - min_age) / std::sqrt(12.0));

  // Demographics: groups round-robin over a shuffled order keep terciles balanced.
  Rng subj_rng = make_rng(config.seed, "generator.subjects");
  std::vector<SubjectId> order(config.subjects);
  std::iota(order.begin(), order.end(), SubjectId{0});
  std::shuffle(order.begin(), order.end(), subj_rng);
  ds.subjects.resize(config.subjects);
  std::vector<Latents> latents(config.subjects);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const SubjectId id = order[k];
    const std::size_t group = k % 3;
    std::uniform_int_distribution<int> age_dist(config.age_ranges[group][0], config.age_ranges[group][1]);
    std::bernoulli_distribution hl(config.positive_rates[group]);
    auto& s = ds.subjects[id];
    s.subject_id = id;
    s.age = age_dist(subj_rng);
    s.hearing_status = hl(subj_rng) ? 1 : 0;
    Rng lat_rng = make_rng(config.seed, "generator.latents", id);
    latents[id].style = gaussian_vector(d, 1.0 / std::sqrt(static_cast<double>(d)), lat_rng);
    const double baseline = config.baseline_shift_std * std::normal_distribution<double>(0.0, 1.0)(lat_rng);
    Vec jitter = gaussian_vector(d, config.response_direction_jitter / std::sqrt(static_cast<double>(d)), lat_rng);
    for (std::size_t i = 0; i < d; ++i) jitter[i] += shared_response[i];
    latents[id].response = normalized(std::move(jitter));
    latents[id].baseline = baseline;
  }

  // Pair subjects into sessions with balanced shuffled schedules.
  Rng sess_rng = make_rng(config.seed, "generator.sessions");
  std::vector<SubjectId> pairing(config.subjects);
  std::iota(pairing.begin(), pairing.end(), SubjectId{0});
  std::shuffle(pairing.begin(), pairing.end(), sess_rng);
  std::uniform_int_distribution<int> dur_dist(config.min_duration_s, config.max_duration_s);
  for (std::size_t k = 0; k < pairing.size(); k += 2) {
    SessionRecord session;
    session.session_id = static_cast<SessionId>(k / 2);
    session.subject_ids = {std::min(pairing[k], pairing[k + 1]), std::max(pairing[k], pairing[k + 1])};
    std::vector<NoiseLevel> levels(config.schedule_entries);
    for (std::size_t e = 0; e < levels.size(); ++e) levels[e] = kNoiseLevels[e % 4];
    std::shuffle(levels.begin(), levels.end(), sess_rng);
    for (NoiseLevel level : levels) session.schedule.push_back({level, dur_dist(sess_rng)});
    ds.sessions.push_back(std::move(session));
  }

  // Continuous per-subject feature streams, then cut at the schedule changes.
  for (const auto& session : ds.sessions) {
    for (SubjectId id : session.subject_ids) {
      const auto& subj = ds.subjects[id];
      const auto& lat = latents[id];
      Rng frame_rng = make_rng(config.seed, "generator.frames", id);
      std::normal_distribution<double> frame_noise(0.0, 1.0);
      const double age_norm = (subj.age - age_center) / age_scale;
      const double gain = config.normal_variation_gain + config.hearing_variation_gain * subj.hearing_status;

      FrameMatrix stream;
      stream.cols = d;
      for (const auto& entry : session.schedule) {
        const double response = config.noise_response[static_cast<std::size_t>(entry.noise_level)];
        const Vec offset = gaussian_vector(d, config.segment_noise_std, frame_rng);
        Vec mean(d);
        for (std::size_t i = 0; i < d; ++i) {
          mean[i] = config.subject_style_gain * lat.style[i] + lat.baseline * shared_response[i] +
                    config.age_leak_gain * age_norm * age_direction[i] +
                    response * gain * lat.response[i] + offset[i];
        }
        const auto n_frames = static_cast<std::size_t>(entry.duration_s * config.fps);
        for (std::size_t f = 0; f < n_frames; ++f) {
          for (std::size_t i = 0; i < d; ++i) {
            stream.values.push_back(mean[i] + config.frame_noise_std * frame_noise(frame_rng));
          }
        }
        stream.rows += n_frames;
      }
      auto segs = segment_stream(stream, session.schedule, config.fps, session.session_id, id);
      for (auto& s : segs) ds.segments.push_back(std::move(s));
    }
  }

  m.subject_count = ds.subjects.size();
  m.session_count = ds.sessions.size();
  m.segment_count = ds.segments.size();
  ds.validate();
  return ds;
}

}  // namespace hld::data
