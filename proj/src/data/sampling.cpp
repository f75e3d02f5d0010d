// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>

#include "hld/data/ops.hpp"
#include "hld/util/error.hpp"

namespace hld::data {

std::vector<Triplet> sample_triplets(const Dataset& dataset, std::span<const std::size_t> subject_segments,
                                     std::span<const NoiseLevel> noise_filter, std::size_t count, Rng& rng) {
  std::vector<std::size_t> noisy, quiet;
  for (std::size_t idx : subject_segments) {
    const NoiseLevel level = dataset.segments.at(idx).noise_level;
    if (level == NoiseLevel::Quiet) {
      quiet.push_back(idx);
    } else if (std::find(noise_filter.begin(), noise_filter.end(), level) != noise_filter.end()) {
      noisy.push_back(idx);
    }
  }
  if (noisy.empty() || quiet.size() < 2 || count == 0) return {};

  // Enumerate (noisy, unordered quiet pair) combinations, draw without
  // replacement, then orient each quiet pair with a fair coin.
  const std::size_t pairs = quiet.size() * (quiet.size() - 1) / 2;
  const std::size_t total = noisy.size() * pairs;
  std::vector<std::size_t> combos(total);
  for (std::size_t i = 0; i < total; ++i) combos[i] = i;
  const std::size_t take = std::min(count, total);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(combos[i], combos[pick(rng)]);
  }

  std::vector<Triplet> out;
  out.reserve(take);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t n = combos[i] / pairs;
    std::size_t p = combos[i] % pairs;
    std::size_t a = 0;
    while (p >= quiet.size() - 1 - a) {
      p -= quiet.size() - 1 - a;
      ++a;
    }
    const std::size_t b = a + 1 + p;
    Triplet t{noisy[n], quiet[a], quiet[b]};
    if (flip(rng)) std::swap(t.quiet_1, t.quiet_2);
    out.push_back(t);
  }
  return out;
}

std::optional<std::size_t> find_anchor(const Dataset& dataset, std::span<const std::size_t> subject_segments) {
  std::optional<std::size_t> best;
  for (std::size_t idx : subject_segments) {
    const auto& seg = dataset.segments.at(idx);
    if (seg.noise_level != NoiseLevel::Quiet) continue;
    if (!best || seg.order_index < dataset.segments[*best].order_index) best = idx;
  }
  return best;
}

std::size_t select_anchor(const Dataset& dataset, std::span<const std::size_t> subject_segments) {
  auto anchor = find_anchor(dataset, subject_segments);
  if (!anchor) throw Error(ErrorCode::NoQuietSegment, "subject has no quiet segment in the session");
  return *anchor;
}

}  // namespace hld::data
