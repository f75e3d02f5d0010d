// SPDX-License-Identifier: Apache-2.0
#include "hld/eval/metrics.hpp"

#include <string>

#include "hld/util/error.hpp"

namespace hld::eval {

Confusion confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw Error(ErrorCode::LengthMismatch, "predictions (" + std::to_string(predictions.size()) +
                                               ") and labels (" + std::to_string(labels.size()) +
                                               ") must be equal and non-empty");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw Error(ErrorCode::InvalidLabel, "binary values only");
    if (p == 1 && y == 1) ++c.tp;
    else if (p == 1) ++c.fp;
    else if (y == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(const Confusion& c) {
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) throw Error(ErrorCode::Undefined, "F1 undefined: no positive labels or predictions");
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

double f1_score(std::span<const int> predictions, std::span<const int> labels) {
  return f1_score(confusion(predictions, labels));
}

}  // namespace hld::eval
