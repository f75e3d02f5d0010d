// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace hld::eval {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Positive class is 1. Throws LengthMismatch, or InvalidLabel on values
/// other than 0/1.
Confusion confusion(std::span<const int> predictions, std::span<const int> labels);

/// 2TP / (2TP + FP + FN). Throws Undefined when TP + FP + FN == 0 and
/// LengthMismatch on unequal or empty inputs.
double f1_score(std::span<const int> predictions, std::span<const int> labels);
double f1_score(const Confusion& c);

}  // namespace hld::eval
