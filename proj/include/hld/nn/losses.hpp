// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hld/autodiff/tape.hpp"

namespace hld::nn {

using ad::Tape;
using ad::Tensor;

/// max{margin + D(anchor, positive) - D(anchor, negative), 0} with D the
/// Euclidean distance.
Tensor triplet_loss(Tape& tape, const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                    double margin = 1.0);

/// max(l, 0) - l h + log(1 + exp(-|l|)) for a scalar logit l and h in {0, 1}.
Tensor bce_with_logits(Tape& tape, const Tensor& logit, double label);

/// (prediction - target)^2. Batch means are the caller's job.
Tensor mse_loss(Tape& tape, const Tensor& prediction, double target);

/// Gradient reversal: identity forward, gradient times -1 backward.
Tensor grl_apply(Tape& tape, const Tensor& x);

}  // namespace hld::nn
