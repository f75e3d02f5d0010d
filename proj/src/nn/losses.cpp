// SPDX-License-Identifier: Apache-2.0
#include "hld/nn/losses.hpp"

#include "hld/util/error.hpp"

namespace hld::nn {

Tensor triplet_loss(Tape& tape, const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                    double margin) {
  if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "triplet_loss operands differ in shape");
  }
  Tensor d_pos = tape.sqrt(tape.squared_distance(anchor, positive));
  Tensor d_neg = tape.sqrt(tape.squared_distance(anchor, negative));
  // Evaluated as (margin + d_pos) - d_neg, left to right.
  return tape.relu(tape.sub(tape.add_scalar(d_pos, margin), d_neg));
}

Tensor bce_with_logits(Tape& tape, const Tensor& logit, double label) {
  return tape.bce_with_logits(logit, label);
}

Tensor mse_loss(Tape& tape, const Tensor& prediction, double target) {
  Tensor diff = tape.add_scalar(prediction, -target);
  return tape.mul(diff, diff);
}

Tensor grl_apply(Tape& tape, const Tensor& x) { return tape.grad_reverse(x); }

}  // namespace hld::nn
