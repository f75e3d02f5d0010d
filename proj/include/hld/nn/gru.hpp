// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hld/autodiff/tape.hpp"

namespace hld::nn {

using ad::Tape;
using ad::Tensor;

/// Single-layer GRU weights. W_* are (H x d), U_* are (H x H), b_* are (H).
struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor w_z, w_r, w_h;
  Tensor u_z, u_r, u_h;
  Tensor b_z, b_r, b_h;

  static GruParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::vector<Tensor> parameters() const;
  GruParams clone() const;
  /// Throws ShapeMismatch / NonFinite when the invariants do not hold.
  void validate() const;
};

/// Runs the recurrence over `frames` (T x d) from `h0` (H) and returns all
/// hidden states (T x H):
///
///   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
///   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
///   c_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
///   h_t = (1 - z_t) * h_{t-1} + z_t * c_t
///
/// Fused kernel: one tape node with a hand-written BPTT backward rule.
Tensor gru_forward(Tape& tape, const Tensor& frames, const GruParams& params, const Tensor& h0);

/// The same recurrence composed from tape primitives, one node per
/// elementary op. Slow; kept as the reference the fused kernel is tested
/// against. Frames are treated as constants.
std::vector<Tensor> gru_forward_reference(Tape& tape, const Tensor& frames, const GruParams& params,
                                          const Tensor& h0);

/// Mean over time of a (T x H) state sequence.
Tensor avg_pool(Tape& tape, const Tensor& states);

/// Mean of a list of H-vectors built from primitives (reference path).
Tensor avg_pool(Tape& tape, const std::vector<Tensor>& states);

/// Xavier-uniform weights, zero biases; deterministic per seed.
GruParams init_gru(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);

}  // namespace hld::nn
