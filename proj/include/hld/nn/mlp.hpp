// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "hld/autodiff/tape.hpp"

namespace hld::nn {

using ad::Tape;
using ad::Tensor;

enum class Activation { Linear, Relu, Tanh };

std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Tensor weight;  // (out x in)
  Tensor bias;    // (out)
  Activation activation = Activation::Linear;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<Tensor> parameters() const;
  MlpParams clone() const;
  void validate() const;
};

/// Affine layers with their declared activations. The last layer must be
/// linear: heads emit raw logits / raw age estimates.
Tensor mlp_forward(Tape& tape, const Tensor& x, const MlpParams& params);

/// dims = {in, hidden..., out}; every hidden layer gets `hidden_activation`.
MlpParams init_mlp(const std::vector<std::size_t>& dims, Activation hidden_activation,
                   std::uint64_t seed);

MlpParams zero_mlp(const std::vector<std::size_t>& dims, Activation hidden_activation);

/// Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) for a
/// (fan_out x fan_in) matrix.
Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::uint64_t seed);

}  // namespace hld::nn
