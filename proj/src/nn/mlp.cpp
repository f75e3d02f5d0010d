// SPDX-License-Identifier: Apache-2.0
#include "hld/nn/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::nn {

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "linear") return Activation::Linear;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCode::FormatError, "unknown activation '" + std::string(name) + "'");
}

std::size_t MlpParams::input_dim() const { return layers.empty() ? 0 : layers.front().weight.dim(1); }
std::size_t MlpParams::output_dim() const { return layers.empty() ? 0 : layers.back().weight.dim(0); }

std::vector<Tensor> MlpParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

MlpParams MlpParams::clone() const {
  MlpParams p;
  for (const auto& l : layers) p.layers.push_back({l.weight.clone(), l.bias.clone(), l.activation});
  return p;
}

void MlpParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::ShapeMismatch, "MLP has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(0)) {
      throw Error(ErrorCode::ShapeMismatch, "MLP layer " + std::to_string(i) + " has inconsistent shapes");
    }
    if (i > 0 && layers[i - 1].weight.dim(0) != l.weight.dim(1)) {
      throw Error(ErrorCode::ShapeMismatch, "MLP layer " + std::to_string(i) + " does not chain");
    }
    ad::require_finite(l.weight.values(), "MLP weight");
    ad::require_finite(l.bias.values(), "MLP bias");
  }
  if (layers.back().activation != Activation::Linear) {
    throw Error(ErrorCode::ShapeMismatch, "MLP output layer must be linear");
  }
}

Tensor mlp_forward(Tape& tape, const Tensor& x, const MlpParams& params) {
  params.validate();
  if (x.rank() != 1 || x.dim(0) != params.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "MLP input " + ad::shape_string(x.shape()) + ", expected (" +
                                              std::to_string(params.input_dim()) + ")");
  }
  Tensor h = x;
  for (const auto& layer : params.layers) {
    h = tape.add(tape.matmul(layer.weight, h), layer.bias);
    switch (layer.activation) {
      case Activation::Linear: break;
      case Activation::Relu: h = tape.relu(h); break;
      case Activation::Tanh: h = tape.tanh(h); break;
    }
  }
  return h;
}

Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_out * fan_in);
  for (double& v : w) v = dist(rng);
  return Tensor({fan_out, fan_in}, std::move(w), true);
}

MlpParams init_mlp(const std::vector<std::size_t>& dims, Activation hidden_activation, std::uint64_t seed) {
  if (dims.size() < 2) throw Error(ErrorCode::ShapeMismatch, "MLP needs at least input and output dims");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) throw Error(ErrorCode::ShapeMismatch, "MLP dims must be positive");
    const bool last = i + 2 == dims.size();
    p.layers.push_back({xavier_uniform(dims[i + 1], dims[i], derive_seed(seed, "mlp.layer", i)),
                        Tensor::zeros({dims[i + 1]}, true),
                        last ? Activation::Linear : hidden_activation});
  }
  return p;
}

MlpParams zero_mlp(const std::vector<std::size_t>& dims, Activation hidden_activation) {
  MlpParams p = init_mlp(dims, hidden_activation, 0);
  for (auto& l : p.layers) {
    for (double& v : l.weight.mutable_values()) v = 0.0;
  }
  return p;
}

}  // namespace hld::nn
