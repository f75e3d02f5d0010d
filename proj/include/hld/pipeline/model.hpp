// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hld/autodiff/tape.hpp"
#include "hld/data/dataset.hpp"
#include "hld/nn/gru.hpp"
#include "hld/nn/mlp.hpp"

namespace hld::pipeline {

using ad::Tape;
using ad::Tensor;

/// The five model variants, in ablation-ladder order.
enum class ModelVariant {
  Single,         // current segment only
  SingleWithAge,  // current segment + normalized age (deliberately biased baseline)
  Anchor,         // V(current, anchor), no pre-training
  AnchorVM,       // Anchor + variation-modeling pre-training
  AnchorVMABM,    // AnchorVM + adversarial age-bias mitigation
};

inline constexpr ModelVariant kAllVariants[] = {ModelVariant::Single, ModelVariant::SingleWithAge,
                                                ModelVariant::Anchor, ModelVariant::AnchorVM,
                                                ModelVariant::AnchorVMABM};

std::string_view to_string(ModelVariant v);
ModelVariant variant_from_string(std::string_view name);
bool uses_anchor(ModelVariant v);
bool uses_pretraining(ModelVariant v);
bool uses_age_input(ModelVariant v);
bool uses_age_adversary(ModelVariant v);

/// Label normalization constants, computed from training subjects only.
struct AgeNorm {
  double mean = 0.0;
  double std = 1.0;

  double normalize(double age) const { return (age - mean) / std; }
};

/// Mean and sample (n-1) standard deviation; std falls back to 1 when
/// fewer than two ages are given or all ages coincide.
AgeNorm compute_age_norm(std::span<const double> ages);

struct ModelBundle {
  ModelVariant variant = ModelVariant::Single;
  nn::GruParams encoder;
  nn::MlpParams hl_head;
  std::optional<nn::MlpParams> age_head;
  AgeNorm age_norm;

  std::size_t input_dim() const { return encoder.input_dim; }
  std::size_t hidden_dim() const { return encoder.hidden_dim; }
  /// H for Single, H+1 for SingleWithAge, 2H for anchor variants.
  std::size_t head_input_dim() const;
  std::vector<Tensor> parameters() const;
  ModelBundle clone() const;
  void validate() const;
};

/// Fresh heads (and encoder unless one is supplied). Heads are
/// MLP [in -> H -> 1] with a relu hidden layer.
ModelBundle make_bundle(ModelVariant variant, std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                        std::optional<nn::GruParams> encoder = std::nullopt);

/// f = avg_pool(gru(frames, h0 = 0)).
Tensor encode_segment(Tape& tape, const data::Segment& segment, const nn::GruParams& encoder);

/// v = concat(E(s1), E(s2)), s1 first.
Tensor encode_variation(Tape& tape, const data::Segment& s1, const data::Segment& s2,
                        const nn::GruParams& encoder);

/// Encodes each dataset segment at most once per tape.
class EncodingCache {
 public:
  EncodingCache(Tape& tape, const nn::GruParams& encoder) : tape_(tape), encoder_(encoder) {}
  Tensor get(std::size_t index, const data::Segment& segment);

 private:
  Tape& tape_;
  const nn::GruParams& encoder_;
  std::unordered_map<std::size_t, Tensor> cache_;
};

struct ForwardOutput {
  Tensor representation;  // head input without the age column
  Tensor logit;
  std::optional<Tensor> age_estimate;  // AnchorVMABM only
};

/// Head-level forward given pre-computed segment encodings.
/// `anchor` is required for anchor variants; `normalized_age` for SingleWithAge.
/// `reverse_age_gradient = false` removes the gradient reversal in front of
/// the age head (diagnostics only).
ForwardOutput forward_heads(Tape& tape, const ModelBundle& bundle, const Tensor& current,
                            const Tensor* anchor, std::optional<double> normalized_age,
                            bool reverse_age_gradient = true);

struct PredictInput {
  const data::Segment* current = nullptr;
  const data::Segment* anchor = nullptr;
  std::optional<double> age_years;
};

/// sigma(logit). Throws VariantInputMismatch when the inputs do not match
/// what the variant consumes.
double predict(const ModelBundle& bundle, const PredictInput& input);

/// The frozen representation the heads see (f or V), without gradients.
std::vector<double> embed(const ModelBundle& bundle, const data::Segment& current, const data::Segment* anchor);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace hld::pipeline
