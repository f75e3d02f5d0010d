// SPDX-License-Identifier: Apache-2.0
#include "hld/pipeline/model.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hld/nn/losses.hpp"
#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::pipeline {
namespace {

using nlohmann::json;

[[noreturn]] void mismatch(const std::string& what) { throw Error(ErrorCode::VariantInputMismatch, what); }

Tensor frames_tensor(const data::Segment& s) {
  if (s.frames.rows == 0) throw Error(ErrorCode::EmptySequence, "segment has no frames");
  return Tensor({s.frames.rows, s.frames.cols}, s.frames.values);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Single: return "Single";
    case ModelVariant::SingleWithAge: return "SingleWithAge";
    case ModelVariant::Anchor: return "Anchor";
    case ModelVariant::AnchorVM: return "AnchorVM";
    case ModelVariant::AnchorVMABM: return "AnchorVMABM";
  }
  return "Single";
}

ModelVariant variant_from_string(std::string_view name) {
  for (ModelVariant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown model variant '" + std::string(name) + "'");
}

bool uses_anchor(ModelVariant v) {
  return v == ModelVariant::Anchor || v == ModelVariant::AnchorVM || v == ModelVariant::AnchorVMABM;
}
bool uses_pretraining(ModelVariant v) { return v == ModelVariant::AnchorVM || v == ModelVariant::AnchorVMABM; }
bool uses_age_input(ModelVariant v) { return v == ModelVariant::SingleWithAge; }
bool uses_age_adversary(ModelVariant v) { return v == ModelVariant::AnchorVMABM; }

AgeNorm compute_age_norm(std::span<const double> ages) {
  AgeNorm norm;
  if (ages.empty()) return norm;
  double sum = 0.0;
  for (double a : ages) sum += a;
  norm.mean = sum / static_cast<double>(ages.size());
  if (ages.size() < 2) return norm;
  double ss = 0.0;
  for (double a : ages) ss += (a - norm.mean) * (a - norm.mean);
  const double sd = std::sqrt(ss / static_cast<double>(ages.size() - 1));
  norm.std = sd > 0.0 ? sd : 1.0;
  return norm;
}

std::size_t ModelBundle::head_input_dim() const {
  switch (variant) {
    case ModelVariant::Single: return hidden_dim();
    case ModelVariant::SingleWithAge: return hidden_dim() + 1;
    default: return 2 * hidden_dim();
  }
}

std::vector<Tensor> ModelBundle::parameters() const {
  std::vector<Tensor> out = encoder.parameters();
  for (const auto& t : hl_head.parameters()) out.push_back(t);
  if (age_head) {
    for (const auto& t : age_head->parameters()) out.push_back(t);
  }
  return out;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b;
  b.variant = variant;
  b.encoder = encoder.clone();
  b.hl_head = hl_head.clone();
  if (age_head) b.age_head = age_head->clone();
  b.age_norm = age_norm;
  return b;
}

void ModelBundle::validate() const {
  encoder.validate();
  hl_head.validate();
  if (hl_head.input_dim() != head_input_dim() || hl_head.output_dim() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "hearing-loss head does not match the variant");
  }
  if (uses_age_adversary(variant) != age_head.has_value()) {
    throw Error(ErrorCode::ShapeMismatch, "age head present iff the variant is AnchorVMABM");
  }
  if (age_head) {
    age_head->validate();
    if (age_head->input_dim() != 2 * hidden_dim() || age_head->output_dim() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "age head must map 2H -> 1");
    }
  }
  if (!(age_norm.std > 0.0) || !std::isfinite(age_norm.mean)) {
    throw Error(ErrorCode::ShapeMismatch, "age normalization needs std > 0");
  }
}

ModelBundle make_bundle(ModelVariant variant, std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                        std::optional<nn::GruParams> encoder) {
  ModelBundle b;
  b.variant = variant;
  b.encoder = encoder ? std::move(*encoder) : nn::init_gru(input_dim, hidden_dim, derive_seed(seed, "encoder"));
  if (b.encoder.input_dim != input_dim || b.encoder.hidden_dim != hidden_dim) {
    throw Error(ErrorCode::ShapeMismatch, "supplied encoder does not match the requested dims");
  }
  b.hl_head = nn::init_mlp({b.head_input_dim(), hidden_dim, 1}, nn::Activation::Relu, derive_seed(seed, "hl_head"));
  if (uses_age_adversary(variant)) {
    b.age_head = nn::init_mlp({2 * hidden_dim, hidden_dim, 1}, nn::Activation::Relu, derive_seed(seed, "age_head"));
  }
  return b;
}

Tensor encode_segment(Tape& tape, const data::Segment& segment, const nn::GruParams& encoder) {
  if (segment.frames.cols != encoder.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "segment feature dim " + std::to_string(segment.frames.cols) +
                                              " != encoder input dim " + std::to_string(encoder.input_dim));
  }
  const Tensor h0 = Tensor::zeros({encoder.hidden_dim});
  return nn::avg_pool(tape, nn::gru_forward(tape, frames_tensor(segment), encoder, h0));
}

Tensor encode_variation(Tape& tape, const data::Segment& s1, const data::Segment& s2,
                        const nn::GruParams& encoder) {
  Tensor f1 = encode_segment(tape, s1, encoder);
  Tensor f2 = encode_segment(tape, s2, encoder);
  return tape.concat(f1, f2);
}

Tensor EncodingCache::get(std::size_t index, const data::Segment& segment) {
  auto it = cache_.find(index);
  if (it != cache_.end()) return it->second;
  Tensor f = encode_segment(tape_, segment, encoder_);
  cache_.emplace(index, f);
  return f;
}

ForwardOutput forward_heads(Tape& tape, const ModelBundle& bundle, const Tensor& current, const Tensor* anchor,
                            std::optional<double> normalized_age, bool reverse_age_gradient) {
  ForwardOutput out;
  const ModelVariant v = bundle.variant;
  if (uses_anchor(v)) {
    if (anchor == nullptr) mismatch(std::string(to_string(v)) + " needs an anchor segment");
    out.representation = tape.concat(current, *anchor);
  } else {
    out.representation = current;
  }
  Tensor head_in = out.representation;
  if (uses_age_input(v)) {
    if (!normalized_age) mismatch("SingleWithAge needs the subject's age");
    head_in = tape.concat(head_in, Tensor::vector({*normalized_age}));
  }
  out.logit = nn::mlp_forward(tape, head_in, bundle.hl_head);
  if (bundle.age_head) {
    Tensor adv_in = reverse_age_gradient ? nn::grl_apply(tape, out.representation) : out.representation;
    out.age_estimate = nn::mlp_forward(tape, adv_in, *bundle.age_head);
  }
  return out;
}

double predict(const ModelBundle& bundle, const PredictInput& input) {
  const ModelVariant v = bundle.variant;
  if (input.current == nullptr) mismatch("predict needs a current segment");
  if (uses_anchor(v) != (input.anchor != nullptr)) {
    mismatch(std::string(to_string(v)) + (uses_anchor(v) ? " needs an anchor" : " takes no anchor"));
  }
  if (uses_age_input(v) != input.age_years.has_value()) {
    mismatch(std::string(to_string(v)) + (uses_age_input(v) ? " needs an age" : " takes no age"));
  }
  Tape tape(false);
  Tensor cur = encode_segment(tape, *input.current, bundle.encoder);
  std::optional<Tensor> anc;
  if (input.anchor) anc = encode_segment(tape, *input.anchor, bundle.encoder);
  std::optional<double> age;
  if (input.age_years) age = bundle.age_norm.normalize(*input.age_years);
  auto out = forward_heads(tape, bundle, cur, anc ? &*anc : nullptr, age);
  return sigmoid(out.logit.item());
}

std::vector<double> embed(const ModelBundle& bundle, const data::Segment& current, const data::Segment* anchor) {
  Tape tape(false);
  Tensor cur = encode_segment(tape, current, bundle.encoder);
  if (!uses_anchor(bundle.variant)) return {cur.values().begin(), cur.values().end()};
  if (anchor == nullptr) mismatch("embedding an anchor variant needs the anchor");
  Tensor anc = encode_segment(tape, *anchor, bundle.encoder);
  Tensor v = tape.concat(cur, anc);
  return {v.values().begin(), v.values().end()};
}

// --- serialization ---

namespace {

constexpr int kBundleFormatVersion = 1;

json tensor_json(const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); }

Tensor tensor_from(const json& j, ad::Shape shape) {
  auto values = j.get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(values), true);
}

json mlp_json(const nn::MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"in", l.weight.dim(1)},
                      {"out", l.weight.dim(0)},
                      {"activation", nn::to_string(l.activation)},
                      {"weight", tensor_json(l.weight)},
                      {"bias", tensor_json(l.bias)}});
  }
  return layers;
}

nn::MlpParams mlp_from(const json& j) {
  nn::MlpParams p;
  for (const auto& l : j) {
    const auto in = l.at("in").get<std::size_t>();
    const auto out = l.at("out").get<std::size_t>();
    p.layers.push_back({tensor_from(l.at("weight"), {out, in}), tensor_from(l.at("bias"), {out}),
                        nn::activation_from_string(l.at("activation").get<std::string>())});
  }
  return p;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  const auto& e = bundle.encoder;
  json j{{"format_version", kBundleFormatVersion},
         {"variant", to_string(bundle.variant)},
         {"input_dim", e.input_dim},
         {"hidden_dim", e.hidden_dim},
         {"age_norm", {{"mean", bundle.age_norm.mean}, {"std", bundle.age_norm.std}}},
         {"encoder",
          {{"w_z", tensor_json(e.w_z)},
           {"w_r", tensor_json(e.w_r)},
           {"w_h", tensor_json(e.w_h)},
           {"u_z", tensor_json(e.u_z)},
           {"u_r", tensor_json(e.u_r)},
           {"u_h", tensor_json(e.u_h)},
           {"b_z", tensor_json(e.b_z)},
           {"b_r", tensor_json(e.b_r)},
           {"b_h", tensor_json(e.b_h)}}},
         {"hl_head", mlp_json(bundle.hl_head)},
         {"age_head", bundle.age_head ? mlp_json(*bundle.age_head) : json(nullptr)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump() << '\n';
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  ModelBundle b;
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != kBundleFormatVersion) {
      throw Error(ErrorCode::FormatError, "unsupported bundle format version");
    }
    b.variant = variant_from_string(j.at("variant").get<std::string>());
    const auto d = j.at("input_dim").get<std::size_t>();
    const auto H = j.at("hidden_dim").get<std::size_t>();
    const auto& e = j.at("encoder");
    b.encoder.input_dim = d;
    b.encoder.hidden_dim = H;
    b.encoder.w_z = tensor_from(e.at("w_z"), {H, d});
    b.encoder.w_r = tensor_from(e.at("w_r"), {H, d});
    b.encoder.w_h = tensor_from(e.at("w_h"), {H, d});
    b.encoder.u_z = tensor_from(e.at("u_z"), {H, H});
    b.encoder.u_r = tensor_from(e.at("u_r"), {H, H});
    b.encoder.u_h = tensor_from(e.at("u_h"), {H, H});
    b.encoder.b_z = tensor_from(e.at("b_z"), {H});
    b.encoder.b_r = tensor_from(e.at("b_r"), {H});
    b.encoder.b_h = tensor_from(e.at("b_h"), {H});
    b.hl_head = mlp_from(j.at("hl_head"));
    if (!j.at("age_head").is_null()) b.age_head = mlp_from(j.at("age_head"));
    b.age_norm.mean = j.at("age_norm").at("mean").get<double>();
    b.age_norm.std = j.at("age_norm").at("std").get<double>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::FormatError) throw;
    throw Error(ErrorCode::FormatError, path.string() + ": " + ex.what());
  }
  b.validate();
  return b;
}

}  // namespace hld::pipeline
