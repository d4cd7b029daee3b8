#include "pspg/model.hpp"

#include <algorithm>

#include "pspg/rng.hpp"

namespace pspg {

std::string feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kGlobal: return "global";
    case FeatureMode::kGlobalLocal: return "global_local";
    case FeatureMode::kFused: return "fused";
  }
  return "fused";
}

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "global") return FeatureMode::kGlobal;
  if (name == "global_local") return FeatureMode::kGlobalLocal;
  if (name == "fused") return FeatureMode::kFused;
  throw ConfigError("unknown feature mode '" + name + "' (expected global, global_local, fused)");
}

std::string layout_name(DecoderLayout layout) {
  switch (layout) {
    case DecoderLayout::kDual: return "dual";
    case DecoderLayout::kSingle: return "single";
    case DecoderLayout::kPositiveOnly: return "pos_only";
  }
  return "dual";
}

DecoderLayout parse_layout(const std::string& name) {
  if (name == "dual") return DecoderLayout::kDual;
  if (name == "single") return DecoderLayout::kSingle;
  if (name == "pos_only") return DecoderLayout::kPositiveOnly;
  throw ConfigError("unknown decoder layout '" + name + "' (expected dual, single, pos_only)");
}

std::string prompt_mode_name(PromptMode mode) {
  return mode == PromptMode::kPrefix ? "prefix" : "full";
}

PromptMode parse_prompt_mode(const std::string& name) {
  if (name == "full") return PromptMode::kFull;
  if (name == "prefix") return PromptMode::kPrefix;
  throw ConfigError("unknown prompt mode '" + name + "' (expected full or prefix)");
}

void ModelConfig::sync() {
  decoder.input_dim = backbone.joint_dim;
  decoder.output_dim = backbone.embed_dim;
  backbone.validate();
  decoder.validate();
  if (decoder.length > backbone.max_text_len)
    throw ConfigError("prompt length " + std::to_string(decoder.length) +
                      " exceeds max_text_len " + std::to_string(backbone.max_text_len));
}

PspgModel::PspgModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.sync();
  backbone_ = Backbone(cfg_.backbone, seed);
  generator_ = PromptGenerator(cfg_.decoder, splitmix64(seed + 1));
}

Tensor PspgModel::positions(const EncodedBatch& images) const {
  switch (cfg_.features) {
    case FeatureMode::kGlobal:
      return reshape(images.global, {images.global.dim(0), 1, images.global.dim(1)});
    case FeatureMode::kGlobalLocal:
      return concat_positions(images.global, images.local);
    case FeatureMode::kFused:
      return fusion_.fuse_batch(images.global, images.local);
  }
  return Tensor();
}

Tensor PspgModel::class_features(const std::vector<TextTokens>& class_tokens) const {
  if (class_tokens.empty()) throw DimensionError("model: no classes");
  return backbone_.text().encode_tokens_many(class_tokens);
}

Tensor PspgModel::prompt_sequences(const Tensor& prompt,
                                   const std::vector<TextTokens>& class_tokens) const {
  if (cfg_.decoder.mode == PromptMode::kFull) return prompt;
  if (prompt.dim(0) != class_tokens.size())
    throw DimensionError("model: " + std::to_string(prompt.dim(0)) + " prompts for " +
                         std::to_string(class_tokens.size()) + " classes");
  std::vector<Tensor> names;
  names.reserve(class_tokens.size());
  for (const auto& t : class_tokens) {
    if (t.size() != class_tokens.front().size())
      throw DimensionError("model: prefix prompts need equal-length class token sequences");
    names.push_back(backbone_.text().embed(t));
  }
  return concat({prompt, stack(names, 0)}, 1);
}

ForwardPass PspgModel::forward(const EncodedBatch& images,
                               const std::vector<TextTokens>& class_tokens) const {
  ForwardPass pass;
  pass.positions = positions(images);
  const Tensor classes = class_features(class_tokens);
  const PromptPair prompts = generator_.generate(classes, images.global);
  const TextEncoder& text = backbone_.text();

  pass.positive_sequences = prompt_sequences(prompts.positive.vectors, class_tokens);
  const Tensor pos_features = text.encode_embedded_batch(pass.positive_sequences);
  pass.out.pos_sims = similarity_matrix(pass.positions, pos_features, cfg_.aggregation);
  if (prompts.negative) {
    const Tensor neg_features =
        text.encode_embedded_batch(prompt_sequences(prompts.negative->vectors, class_tokens));
    pass.out.neg_sims = similarity_matrix(pass.positions, neg_features, cfg_.aggregation);
  }
  pass.out.probs = dual_probabilities(pass.out.pos_sims, pass.out.neg_sims,
                                      backbone_.inverse_temperature());
  if (!pass.out.neg_sims.defined()) pass.out.neg_sims = Tensor::zeros(pass.out.pos_sims.shape());
  return pass;
}

ClassifierOutput PspgModel::predict(const Tensor& raw_images,
                                    const std::vector<TextTokens>& class_tokens) const {
  return forward(backbone_.image().encode_batch(raw_images), class_tokens).out;
}

ParamList PspgModel::params() const {
  ParamList out = backbone_.params();
  for (auto& p : prompt_params()) out.push_back(std::move(p));
  return out;
}

ParamList PspgModel::prompt_params() const {
  ParamList out = fusion_.params();
  for (auto& p : generator_.params()) out.push_back(std::move(p));
  return out;
}

ClassifierOutput template_predict(const Backbone& backbone, const Tensor& raw_images,
                                  const std::vector<TemplatePair>& templates,
                                  Aggregation mode) {
  if (templates.empty()) throw DimensionError("template_predict: no classes");
  const EncodedBatch images = backbone.image().encode_batch(raw_images);
  const Tensor positions = concat_positions(images.global, images.local);
  std::vector<TextTokens> pos, neg;
  for (const auto& t : templates) {
    pos.push_back(t.positive);
    neg.push_back(t.negative);
  }
  ClassifierOutput out;
  out.pos_sims = similarity_matrix(positions, backbone.text().encode_tokens_many(pos), mode);
  out.neg_sims = similarity_matrix(positions, backbone.text().encode_tokens_many(neg), mode);
  out.probs = dual_probabilities(out.pos_sims, out.neg_sims, backbone.inverse_temperature());
  return out;
}

Tensor predict_in_batches(const PspgModel& model, const Tensor& raw_images,
                          const std::vector<TextTokens>& class_tokens, std::size_t batch,
                          ClassifierOutput* detail) {
  if (batch == 0) throw ConfigError("predict: batch size must be >= 1");
  const std::size_t total = raw_images.dim(0);
  if (total == 0) throw DimensionError("predict: no images");
  std::vector<Tensor> probs, pos, neg;
  for (std::size_t start = 0; start < total; start += batch) {
    const std::size_t count = std::min(batch, total - start);
    const ClassifierOutput out = model.predict(slice(raw_images, 0, start, count), class_tokens);
    probs.push_back(out.probs);
    pos.push_back(out.pos_sims);
    neg.push_back(out.neg_sims);
  }
  auto join = [](const std::vector<Tensor>& parts) {
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
  };
  if (detail) *detail = {join(probs), join(pos), join(neg)};
  return join(probs);
}

}  // namespace pspg
