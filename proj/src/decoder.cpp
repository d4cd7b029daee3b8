#include "pspg/decoder.hpp"

#include <vector>

namespace pspg {

void DecoderConfig::validate() const {
  if (length == 0) throw ConfigError("decoder: length must be >= 1");
  if (hidden == 0 || input_dim == 0 || output_dim == 0)
    throw ConfigError("decoder: dimensions must be >= 1");
  if (heads == 0 || hidden % heads != 0)
    throw ConfigError("decoder: hidden " + std::to_string(hidden) +
                      " is not divisible by heads " + std::to_string(heads));
  if (!(init_std >= 0.0)) throw ConfigError("decoder: init_std must be >= 0");
}

PromptDecoder::PromptDecoder(const DecoderConfig& cfg, std::size_t output_width, Rng& rng)
    : cfg_(cfg), output_width_(output_width) {
  cfg.validate();
  const double s = cfg.init_std;
  gru_ = GruCell(cfg.input_dim, cfg.hidden, rng, s);
  self_attn_ = MultiHeadAttention(cfg.hidden, cfg.heads, rng, s);
  cross_attn_ = MultiHeadAttention(cfg.hidden, cfg.heads, rng, s);
  context_proj_ = Tensor::randn({cfg.input_dim, cfg.hidden}, rng, s, true);
  feedback_proj_ = Tensor::randn({cfg.hidden, cfg.input_dim}, rng, s, true);
  prompt_proj_ = Tensor::randn({cfg.input_dim, output_width}, rng, s, true);
}

void PromptDecoder::check_inputs(const Tensor& class_features,
                                 const Tensor& batch_global) const {
  if (class_features.rank() != 2 || class_features.dim(1) != cfg_.input_dim ||
      class_features.dim(0) == 0)
    throw DimensionError("decoder: class features must be [N_c x " +
                         std::to_string(cfg_.input_dim) + "], got " +
                         shape_str(class_features.shape()));
  if (batch_global.rank() != 2 || batch_global.dim(1) != cfg_.input_dim ||
      batch_global.dim(0) == 0)
    throw DimensionError("decoder: batch features must be [B x " +
                         std::to_string(cfg_.input_dim) + "], got " +
                         shape_str(batch_global.shape()));
}

DecoderState PromptDecoder::initial_state(const Tensor& class_features,
                                          const Tensor& batch_global) const {
  check_inputs(class_features, batch_global);
  const std::size_t classes = class_features.dim(0);
  return {Tensor::zeros({classes, cfg_.hidden}), class_features,
          expand(matmul(batch_global, context_proj_), classes)};
}

Tensor PromptDecoder::gru_cell(const Tensor& previous, const Tensor& hidden) const {
  return gru_.step(previous, hidden);
}

Tensor PromptDecoder::self_attention(const Tensor& hidden) const {
  return self_attn_.self_attend(hidden);
}

Tensor PromptDecoder::cross_attention_context(const Tensor& hidden,
                                              const Tensor& context) const {
  return cross_attn_.cross_attend(hidden, context);
}

Tensor PromptDecoder::generate(const Tensor& class_features,
                               const Tensor& batch_global) const {
  check_inputs(class_features, batch_global);
  const std::size_t classes = class_features.dim(0);

  // c' is the same for every class, so keys and values are built once.
  const MultiHeadAttention::SharedMemory memory =
      cross_attn_.prepare_shared(matmul(batch_global, context_proj_));

  Tensor hidden = Tensor::zeros({classes, cfg_.hidden});
  Tensor previous = class_features;
  std::vector<Tensor> outputs;
  outputs.reserve(cfg_.length);
  for (std::size_t step = 0; step < cfg_.length; ++step) {
    const Tensor candidate = gru_.step(previous, hidden);
    hidden = self_attn_.self_attend(candidate);
    const Tensor attended = cross_attn_.cross_attend_shared(hidden, memory);
    previous = matmul(add(hidden, attended), feedback_proj_);
    outputs.push_back(previous);
  }
  const Tensor sequence = stack(outputs, 1);  // [N_c x n x input_dim]
  const Tensor flat = reshape(sequence, {classes * cfg_.length, cfg_.input_dim});
  return reshape(matmul(flat, prompt_proj_), {classes, cfg_.length, output_width_});
}

void PromptDecoder::collect(const std::string& prefix, ParamList& out) const {
  gru_.collect(prefix + "gru.", out);
  self_attn_.collect(prefix + "self_attn.", out);
  cross_attn_.collect(prefix + "cross_attn.", out);
  out.push_back({prefix + "context_proj", context_proj_});
  out.push_back({prefix + "feedback_proj", feedback_proj_});
  out.push_back({prefix + "prompt_proj", prompt_proj_});
}

PromptGenerator::PromptGenerator(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  switch (cfg.layout) {
    case DecoderLayout::kDual:
      positive_ = PromptDecoder(cfg, cfg.output_dim, rng);
      negative_ = PromptDecoder(cfg, cfg.output_dim, rng);
      break;
    case DecoderLayout::kSingle:
      positive_ = PromptDecoder(cfg, 2 * cfg.output_dim, rng);
      break;
    case DecoderLayout::kPositiveOnly:
      positive_ = PromptDecoder(cfg, cfg.output_dim, rng);
      break;
  }
}

PromptPair PromptGenerator::generate(const Tensor& class_features,
                                     const Tensor& batch_global) const {
  PromptPair out;
  switch (cfg_.layout) {
    case DecoderLayout::kDual:
      out.positive = {positive_.generate(class_features, batch_global), Polarity::kPositive};
      out.negative =
          PseudoPrompt{negative_.generate(class_features, batch_global), Polarity::kNegative};
      break;
    case DecoderLayout::kSingle: {
      const Tensor both = positive_.generate(class_features, batch_global);
      out.positive = {slice(both, 2, 0, cfg_.output_dim), Polarity::kPositive};
      out.negative =
          PseudoPrompt{slice(both, 2, cfg_.output_dim, cfg_.output_dim), Polarity::kNegative};
      break;
    }
    case DecoderLayout::kPositiveOnly:
      out.positive = {positive_.generate(class_features, batch_global), Polarity::kPositive};
      break;
  }
  return out;
}

ParamList PromptGenerator::params() const {
  ParamList out;
  switch (cfg_.layout) {
    case DecoderLayout::kDual:
      positive_.collect("decoder.pos.", out);
      negative_.collect("decoder.neg.", out);
      break;
    case DecoderLayout::kSingle:
      positive_.collect("decoder.shared.", out);
      break;
    case DecoderLayout::kPositiveOnly:
      positive_.collect("decoder.pos.", out);
      break;
  }
  return out;
}

}  // namespace pspg
