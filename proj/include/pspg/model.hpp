#pragma once

// The full prompt-generation classifier: backbone, spatial fusion and the
// prompt generator, plus the fixed-template baseline sharing the backbone.

#include <cstdint>
#include <string>
#include <vector>

#include "pspg/backbone.hpp"
#include "pspg/decoder.hpp"
#include "pspg/fusion.hpp"
#include "pspg/zeroshot.hpp"

namespace pspg {

// Which image positions feed the similarity.
enum class FeatureMode {
  kGlobal,       // U_g only
  kGlobalLocal,  // [U_g; U_l] without fusion
  kFused,        // SF([U_g; U_l])
};

std::string feature_mode_name(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& name);
std::string layout_name(DecoderLayout layout);
DecoderLayout parse_layout(const std::string& name);
std::string prompt_mode_name(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& name);

struct ModelConfig {
  BackboneConfig backbone;
  DecoderConfig decoder;
  FeatureMode features = FeatureMode::kFused;
  Aggregation aggregation = Aggregation::kMean;

  // Keeps the decoder's widths in line with the backbone and validates both.
  void sync();
};

struct ClassifierOutput {
  Tensor probs;     // [B x N_c]
  Tensor pos_sims;  // [B x N_c]
  Tensor neg_sims;  // [B x N_c], zeros for the positive-only layout
};

// Everything one forward pass produces, kept for the pairwise loss.
struct ForwardPass {
  ClassifierOutput out;
  Tensor positions;         // [B x P x D_vlp]
  Tensor positive_sequences;  // [N_c x L x D_embed] text-encoder inputs
};

class PspgModel {
 public:
  PspgModel() = default;
  // The backbone and the prompt components draw from separate streams so a
  // loaded backbone does not depend on the decoder configuration.
  PspgModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  const SpatialFusion& fusion() const { return fusion_; }
  const PromptGenerator& generator() const { return generator_; }

  // [B x P x D_vlp] positions for the configured feature mode.
  Tensor positions(const EncodedBatch& images) const;

  // Text features of the class-name token sequences: [N_c x D_vlp].
  Tensor class_features(const std::vector<TextTokens>& class_tokens) const;

  // Text-encoder inputs for one polarity: the prompt itself in full mode,
  // prompt followed by the class token embeddings in prefix mode.
  Tensor prompt_sequences(const Tensor& prompt, const std::vector<TextTokens>& class_tokens) const;

  ForwardPass forward(const EncodedBatch& images,
                      const std::vector<TextTokens>& class_tokens) const;

  // Raw images [B x D_raw] for any class set.
  ClassifierOutput predict(const Tensor& raw_images,
                           const std::vector<TextTokens>& class_tokens) const;

  ParamList params() const;         // backbone + fusion + decoder
  ParamList prompt_params() const;  // fusion + decoder, the phase-2 trainables

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  SpatialFusion fusion_;
  PromptGenerator generator_;
};

// Fixed positive/negative template tokens for one class.
struct TemplatePair {
  TextTokens positive;
  TextTokens negative;
};

// Dual fixed-template classifier scored through the same similarity and
// probability path, using unfused global + local positions.
ClassifierOutput template_predict(const Backbone& backbone, const Tensor& raw_images,
                                  const std::vector<TemplatePair>& templates,
                                  Aggregation mode);

// Raw images [B x D_raw] through one call, in chunks of `batch` rows; the
// rows of every chunk are predicted together.
Tensor predict_in_batches(const PspgModel& model, const Tensor& raw_images,
                          const std::vector<TextTokens>& class_tokens, std::size_t batch,
                          ClassifierOutput* detail = nullptr);

}  // namespace pspg
