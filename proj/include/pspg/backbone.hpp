#pragma once

// Toy vision-language backbone: a patch-perceptron image encoder yielding
// global and per-patch features, and a single-layer GRU text encoder with an
// embedding-bypass entry point for pseudo-prompts.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pspg/layers.hpp"
#include "pspg/params.hpp"
#include "pspg/rng.hpp"
#include "pspg/tensor.hpp"

namespace pspg {

struct BackboneConfig {
  std::size_t raw_dim = 64;       // length of a raw image vector
  std::size_t local_count = 4;    // patches, one local feature each
  std::size_t joint_dim = 32;     // shared image/text feature space
  std::size_t embed_dim = 16;     // token embedding width
  std::size_t vocab_size = 32;
  std::size_t max_text_len = 40;  // positional table holds twice this
  double tau_init = 0.07;

  void validate() const;
  std::size_t patch_dim() const { return raw_dim / local_count; }
  std::size_t max_sequence_len() const { return 2 * max_text_len; }
};

struct EncodedImage {
  Tensor global;  // [1 x joint_dim]
  Tensor local;   // [local_count x joint_dim]
};

struct EncodedBatch {
  Tensor global;  // [B x joint_dim]
  Tensor local;   // [B x local_count x joint_dim]
};

using TextTokens = std::vector<std::uint32_t>;

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const BackboneConfig& cfg, Rng& rng);

  EncodedImage encode(const Tensor& raw) const;         // raw: [raw_dim]
  EncodedBatch encode_batch(const Tensor& raw) const;   // raw: [B x raw_dim]

  void collect(const std::string& prefix, ParamList& out) const;

 private:
  BackboneConfig cfg_;
  Tensor patch_w1_, patch_b1_, patch_w2_, patch_b2_, global_proj_;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const BackboneConfig& cfg, Rng& rng);

  // Token ids -> [len x embed_dim].
  Tensor embed(const TextTokens& tokens) const;

  // embed() followed by encode_embedded().
  Tensor encode(const TextTokens& tokens) const;

  // Embedding-bypass path: [len x embed_dim] -> [joint_dim].
  Tensor encode_embedded(const Tensor& embeddings) const;

  // [S x len x embed_dim] -> [S x joint_dim]. Row results are bitwise equal
  // to encoding each sequence alone.
  Tensor encode_embedded_batch(const Tensor& embeddings) const;

  // Sequences of mixed lengths, batched by length; rows keep input order.
  Tensor encode_many(const std::vector<Tensor>& sequences) const;
  Tensor encode_tokens_many(const std::vector<TextTokens>& texts) const;

  void collect(const std::string& prefix, ParamList& out) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Tensor token_embedding_, position_embedding_, proj_;
  GruCell gru_;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const ImageEncoder& image() const { return image_; }
  const TextEncoder& text() const { return text_; }

  // Learnable log of 1/tau; tau = exp(-logit_scale) stays positive.
  const Tensor& logit_scale() const { return logit_scale_; }
  Tensor inverse_temperature() const { return exp(logit_scale_); }
  double temperature() const;

  // Names are prefixed "backbone.".
  ParamList params() const;

 private:
  BackboneConfig cfg_;
  ImageEncoder image_;
  TextEncoder text_;
  Tensor logit_scale_;
};

// u.w / (|u||w|); zero-norm inputs are an error.
double cosine_sim(const Tensor& u, const Tensor& w);

// Symmetric InfoNCE over the [B x B] cosine-similarity matrix scaled by
// `inverse_temperature` (a one-element tensor). Pairs are matched by row.
Tensor contrastive_loss(const Tensor& image_global, const Tensor& text_features,
                        const Tensor& inverse_temperature);
Tensor contrastive_loss(const std::vector<EncodedImage>& images,
                        const Tensor& text_features, double tau);

}  // namespace pspg
