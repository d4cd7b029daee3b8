#pragma once

// Autoregressive prompt decoder. Each step runs
//   h'   = gru(t_prev, h_prev)
//   h    = self_attention(h')               across the class axis
//   ctx  = cross_attention(h, c')           over the batch's image features
//   o    = (h + ctx) W_feedback             fed back as the next t
// and the n outputs are projected to token-embedding width to form one
// pseudo-prompt per class.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "pspg/layers.hpp"
#include "pspg/params.hpp"
#include "pspg/tensor.hpp"

namespace pspg {

enum class PromptMode { kFull, kPrefix };
enum class DecoderLayout { kDual, kSingle, kPositiveOnly };

struct DecoderConfig {
  std::size_t length = 16;     // n, prompt vectors per class
  std::size_t hidden = 64;     // D_h
  std::size_t input_dim = 32;  // joint feature width
  std::size_t output_dim = 16; // token-embedding width
  std::size_t heads = 4;
  PromptMode mode = PromptMode::kFull;
  DecoderLayout layout = DecoderLayout::kDual;
  double init_std = 0.02;

  void validate() const;
};

enum class Polarity { kPositive, kNegative };

struct PseudoPrompt {
  Tensor vectors;  // [N_c x n x output_dim]
  Polarity polarity = Polarity::kPositive;
};

struct PromptPair {
  PseudoPrompt positive;
  std::optional<PseudoPrompt> negative;  // absent for the positive-only layout
};

struct DecoderState {
  Tensor hidden;    // [N_c x D_h], zeros at start
  Tensor previous;  // [N_c x input_dim], class text features at start
  Tensor context;   // [N_c x B x D_h], projected batch features per class
};

class PromptDecoder {
 public:
  PromptDecoder() = default;
  // `output_width` is output_dim for one polarity, 2*output_dim when a single
  // decoder emits both.
  PromptDecoder(const DecoderConfig& cfg, std::size_t output_width, Rng& rng);

  DecoderState initial_state(const Tensor& class_features, const Tensor& batch_global) const;

  Tensor gru_cell(const Tensor& previous, const Tensor& hidden) const;
  Tensor self_attention(const Tensor& hidden) const;
  Tensor cross_attention_context(const Tensor& hidden, const Tensor& context) const;

  // class_features: [N_c x input_dim], batch_global: [B x input_dim]
  // -> [N_c x n x output_width]
  Tensor generate(const Tensor& class_features, const Tensor& batch_global) const;

  void collect(const std::string& prefix, ParamList& out) const;

 private:
  void check_inputs(const Tensor& class_features, const Tensor& batch_global) const;

  DecoderConfig cfg_;
  std::size_t output_width_ = 0;
  GruCell gru_;
  MultiHeadAttention self_attn_;
  MultiHeadAttention cross_attn_;
  Tensor context_proj_;   // [input_dim x D_h]
  Tensor feedback_proj_;  // [D_h x input_dim]
  Tensor prompt_proj_;    // [input_dim x output_width]
};

// Positive/negative prompt generation for the configured layout.
class PromptGenerator {
 public:
  PromptGenerator() = default;
  PromptGenerator(const DecoderConfig& cfg, std::uint64_t seed);

  PromptPair generate(const Tensor& class_features, const Tensor& batch_global) const;

  const DecoderConfig& config() const { return cfg_; }

  // "decoder.pos.*" / "decoder.neg.*" for dual and positive-only layouts,
  // "decoder.shared.*" for the single-decoder layout.
  ParamList params() const;

 private:
  DecoderConfig cfg_;
  PromptDecoder positive_;
  PromptDecoder negative_;  // dual layout only
};

}  // namespace pspg
