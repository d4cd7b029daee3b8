#pragma once

// Training objectives: asymmetric loss on per-class probabilities, the
// batch-level pairwise co-occurrence loss and its per-sample variant.

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "pspg/backbone.hpp"
#include "pspg/tensor.hpp"
#include "pspg/zeroshot.hpp"

namespace pspg {

// Row-major B x N_c matrix over {1 positive, 0 negative, -1 unknown}.
struct LabelBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> values;

  LabelBatch() = default;
  LabelBatch(std::size_t rows, std::size_t cols, std::vector<std::int8_t> values);

  int at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  LabelBatch select_rows(const std::vector<std::size_t>& rows) const;
  LabelBatch select_cols(const std::vector<std::size_t>& cols) const;
};

struct LossConfig {
  double gamma_pos = 1.0;
  double gamma_neg = 2.0;
  double clip = 0.05;
  bool spcl_enabled = true;
  bool pcl_variant = false;

  void validate() const;
};

// Binarized strict upper triangle of A^T A, pairs (i<j) in row-major order.
struct CooccurrenceTarget {
  std::size_t classes = 0;
  std::vector<std::uint8_t> q;
};

constexpr double kProbEpsilon = 1e-7;

// Number of probabilities pushed into [eps, 1-eps] by the losses so far.
std::size_t probability_clamp_count();
void reset_probability_clamp_count();

// (i, j) with i < j in lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> class_pairs(std::size_t classes);

// Omega = A^T A with unknown entries counted as 0; N_c x N_c row-major.
std::vector<std::int64_t> cooccurrence_matrix(const LabelBatch& labels);
CooccurrenceTarget cooccurrence_targets(const LabelBatch& labels);

// probs: [B x N_c]. Mean over known entries; zero when nothing is known.
Tensor asl_loss(const Tensor& probs, const LabelBatch& labels, const LossConfig& cfg);

// Per-class prompt sequences [N_c x L x D_embed] -> encoded pair features
// [C(N_c,2) x D_vlp] from the concatenated 2L-long sequences. Fewer than
// two classes yields an undefined tensor.
Tensor pairwise_prompt_features(const Tensor& sequences, const TextEncoder& text);

// positions [B x P x D], pair features [C(N_c,2) x D].
Tensor spcl_loss(const Tensor& positions, const Tensor& pair_features,
                 const CooccurrenceTarget& target, const Tensor& inverse_temperature,
                 Aggregation mode);
Tensor pcl_loss(const Tensor& positions, const Tensor& pair_features, const LabelBatch& labels,
                const Tensor& inverse_temperature, Aggregation mode);

// L_asl + L_spcl; an undefined `spcl` means the pairwise term is disabled.
Tensor total_loss(const Tensor& asl, const Tensor& spcl);

}  // namespace pspg
