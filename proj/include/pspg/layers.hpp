#pragma once

// Recurrent and attention layers shared by the text encoder and the prompt
// decoder. Row-vector convention throughout: inputs are [rows x features]
// and weights are [in x out].

#include <cstddef>
#include <string>
#include <vector>

#include "pspg/params.hpp"
#include "pspg/rng.hpp"
#include "pspg/tensor.hpp"

namespace pspg {

// z  = sigmoid(x Wz + h Uz + bz)
// r  = sigmoid(x Wr + h Ur + br)
// h~ = tanh(x Wh + (r * h) Uh + bh)
// h' = (1 - z) * h + z * h~
class GruCell {
 public:
  GruCell() = default;
  // Weights ~ N(0, stddev^2); biases start at zero.
  GruCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double stddev);

  Tensor step(const Tensor& input, const Tensor& hidden) const;

  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  Tensor w_z_, u_z_, b_z_;
  Tensor w_r_, u_r_, b_r_;
  Tensor w_h_, u_h_, b_h_;
};

// Multi-head scaled dot-product attention with bias-free q/k/v/out
// projections and no residual or normalization.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng, double stddev);

  // q = k = v = x, attending across rows. x: [n x dim].
  Tensor self_attend(const Tensor& x) const;

  // One query row per group attending over that group's memory.
  // queries: [n x dim], memory: [n x m x dim] -> [n x dim].
  Tensor cross_attend(const Tensor& queries, const Tensor& memory) const;

  // Same as cross_attend with memory already passed through the key and
  // value projections (both [n x m x dim]).
  Tensor cross_attend_projected(const Tensor& queries, const Tensor& keys,
                                const Tensor& values) const;

  // Memory shared by every query row, projected and split into heads once.
  struct SharedMemory {
    std::vector<Tensor> keys_t;  // per head [head_dim x m]
    std::vector<Tensor> values;  // per head [m x head_dim]
  };
  SharedMemory prepare_shared(const Tensor& memory) const;  // memory: [m x dim]

  // Equal to cross_attend with the memory repeated for every query row.
  Tensor cross_attend_shared(const Tensor& queries, const SharedMemory& memory) const;

  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  Tensor w_q_, w_k_, w_v_, w_o_;
};

}  // namespace pspg
