#include "pspg/layers.hpp"

#include <cmath>
#include <vector>

namespace pspg {

GruCell::GruCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double stddev)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  auto w = [&](std::size_t rows) { return Tensor::randn({rows, hidden_dim}, rng, stddev, true); };
  auto b = [&] { return Tensor::zeros({hidden_dim}, true); };
  w_z_ = w(input_dim);
  u_z_ = w(hidden_dim);
  b_z_ = b();
  w_r_ = w(input_dim);
  u_r_ = w(hidden_dim);
  b_r_ = b();
  w_h_ = w(input_dim);
  u_h_ = w(hidden_dim);
  b_h_ = b();
}

Tensor GruCell::step(const Tensor& input, const Tensor& hidden) const {
  if (input.rank() != 2 || hidden.rank() != 2 || input.dim(1) != input_dim_ ||
      hidden.dim(1) != hidden_dim_ || input.dim(0) != hidden.dim(0))
    throw DimensionError("GruCell::step: got input " + shape_str(input.shape()) +
                         " and hidden " + shape_str(hidden.shape()));
  const Tensor z = sigmoid(add(add(matmul(input, w_z_), matmul(hidden, u_z_)), b_z_));
  const Tensor r = sigmoid(add(add(matmul(input, w_r_), matmul(hidden, u_r_)), b_r_));
  const Tensor candidate =
      tanh(add(add(matmul(input, w_h_), matmul(mul(r, hidden), u_h_)), b_h_));
  const Tensor keep = add_scalar(scale(z, -1.0), 1.0);
  return add(mul(keep, hidden), mul(z, candidate));
}

void GruCell::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "w_z", w_z_});
  out.push_back({prefix + "u_z", u_z_});
  out.push_back({prefix + "b_z", b_z_});
  out.push_back({prefix + "w_r", w_r_});
  out.push_back({prefix + "u_r", u_r_});
  out.push_back({prefix + "b_r", b_r_});
  out.push_back({prefix + "w_h", w_h_});
  out.push_back({prefix + "u_h", u_h_});
  out.push_back({prefix + "b_h", b_h_});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng,
                                       double stddev)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention: dimension " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  w_q_ = Tensor::randn({dim, dim}, rng, stddev, true);
  w_k_ = Tensor::randn({dim, dim}, rng, stddev, true);
  w_v_ = Tensor::randn({dim, dim}, rng, stddev, true);
  w_o_ = Tensor::randn({dim, dim}, rng, stddev, true);
}

Tensor MultiHeadAttention::self_attend(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != dim_ || x.dim(0) == 0)
    throw DimensionError("self_attend: expected [n x " + std::to_string(dim_) + "], got " +
                         shape_str(x.shape()));
  const Tensor q = matmul(x, w_q_);
  const Tensor k = matmul(x, w_k_);
  const Tensor v = matmul(x, w_v_);
  const std::size_t head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = slice(q, 1, h * head_dim, head_dim);
    const Tensor kh = slice(k, 1, h * head_dim, head_dim);
    const Tensor vh = slice(v, 1, h * head_dim, head_dim);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh, 0, 1)), inv_sqrt), 1);
    heads.push_back(matmul(weights, vh));
  }
  return matmul(heads_ == 1 ? heads[0] : concat(heads, 1), w_o_);
}

Tensor MultiHeadAttention::cross_attend(const Tensor& queries, const Tensor& memory) const {
  if (memory.rank() != 3 || memory.dim(2) != dim_)
    throw DimensionError("cross_attend: memory must be [n x m x " + std::to_string(dim_) +
                         "], got " + shape_str(memory.shape()));
  const std::size_t n = memory.dim(0), m = memory.dim(1);
  if (m == 0) throw DimensionError("cross_attend: empty memory");
  const Tensor flat = reshape(memory, {n * m, dim_});
  const Tensor keys = reshape(matmul(flat, w_k_), {n, m, dim_});
  const Tensor values = reshape(matmul(flat, w_v_), {n, m, dim_});
  return cross_attend_projected(queries, keys, values);
}

Tensor MultiHeadAttention::cross_attend_projected(const Tensor& queries, const Tensor& keys,
                                                  const Tensor& values) const {
  if (queries.rank() != 2 || queries.dim(1) != dim_)
    throw DimensionError("cross_attend: queries must be [n x " + std::to_string(dim_) +
                         "], got " + shape_str(queries.shape()));
  if (keys.rank() != 3 || keys.shape() != values.shape() || keys.dim(0) != queries.dim(0) ||
      keys.dim(2) != dim_)
    throw DimensionError("cross_attend: keys " + shape_str(keys.shape()) +
                         " do not match queries " + shape_str(queries.shape()));
  const std::size_t n = keys.dim(0), m = keys.dim(1);
  if (m == 0) throw DimensionError("cross_attend: empty memory");
  const Tensor q = matmul(queries, w_q_);
  const std::size_t head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = reshape(slice(q, 1, h * head_dim, head_dim), {n, 1, head_dim});
    const Tensor kh = slice(keys, 2, h * head_dim, head_dim);
    const Tensor vh = slice(values, 2, h * head_dim, head_dim);
    const Tensor weights = softmax(scale(bmm(qh, transpose(kh, 1, 2)), inv_sqrt), 2);
    heads.push_back(reshape(bmm(weights, vh), {n, head_dim}));
  }
  return matmul(heads_ == 1 ? heads[0] : concat(heads, 1), w_o_);
}

MultiHeadAttention::SharedMemory MultiHeadAttention::prepare_shared(const Tensor& memory) const {
  if (memory.rank() != 2 || memory.dim(1) != dim_ || memory.dim(0) == 0)
    throw DimensionError("cross_attend: shared memory must be [m x " + std::to_string(dim_) +
                         "], got " + shape_str(memory.shape()));
  const Tensor keys = matmul(memory, w_k_);
  const Tensor values = matmul(memory, w_v_);
  const std::size_t head_dim = dim_ / heads_;
  SharedMemory out;
  for (std::size_t h = 0; h < heads_; ++h) {
    out.keys_t.push_back(transpose(slice(keys, 1, h * head_dim, head_dim), 0, 1));
    out.values.push_back(slice(values, 1, h * head_dim, head_dim));
  }
  return out;
}

Tensor MultiHeadAttention::cross_attend_shared(const Tensor& queries,
                                               const SharedMemory& memory) const {
  if (queries.rank() != 2 || queries.dim(1) != dim_)
    throw DimensionError("cross_attend: queries must be [n x " + std::to_string(dim_) +
                         "], got " + shape_str(queries.shape()));
  if (memory.keys_t.size() != heads_) throw DimensionError("cross_attend: memory not prepared");
  const Tensor q = matmul(queries, w_q_);
  const std::size_t head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = slice(q, 1, h * head_dim, head_dim);
    const Tensor weights = softmax(scale(matmul(qh, memory.keys_t[h]), inv_sqrt), 1);
    heads.push_back(matmul(weights, memory.values[h]));
  }
  return matmul(heads_ == 1 ? heads[0] : concat(heads, 1), w_o_);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "w_q", w_q_});
  out.push_back({prefix + "w_k", w_k_});
  out.push_back({prefix + "w_v", w_v_});
  out.push_back({prefix + "w_o", w_o_});
}

}  // namespace pspg
