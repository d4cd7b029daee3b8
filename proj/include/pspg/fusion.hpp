#pragma once

#include "pspg/params.hpp"
#include "pspg/tensor.hpp"

namespace pspg {

// Spatial attention over the concatenated [global; local] positions with a
// single 3-tap convolution kernel shared by the mean- and max-pooled
// descriptors:
//   alpha = sigmoid(conv(mean_k) + conv(max_k)),  out[k] = alpha_k * X[k]
class SpatialFusion {
 public:
  SpatialFusion();
  explicit SpatialFusion(const Tensor& kernel);

  // global: [1 x D], local: [C x D] -> [(C+1) x D], global row first.
  Tensor fuse(const Tensor& global, const Tensor& local) const;

  // Batched form. global: [B x D], local: [B x C x D] -> [B x (C+1) x D].
  Tensor fuse_batch(const Tensor& global, const Tensor& local) const;

  // Gating weights for positions X: [B x P x D] -> [B x P].
  Tensor attention(const Tensor& positions) const;

  const Tensor& kernel() const { return kernel_; }

  // Single entry "fusion.kernel".
  ParamList params() const;

 private:
  Tensor kernel_;
};

// [B x D] and [B x C x D] -> [B x (C+1) x D] with the global row first.
Tensor concat_positions(const Tensor& global, const Tensor& local);

}  // namespace pspg
