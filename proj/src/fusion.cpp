#include "pspg/fusion.hpp"

namespace pspg {

SpatialFusion::SpatialFusion() : kernel_(Tensor::zeros({3}, true)) {}

SpatialFusion::SpatialFusion(const Tensor& kernel) : kernel_(kernel) {
  if (kernel.numel() != 3) throw ConfigError("fusion: kernel must have exactly 3 taps");
}

Tensor concat_positions(const Tensor& global, const Tensor& local) {
  if (global.rank() != 2 || local.rank() != 3 || global.dim(0) != local.dim(0) ||
      global.dim(1) != local.dim(2))
    throw DimensionError("fusion: global " + shape_str(global.shape()) +
                         " does not match local " + shape_str(local.shape()));
  const Tensor g = reshape(global, {global.dim(0), 1, global.dim(1)});
  return concat({g, local}, 1);
}

Tensor SpatialFusion::attention(const Tensor& positions) const {
  if (positions.rank() != 3) throw DimensionError("fusion: positions must be [B x P x D]");
  const Tensor avg = mean(positions, 2);
  const Tensor peak = max(positions, 2);
  return sigmoid(add(conv1d3(avg, kernel_), conv1d3(peak, kernel_)));
}

Tensor SpatialFusion::fuse_batch(const Tensor& global, const Tensor& local) const {
  const Tensor x = concat_positions(global, local);
  return mul_prefix(x, attention(x));
}

Tensor SpatialFusion::fuse(const Tensor& global, const Tensor& local) const {
  if (global.rank() != 2 || global.dim(0) != 1 || local.rank() != 2 ||
      local.dim(1) != global.dim(1))
    throw DimensionError("fusion: expected [1 x D] and [C x D], got " +
                         shape_str(global.shape()) + " and " + shape_str(local.shape()));
  const Tensor out =
      fuse_batch(global, reshape(local, {1, local.dim(0), local.dim(1)}));
  return reshape(out, {local.dim(0) + 1, local.dim(1)});
}

ParamList SpatialFusion::params() const { return {{"fusion.kernel", kernel_}}; }

}  // namespace pspg
