#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pspg/fusion.hpp"
#include "pspg/gradcheck.hpp"

using namespace pspg;

namespace {

// Plain-loop reference for one image: rows are positions, global first.
std::vector<double> reference_fuse(const std::vector<std::vector<double>>& x,
                                   const double k[3]) {
  const std::size_t p = x.size();
  std::vector<double> avg(p), peak(p);
  for (std::size_t i = 0; i < p; ++i) {
    double s = 0.0;
    double m = x[i][0];
    for (double v : x[i]) {
      s += v;
      m = std::max(m, v);
    }
    avg[i] = s / double(x[i].size());
    peak[i] = m;
  }
  auto conv = [&](const std::vector<double>& d, std::size_t i) {
    const double left = i > 0 ? d[i - 1] : 0.0;
    const double right = i + 1 < p ? d[i + 1] : 0.0;
    return k[0] * left + k[1] * d[i] + k[2] * right;
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < p; ++i) {
    const double a = 1.0 / (1.0 + std::exp(-(conv(avg, i) + conv(peak, i))));
    for (double v : x[i]) out.push_back(a * v);
  }
  return out;
}

}  // namespace

TEST_CASE("zero kernel halves every feature") {
  const SpatialFusion sf;
  Rng rng(2);
  const Tensor g = Tensor::randn({1, 8}, rng, 1.0);
  const Tensor l = Tensor::randn({4, 8}, rng, 1.0);
  const Tensor out = sf.fuse(g, l);
  REQUIRE(out.shape() == Shape{5, 8});
  for (std::size_t c = 0; c < 8; ++c) CHECK(out[c] == 0.5 * g[c]);
  for (std::size_t i = 0; i < 32; ++i) CHECK(out[8 + i] == 0.5 * l[i]);
}

TEST_CASE("zero input stays zero for any kernel") {
  const SpatialFusion sf(Tensor::from({3}, {1.5, -2.0, 0.7}));
  const Tensor out = sf.fuse(Tensor::zeros({1, 6}), Tensor::zeros({4, 6}));
  CHECK(out.shape() == Shape{5, 6});
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("shape errors") {
  const SpatialFusion sf;
  CHECK_THROWS_AS(sf.fuse(Tensor::zeros({1, 6}), Tensor::zeros({4, 5})), DimensionError);
  CHECK_THROWS_AS(sf.fuse(Tensor::zeros({2, 6}), Tensor::zeros({4, 6})), DimensionError);
  CHECK_THROWS_AS(sf.fuse_batch(Tensor::zeros({2, 6}), Tensor::zeros({3, 4, 6})),
                  DimensionError);
  CHECK_THROWS_AS(SpatialFusion(Tensor::zeros({4})), ConfigError);
}

TEST_CASE("matches an independent reference and gates strictly inside (0,1)") {
  DtypeGuard f64(Dtype::kF64);
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const double k[3] = {rng.normal(), rng.normal(), rng.normal()};
    const SpatialFusion sf(Tensor::from({3}, {k[0], k[1], k[2]}, true));
    const std::size_t c = 1 + rng.below(6);
    const std::size_t d = 1 + rng.below(9);
    const Tensor g = Tensor::randn({1, d}, rng, 2.0);
    const Tensor l = Tensor::randn({c, d}, rng, 2.0);
    std::vector<std::vector<double>> rows(c + 1, std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) rows[0][j] = g[j];
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < d; ++j) rows[i + 1][j] = l[i * d + j];
    const std::vector<double> expect = reference_fuse(rows, k);
    const Tensor out = sf.fuse(g, l);
    REQUIRE(out.numel() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(out[i] - expect[i]) < 1e-6);

    const Tensor alpha = sf.attention(reshape(concat({g, l}, 0), {1, c + 1, d}));
    for (double a : alpha.data()) {
      CHECK(a > 0.0);
      CHECK(a < 1.0);
    }
  }
}

TEST_CASE("batched fusion matches per-image fusion") {
  const SpatialFusion sf(Tensor::from({3}, {0.3, -0.4, 0.9}));
  Rng rng(4);
  const Tensor g = Tensor::randn({3, 5}, rng, 1.0);
  const Tensor l = Tensor::randn({3, 4, 5}, rng, 1.0);
  const Tensor batched = sf.fuse_batch(g, l);
  REQUIRE(batched.shape() == Shape{3, 5, 5});
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor one = sf.fuse(reshape(select(g, 0, b), {1, 5}), select(l, 0, b));
    for (std::size_t i = 0; i < 25; ++i) CHECK(one[i] == batched[b * 25 + i]);
  }
}

TEST_CASE("kernel gradient passes grad_check and the module has 3 parameters") {
  const SpatialFusion sf(Tensor::from({3}, {0.2, -0.5, 0.8}, true));
  CHECK(param_count(sf.params()) == 3);
  CHECK(sf.params().front().name == "fusion.kernel");
  Rng rng(8);
  const Tensor g = Tensor::randn({2, 6}, rng, 1.0);
  const Tensor l = Tensor::randn({2, 4, 6}, rng, 1.0);
  const Tensor w = Tensor::randn({2, 5, 6}, rng, 1.0);
  auto loss = [&] { return sum(mul(sf.fuse_batch(g, l), w)); };
  CHECK(grad_check_param(loss, sf.kernel()) < 1e-4);
  CHECK(grad_check([&](const Tensor& x) { return sum(mul(sf.fuse_batch(x, l), w)); },
                   g) < 1e-4);
}
