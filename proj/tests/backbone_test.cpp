#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pspg/backbone.hpp"
#include "pspg/gradcheck.hpp"

using namespace pspg;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.raw_dim = 32;
  cfg.local_count = 4;
  cfg.joint_dim = 16;
  cfg.embed_dim = 8;
  cfg.vocab_size = 12;
  cfg.max_text_len = 6;
  return cfg;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

void zero_params(const ParamList& params, const std::string& prefix) {
  for (const auto& p : params)
    if (p.name.rfind(prefix, 0) == 0)
      const_cast<Tensor&>(p.tensor).assign(std::vector<double>(p.tensor.numel(), 0.0));
}

// Weighted sum with fixed random weights keeps every gradient entry O(1).
Tensor project(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, Tensor::randn(x.shape(), rng, 1.0)));
}

}  // namespace

TEST_CASE("config validation") {
  BackboneConfig cfg;
  cfg.raw_dim = 30;
  cfg.local_count = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BackboneConfig{};
  cfg.tau_init = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BackboneConfig{};
  cfg.joint_dim = 0;
  CHECK_THROWS_AS(Backbone(cfg, 1), ConfigError);
}

TEST_CASE("encode_image shapes and zero propagation") {
  const Backbone bb(small_config(), 7);
  const EncodedImage enc = bb.image().encode(Tensor::zeros({32}));
  CHECK(enc.global.shape() == Shape{1, 16});
  CHECK(enc.local.shape() == Shape{4, 16});
  for (double v : enc.global.data()) CHECK(v == 0.0);
  for (double v : enc.local.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(bb.image().encode(Tensor::zeros({31})), DimensionError);
  CHECK_THROWS_AS(bb.image().encode_batch(Tensor::zeros({2, 33})), DimensionError);
}

TEST_CASE("encode_image patch permutation") {
  const Backbone bb(small_config(), 11);
  Rng rng(5);
  const Tensor x = Tensor::randn({32}, rng, 1.0);
  std::vector<double> swapped(x.data().begin(), x.data().end());
  // Patches are 8 wide; swap patch 0 and patch 2.
  for (std::size_t i = 0; i < 8; ++i) std::swap(swapped[i], swapped[16 + i]);
  const EncodedImage a = bb.image().encode(x);
  const EncodedImage b = bb.image().encode(Tensor::from({32}, swapped));
  const std::size_t order[4] = {2, 1, 0, 3};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 16; ++c) CHECK(b.local[r * 16 + c] == a.local[order[r] * 16 + c]);
  for (std::size_t c = 0; c < 16; ++c) CHECK(b.global[c] == doctest::Approx(a.global[c]).epsilon(1e-6));
}

TEST_CASE("encode_image batch rows match single encodes") {
  const Backbone bb(small_config(), 3);
  Rng rng(9);
  const Tensor batch = Tensor::randn({3, 32}, rng, 1.0);
  const EncodedBatch enc = bb.image().encode_batch(batch);
  for (std::size_t i = 0; i < 3; ++i) {
    const EncodedImage one = bb.image().encode(select(batch, 0, i));
    CHECK(bitwise_equal(one.global, reshape(select(enc.global, 0, i), {1, 16})));
    CHECK(bitwise_equal(one.local, select(enc.local, 0, i)));
  }
}

TEST_CASE("encode_text bypass equivalence") {
  const Backbone bb(small_config(), 21);
  const TextEncoder& text = bb.text();
  const std::vector<TextTokens> samples = {{3}, {1, 2}, {0, 11, 5, 7}, {4, 4, 4, 4, 4, 4}};
  for (const auto& t : samples) {
    const Tensor full = text.encode(t);
    CHECK(full.shape() == Shape{16});
    CHECK(bitwise_equal(full, text.encode_embedded(text.embed(t))));
  }
  CHECK_FALSE(bitwise_equal(text.encode({1, 2}), text.encode({2, 1})));
  CHECK_FALSE(bitwise_equal(text.encode({5, 6}), text.encode({5, 7})));
}

TEST_CASE("encode_text errors and length bounds") {
  const Backbone bb(small_config(), 2);
  const TextEncoder& text = bb.text();
  CHECK_THROWS_AS(text.encode({12}), DimensionError);
  CHECK_THROWS_AS(text.encode({}), DimensionError);
  CHECK_NOTHROW(text.encode_embedded(Tensor::zeros({6, 8})));
  CHECK_NOTHROW(text.encode_embedded(Tensor::zeros({12, 8})));
  CHECK_THROWS_AS(text.encode_embedded(Tensor::zeros({13, 8})), DimensionError);
  CHECK_THROWS_AS(text.encode_embedded(Tensor::zeros({0, 8})), DimensionError);
  CHECK_THROWS_AS(text.encode_embedded(Tensor::zeros({3, 7})), DimensionError);
}

TEST_CASE("encode_text_embedded zero propagation") {
  const Backbone bb(small_config(), 4);
  zero_params(bb.params(), "backbone.text.");
  const Tensor out = bb.text().encode_embedded(Tensor::zeros({5, 8}));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("encode_many keeps order and matches single encodes") {
  const Backbone bb(small_config(), 8);
  const TextEncoder& text = bb.text();
  const std::vector<TextTokens> texts = {{1, 2, 3}, {4}, {5, 6, 7}, {8, 9}, {10}};
  const Tensor many = text.encode_tokens_many(texts);
  REQUIRE(many.shape() == Shape{5, 16});
  for (std::size_t i = 0; i < texts.size(); ++i)
    CHECK(bitwise_equal(select(many, 0, i), text.encode(texts[i])));
}

TEST_CASE("cosine_sim examples and properties") {
  CHECK(cosine_sim(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1})) == 0.0);
  CHECK(cosine_sim(Tensor::from({2}, {3, 4}), Tensor::from({2}, {3, 4})) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(cosine_sim(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 0})) - 0.70711) <
        1e-5);
  CHECK_THROWS_AS(cosine_sim(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 0})),
                  NumericError);
  CHECK_THROWS_AS(cosine_sim(Tensor::from({2}, {1, 0}), Tensor::from({3}, {1, 0, 0})),
                  DimensionError);

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor u = Tensor::randn({9}, rng, 1.0);
    const Tensor w = Tensor::randn({9}, rng, 1.0);
    const double s = cosine_sim(u, w);
    CHECK(std::abs(cosine_sim(u, u) - 1.0) < 1e-6);
    CHECK(s == cosine_sim(w, u));
    CHECK(std::abs(s) <= 1.0 + 1e-6);
    const double alpha = 0.1 + 5.0 * rng.uniform();
    CHECK(std::abs(cosine_sim(scale(u, alpha), w) - s) < 1e-6);
  }
}

TEST_CASE("contrastive_loss examples") {
  Rng rng(1);
  const Tensor one = Tensor::randn({1, 6}, rng, 1.0);
  const Tensor other = Tensor::randn({1, 6}, rng, 1.0);
  CHECK(contrastive_loss(one, other, Tensor::scalar(14.0)).item() == 0.0);

  DtypeGuard f64(Dtype::kF64);
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double expected = std::log(1.0 + std::exp(-1.0));
  CHECK(contrastive_loss(eye, eye, Tensor::scalar(1.0)).item() ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(expected - 0.31326) < 1e-5);

  const std::vector<EncodedImage> images = {
      {Tensor::from({1, 2}, {1, 0}), Tensor::zeros({1, 2})},
      {Tensor::from({1, 2}, {0, 1}), Tensor::zeros({1, 2})}};
  CHECK(contrastive_loss(images, eye, 1.0).item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(contrastive_loss(images, eye, 0.0), ConfigError);
  CHECK_THROWS_AS(contrastive_loss(eye, Tensor::from({2, 2}, {0, 0, 0, 1}), Tensor::scalar(1.0)),
                  NumericError);
  CHECK_THROWS_AS(contrastive_loss(eye, Tensor::zeros({3, 2}), Tensor::scalar(1.0)),
                  DimensionError);
}

TEST_CASE("contrastive_loss is non-negative and decreases after one step") {
  const BackboneConfig cfg = small_config();
  const Backbone bb(cfg, 31);
  Rng rng(77);
  const Tensor images = Tensor::randn({6, 32}, rng, 1.0);
  std::vector<TextTokens> texts;
  for (std::size_t i = 0; i < 6; ++i) texts.push_back({std::uint32_t(i), std::uint32_t(i + 3)});

  auto loss_fn = [&] {
    return contrastive_loss(bb.image().encode_batch(images).global,
                            bb.text().encode_tokens_many(texts), bb.inverse_temperature());
  };
  const ParamList params = bb.params();
  zero_grads(params);
  const Tensor before = loss_fn();
  CHECK(before.item() >= 0.0);
  before.backward();
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    std::vector<double> next(p.tensor.data().begin(), p.tensor.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= 1e-2 * p.tensor.grad()[i];
    const_cast<Tensor&>(p.tensor).assign(next);
  }
  CHECK(loss_fn().item() < before.item());
}

TEST_CASE("encoder gradients pass grad_check") {
  const BackboneConfig cfg = small_config();
  const Backbone bb(cfg, 13);
  Rng rng(3);
  const Tensor images = Tensor::randn({3, 32}, rng, 1.0);
  const std::vector<TextTokens> texts = {{1, 2}, {3, 4, 5}, {6}};

  auto image_loss = [&] {
    const EncodedBatch enc = bb.image().encode_batch(images);
    return add(project(enc.global, 1), project(enc.local, 2));
  };
  auto text_loss = [&] { return project(bb.text().encode_tokens_many(texts), 3); };
  auto joint_loss = [&] {
    return contrastive_loss(bb.image().encode_batch(images).global,
                            bb.text().encode_tokens_many(texts), bb.inverse_temperature());
  };

  for (const auto& p : bb.params()) {
    CAPTURE(p.name);
    double err = 0.0;
    if (p.name.rfind("backbone.image.", 0) == 0)
      err = grad_check_param(image_loss, p.tensor);
    else if (p.name.rfind("backbone.text.", 0) == 0)
      err = grad_check_param(text_loss, p.tensor);
    else
      err = grad_check_param(joint_loss, p.tensor);
    CHECK(err < 1e-4);
  }

  // Gradient with respect to the bypass embeddings.
  const Tensor e = Tensor::randn({4, 8}, rng, 1.0);
  CHECK(grad_check([&](const Tensor& x) { return project(bb.text().encode_embedded(x), 4); }, e) <
        1e-4);
}

TEST_CASE("backbone params and temperature") {
  const Backbone bb(small_config(), 1);
  const ParamList params = bb.params();
  REQUIRE(find_param(params, "backbone.logit_scale") != nullptr);
  CHECK(bb.temperature() == doctest::Approx(0.07).epsilon(1e-6));
  CHECK(find_param(params, "backbone.text.token_embedding")->shape() == Shape{12, 8});
  CHECK(find_param(params, "backbone.text.position_embedding")->shape() == Shape{12, 8});
  const Backbone again(small_config(), 1);
  const ParamList other = again.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(bitwise_equal(params[i].tensor, other[i].tensor));
}
