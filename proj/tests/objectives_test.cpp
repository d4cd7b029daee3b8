#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pspg/gradcheck.hpp"
#include "pspg/objectives.hpp"

using namespace pspg;

namespace {

LabelBatch random_labels(Rng& rng, std::size_t rows, std::size_t cols, double unknown = 0.2) {
  std::vector<std::int8_t> v(rows * cols);
  for (auto& x : v) {
    const double u = rng.uniform();
    x = u < unknown ? -1 : (u < unknown + (1.0 - unknown) * 0.4 ? 1 : 0);
  }
  return LabelBatch(rows, cols, v);
}

Tensor random_probs(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = 0.02 + 0.96 * rng.uniform();
  return Tensor::from({rows, cols}, v);
}

// Independent masked cross-entropy.
double masked_bce(const Tensor& p, const LabelBatch& y) {
  double total = 0.0;
  std::size_t known = 0;
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    if (y.values[i] < 0) continue;
    ++known;
    total += y.values[i] == 1 ? -std::log(p[i]) : -std::log(1.0 - p[i]);
  }
  return known ? total / double(known) : 0.0;
}

TextEncoder small_text(std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.raw_dim = 8;
  cfg.local_count = 2;
  cfg.joint_dim = 6;
  cfg.embed_dim = 4;
  cfg.vocab_size = 10;
  cfg.max_text_len = 6;
  return Backbone(cfg, seed).text();
}

}  // namespace

TEST_CASE("LabelBatch validation") {
  CHECK_THROWS_AS(LabelBatch(1, 2, {1, 2}), ConfigError);
  CHECK_THROWS_AS(LabelBatch(1, 2, {1}), DimensionError);
  const LabelBatch y(2, 3, {1, 0, -1, 0, 1, 1});
  const LabelBatch cols = y.select_cols({2, 0});
  CHECK(cols.values == std::vector<std::int8_t>{-1, 1, 1, 0});
  CHECK(y.select_rows({1}).values == std::vector<std::int8_t>{0, 1, 1});
}

TEST_CASE("asl examples") {
  DtypeGuard f64(Dtype::kF64);
  LossConfig bce;
  bce.gamma_pos = bce.gamma_neg = 0.0;
  bce.clip = 0.0;
  CHECK(asl_loss(Tensor::from({1, 1}, {0.5}), LabelBatch(1, 1, {1}), bce).item() ==
        doctest::Approx(0.69315).epsilon(1e-5));

  const LossConfig def;
  CHECK(asl_loss(Tensor::from({1, 1}, {0.03}), LabelBatch(1, 1, {0}), def).item() == 0.0);
  CHECK(std::abs(asl_loss(Tensor::from({1, 1}, {0.9}), LabelBatch(1, 1, {1}), def).item() -
                 0.010536) < 1e-5);
  CHECK(asl_loss(Tensor::from({1, 2}, {0.3, 0.7}), LabelBatch(1, 2, {-1, -1}), def).item() == 0.0);
  CHECK_THROWS_AS(asl_loss(Tensor::from({1, 2}, {0.3, 0.7}), LabelBatch(1, 1, {1}), def),
                  DimensionError);

  LossConfig bad;
  bad.clip = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.gamma_neg = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("asl reduces to masked cross-entropy") {
  DtypeGuard f64(Dtype::kF64);
  LossConfig bce;
  bce.gamma_pos = bce.gamma_neg = 0.0;
  bce.clip = 0.0;
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(8), c = 1 + rng.below(6);
    const Tensor p = random_probs(rng, b, c);
    const LabelBatch y = random_labels(rng, b, c);
    CHECK(std::abs(asl_loss(p, y, bce).item() - masked_bce(p, y)) < 1e-12);
  }
}

TEST_CASE("asl ignores unknown entries") {
  Rng rng(4);
  const LossConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = random_probs(rng, 5, 4);
    const LabelBatch y = random_labels(rng, 5, 4, 0.4);
    std::vector<double> changed(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < changed.size(); ++i)
      if (y.values[i] < 0) changed[i] = 1.0 - changed[i];
    const double a = asl_loss(p, y, cfg).item();
    const double b = asl_loss(Tensor::from({5, 4}, changed), y, cfg).item();
    CHECK(a == b);

    const Tensor leaf = Tensor::from({5, 4}, std::vector<double>(p.data().begin(), p.data().end()), true);
    asl_loss(leaf, y, cfg).backward();
    for (std::size_t i = 0; i < y.values.size(); ++i)
      if (y.values[i] < 0) CHECK(leaf.grad()[i] == 0.0);
  }
}

TEST_CASE("asl clamps out-of-range probabilities and counts them") {
  reset_probability_clamp_count();
  const Tensor p = Tensor::from({1, 3}, {0.0, 1.0, 0.5});
  const double v = asl_loss(p, LabelBatch(1, 3, {1, 0, 1}), LossConfig{}).item();
  CHECK(std::isfinite(v));
  CHECK(probability_clamp_count() == 2);
  reset_probability_clamp_count();
  CHECK(probability_clamp_count() == 0);
}

TEST_CASE("cooccurrence examples") {
  const LabelBatch a(2, 3, {1, 1, 0, 0, 1, 1});
  CHECK(cooccurrence_matrix(a) == std::vector<std::int64_t>{1, 1, 0, 1, 2, 1, 0, 1, 1});
  CHECK(cooccurrence_targets(a).q == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(cooccurrence_targets(LabelBatch(3, 4, std::vector<std::int8_t>(12, 0))).q ==
        std::vector<std::uint8_t>(6, 0));
  CHECK(cooccurrence_targets(LabelBatch(1, 4, std::vector<std::int8_t>(4, 1))).q ==
        std::vector<std::uint8_t>(6, 1));
  CHECK(cooccurrence_targets(LabelBatch(2, 1, {1, 1})).q.empty());

  const auto pairs = class_pairs(3);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(pairs[1] == std::pair<std::size_t, std::size_t>{0, 2});
  CHECK(pairs[2] == std::pair<std::size_t, std::size_t>{1, 2});
}

TEST_CASE("cooccurrence matrix symmetry and diagonal") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(8), c = 1 + rng.below(6);
    const LabelBatch y = random_labels(rng, b, c);
    const auto omega = cooccurrence_matrix(y);
    for (std::size_t i = 0; i < c; ++i) {
      std::int64_t positives = 0;
      for (std::size_t r = 0; r < b; ++r) positives += y.at(r, i) == 1;
      CHECK(omega[i * c + i] == positives);
      for (std::size_t j = 0; j < c; ++j) CHECK(omega[i * c + j] == omega[j * c + i]);
    }
  }
}

TEST_CASE("pairwise prompt features") {
  const TextEncoder text = small_text(6);
  Rng rng(7);
  const Tensor seq = Tensor::randn({3, 2, 4}, rng, 1.0);
  const Tensor feats = pairwise_prompt_features(seq, text);
  REQUIRE(feats.shape() == Shape{3, 6});
  const auto pairs = class_pairs(3);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Tensor joined = concat({select(seq, 0, pairs[k].first), select(seq, 0, pairs[k].second)}, 0);
    const Tensor expect = text.encode_embedded(joined);
    const Tensor row = select(feats, 0, k);
    CHECK(std::memcmp(row.data().data(), expect.data().data(), 6 * sizeof(double)) == 0);
  }

  const Tensor same = stack({select(seq, 0, 0), select(seq, 0, 0)}, 0);
  const Tensor doubled = pairwise_prompt_features(same, text);
  const Tensor expect = text.encode_embedded(concat({select(seq, 0, 0), select(seq, 0, 0)}, 0));
  CHECK(std::memcmp(doubled.data().data(), expect.data().data(), 6 * sizeof(double)) == 0);

  CHECK_FALSE(pairwise_prompt_features(Tensor::randn({1, 2, 4}, rng, 1.0), text).defined());
  CHECK_NOTHROW(pairwise_prompt_features(Tensor::randn({3, 6, 4}, rng, 1.0), text));
  CHECK_THROWS_AS(pairwise_prompt_features(Tensor::randn({3, 7, 4}, rng, 1.0), text),
                  DimensionError);
}

TEST_CASE("spcl examples") {
  DtypeGuard f64(Dtype::kF64);
  // Orthogonal position and pair feature: cosine 0, probability 0.5.
  const Tensor positions = Tensor::from({1, 1, 2}, {1, 0});
  const Tensor pair = Tensor::from({1, 2}, {0, 1});
  CooccurrenceTarget q{2, {1}};
  CHECK(spcl_loss(positions, pair, q, Tensor::scalar(1.0), Aggregation::kMean).item() ==
        doctest::Approx(0.69315).epsilon(1e-5));

  // Confident correct negative: loss approaches 0.
  const Tensor opposite = Tensor::from({1, 2}, {-1, 0});
  q.q = {0};
  const double near_zero =
      spcl_loss(positions, opposite, q, Tensor::scalar(30.0), Aggregation::kMean).item();
  CHECK(near_zero >= 0.0);
  // Probability sits at the clamp floor, so the loss is -ln(1 - eps).
  CHECK(near_zero == doctest::Approx(-std::log1p(-kProbEpsilon)).epsilon(1e-9));

  CHECK(spcl_loss(positions, Tensor(), CooccurrenceTarget{}, Tensor::scalar(1.0),
                  Aggregation::kMean).item() == 0.0);
  CHECK_THROWS_AS(spcl_loss(positions, pair, CooccurrenceTarget{3, {1, 0, 1}}, Tensor::scalar(1.0),
                            Aggregation::kMean),
                  DimensionError);
}

TEST_CASE("spcl is invariant to batch order and non-negative") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor positions = Tensor::randn({5, 3, 6}, rng, 1.0);
    const Tensor pairs = Tensor::randn({6, 6}, rng, 1.0);
    const LabelBatch y = random_labels(rng, 5, 4);
    const CooccurrenceTarget q = cooccurrence_targets(y);
    const double a = spcl_loss(positions, pairs, q, Tensor::scalar(5.0), Aggregation::kMean).item();
    const std::vector<std::size_t> perm = {4, 2, 0, 1, 3};
    const double b = spcl_loss(index_select(positions, perm), pairs, q, Tensor::scalar(5.0),
                               Aggregation::kMean).item();
    CHECK(a == b);
    CHECK(a >= 0.0);
  }
}

TEST_CASE("pcl matches spcl at batch size one and a per-sample oracle") {
  DtypeGuard f64(Dtype::kF64);
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.below(4);
    const std::size_t np = c * (c - 1) / 2;
    const Tensor positions = Tensor::randn({1, 3, 5}, rng, 1.0);
    const Tensor pairs = Tensor::randn({np, 5}, rng, 1.0);
    const LabelBatch y = random_labels(rng, 1, c);
    const Tensor inv = Tensor::scalar(1.0 + 9.0 * rng.uniform());
    CHECK(pcl_loss(positions, pairs, y, inv, Aggregation::kMean).item() ==
          spcl_loss(positions, pairs, cooccurrence_targets(y), inv, Aggregation::kMean).item());
  }

  const Tensor positions = Tensor::randn({4, 3, 5}, rng, 1.0);
  const Tensor pairs = Tensor::randn({6, 5}, rng, 1.0);
  const LabelBatch y = random_labels(rng, 4, 4);
  const double inv = 3.0;
  double oracle = 0.0;
  const auto cp = class_pairs(4);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t m = 0; m < 6; ++m) {
      const double s = class_similarity(select(positions, 0, n), select(pairs, 0, m), Aggregation::kMean);
      const double p = 1.0 / (1.0 + std::exp(-s * inv));
      const double t = y.at(n, cp[m].first) == 1 && y.at(n, cp[m].second) == 1 ? 1.0 : 0.0;
      oracle -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
  oracle /= 24.0;
  CHECK(std::abs(pcl_loss(positions, pairs, y, Tensor::scalar(inv), Aggregation::kMean).item() -
                 oracle) < 1e-6);

  const LabelBatch none(1, 3, {0, -1, 0});
  const Tensor p1 = Tensor::randn({1, 2, 5}, rng, 1.0);
  const Tensor f1 = Tensor::randn({3, 5}, rng, 1.0);
  double all_negative = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    const double s = class_similarity(select(p1, 0, 0), select(f1, 0, m), Aggregation::kMean);
    all_negative -= std::log(1.0 - 1.0 / (1.0 + std::exp(-s)));
  }
  CHECK(std::abs(pcl_loss(p1, f1, none, Tensor::scalar(1.0), Aggregation::kMean).item() -
                 all_negative / 3.0) < 1e-9);
}

TEST_CASE("total loss") {
  CHECK(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.25)).item() == 0.75);
  CHECK(total_loss(Tensor::scalar(0.5), Tensor()).item() == 0.5);
}

TEST_CASE("loss gradients pass grad_check") {
  Rng rng(10);
  const LabelBatch y = random_labels(rng, 4, 3, 0.25);
  const LossConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor p = random_probs(rng, 4, 3);
    CHECK(grad_check([&](const Tensor& x) { return asl_loss(x, y, cfg); }, p) < 1e-4);
  }
  const Tensor positions = Tensor::randn({4, 3, 5}, rng, 1.0);
  const Tensor pairs = Tensor::randn({3, 5}, rng, 1.0);
  const CooccurrenceTarget q = cooccurrence_targets(y);
  const Tensor inv = Tensor::scalar(2.0);
  CHECK(grad_check([&](const Tensor& x) {
          return spcl_loss(x, pairs, q, inv, Aggregation::kMean);
        }, positions) < 1e-4);
  CHECK(grad_check([&](const Tensor& x) {
          return spcl_loss(positions, x, q, inv, Aggregation::kMean);
        }, pairs) < 1e-4);
  CHECK(grad_check([&](const Tensor& x) {
          return pcl_loss(positions, x, y, inv, Aggregation::kMax);
        }, pairs) < 1e-4);
  CHECK(grad_check([&](const Tensor& x) {
          return spcl_loss(positions, pairs, q, x, Aggregation::kMean);
        }, Tensor::from({1}, {2.0})) < 1e-4);
}
