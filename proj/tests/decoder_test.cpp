#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pspg/decoder.hpp"
#include "pspg/gradcheck.hpp"

using namespace pspg;

namespace {

DecoderConfig small_config() {
  DecoderConfig cfg;
  cfg.length = 4;
  cfg.hidden = 8;
  cfg.input_dim = 6;
  cfg.output_dim = 5;
  cfg.heads = 2;
  return cfg;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void fill(const ParamList& params, const std::string& prefix, double value) {
  for (const auto& p : params)
    if (p.name.rfind(prefix, 0) == 0)
      const_cast<Tensor&>(p.tensor).assign(std::vector<double>(p.tensor.numel(), value));
}

const Tensor& param(const ParamList& params, const std::string& name) {
  const Tensor* t = find_param(params, name);
  REQUIRE(t != nullptr);
  return *t;
}

Tensor project(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, Tensor::randn(x.shape(), rng, 1.0)));
}

}  // namespace

TEST_CASE("config validation") {
  DecoderConfig cfg = small_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(PromptGenerator(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.length = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("gru_cell at zero weights") {
  const DecoderConfig cfg = small_config();
  Rng rng(1);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  ParamList params;
  dec.collect("d.", params);
  fill(params, "d.gru.", 0.0);
  Rng data(2);
  const Tensor t = Tensor::randn({3, 6}, data, 1.0);
  const Tensor h = Tensor::randn({3, 8}, data, 1.0);
  const Tensor out = dec.gru_cell(t, h);
  for (std::size_t i = 0; i < h.numel(); ++i) CHECK(out[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-7));
  const Tensor from_zero = dec.gru_cell(t, Tensor::zeros({3, 8}));
  for (double v : from_zero.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(dec.gru_cell(t, Tensor::zeros({2, 8})), DimensionError);
  CHECK_THROWS_AS(dec.gru_cell(Tensor::zeros({3, 5}), h), DimensionError);
}

TEST_CASE("gru_cell parameters pass grad_check") {
  const DecoderConfig cfg = small_config();
  Rng rng(3);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  ParamList params;
  dec.collect("d.", params);
  Rng init(4);
  for (const auto& p : params)
    if (p.name.rfind("d.gru.", 0) == 0)
      const_cast<Tensor&>(p.tensor).assign(Tensor::randn(p.tensor.shape(), init, 0.5).data());
  Rng data(5);
  const Tensor t = Tensor::randn({3, 6}, data, 1.0);
  const Tensor h = Tensor::randn({3, 8}, data, 1.0);
  for (const auto& p : params) {
    if (p.name.rfind("d.gru.", 0) != 0) continue;
    CAPTURE(p.name);
    CHECK(grad_check_param([&] { return project(dec.gru_cell(t, h), 6); }, p.tensor) < 1e-4);
  }
}

TEST_CASE("self_attention examples") {
  const DecoderConfig cfg = small_config();
  Rng rng(7);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  ParamList params;
  dec.collect("d.", params);
  fill(params, "d.", 0.0);  // start clean; set only what each case needs
  Rng init(8);
  for (const char* name : {"d.self_attn.w_q", "d.self_attn.w_k", "d.self_attn.w_v", "d.self_attn.w_o"})
    const_cast<Tensor&>(param(params, name)).assign(Tensor::randn({8, 8}, init, 0.5).data());

  SUBCASE("single class attends only to itself") {
    DtypeGuard f64(Dtype::kF64);
    Rng data(9);
    const Tensor h = Tensor::randn({1, 8}, data, 1.0);
    const Tensor expect =
        matmul(matmul(h, param(params, "d.self_attn.w_v")), param(params, "d.self_attn.w_o"));
    CHECK(max_abs_diff(dec.self_attention(h), expect) < 1e-12);
  }
  SUBCASE("row permutation equivariance") {
    Rng data(10);
    const Tensor h = Tensor::randn({5, 8}, data, 1.0);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    const Tensor a = index_select(dec.self_attention(h), perm);
    const Tensor b = dec.self_attention(index_select(h, perm));
    CHECK(max_abs_diff(a, b) < 1e-6);
  }
  SUBCASE("zero projections give zero output") {
    fill(params, "d.self_attn.", 0.0);
    Rng data(11);
    const Tensor out = dec.self_attention(Tensor::randn({4, 8}, data, 1.0));
    for (double v : out.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("cross_attention_context examples") {
  const DecoderConfig cfg = small_config();
  Rng rng(12);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  ParamList params;
  dec.collect("d.", params);
  Rng init(13);
  for (const char* name :
       {"d.cross_attn.w_q", "d.cross_attn.w_k", "d.cross_attn.w_v", "d.cross_attn.w_o"})
    const_cast<Tensor&>(param(params, name)).assign(Tensor::randn({8, 8}, init, 0.5).data());
  Rng data(14);
  const Tensor h = Tensor::randn({3, 8}, data, 1.0);

  SUBCASE("single image") {
    DtypeGuard f64(Dtype::kF64);
    const Tensor c = Tensor::randn({3, 1, 8}, data, 1.0);
    const Tensor expect = matmul(matmul(reshape(c, {3, 8}), param(params, "d.cross_attn.w_v")),
                                 param(params, "d.cross_attn.w_o"));
    CHECK(max_abs_diff(dec.cross_attention_context(h, c), expect) < 1e-12);
  }
  SUBCASE("constant memory makes the batch size irrelevant") {
    const Tensor row = Tensor::randn({3, 1, 8}, data, 1.0);
    const Tensor one = dec.cross_attention_context(h, row);
    const Tensor many = dec.cross_attention_context(h, concat({row, row, row, row}, 1));
    CHECK(max_abs_diff(one, many) < 1e-6);
  }
  SUBCASE("permuting the batch axis leaves the context unchanged") {
    const Tensor c = Tensor::randn({3, 5, 8}, data, 1.0);
    std::vector<Tensor> cols;
    for (std::size_t j : {4, 2, 0, 3, 1}) cols.push_back(slice(c, 1, j, 1));
    CHECK(max_abs_diff(dec.cross_attention_context(h, c),
                       dec.cross_attention_context(h, concat(cols, 1))) < 1e-6);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(dec.cross_attention_context(h, Tensor::zeros({3, 0, 8})), DimensionError);
    CHECK_THROWS_AS(dec.cross_attention_context(h, Tensor::zeros({2, 2, 8})), DimensionError);
  }
}

TEST_CASE("initial state") {
  const DecoderConfig cfg = small_config();
  Rng rng(15);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  Rng data(16);
  const Tensor classes = Tensor::randn({3, 6}, data, 1.0);
  const Tensor batch = Tensor::randn({4, 6}, data, 1.0);
  const DecoderState s = dec.initial_state(classes, batch);
  CHECK(s.hidden.shape() == Shape{3, 8});
  for (double v : s.hidden.data()) CHECK(v == 0.0);
  CHECK(bitwise_equal(s.previous, classes));
  REQUIRE(s.context.shape() == Shape{3, 4, 8});
  for (std::size_t i = 1; i < 3; ++i)
    CHECK(bitwise_equal(select(s.context, 0, i), select(s.context, 0, 0)));
}

TEST_CASE("generate shapes, layouts and determinism") {
  DecoderConfig cfg = small_config();
  cfg.output_dim = 8;
  Rng data(17);
  const Tensor classes = Tensor::randn({3, 6}, data, 1.0);
  const Tensor batch = Tensor::randn({5, 6}, data, 1.0);

  const PromptGenerator dual(cfg, 42);
  const PromptPair a = dual.generate(classes, batch);
  REQUIRE(a.negative.has_value());
  CHECK(a.positive.vectors.shape() == Shape{3, 4, 8});
  CHECK(a.negative->vectors.shape() == Shape{3, 4, 8});
  CHECK(a.positive.polarity == Polarity::kPositive);
  CHECK(a.negative->polarity == Polarity::kNegative);
  CHECK_FALSE(bitwise_equal(a.positive.vectors, a.negative->vectors));

  const PromptPair b = PromptGenerator(cfg, 42).generate(classes, batch);
  CHECK(bitwise_equal(a.positive.vectors, b.positive.vectors));
  CHECK(bitwise_equal(a.negative->vectors, b.negative->vectors));

  cfg.layout = DecoderLayout::kSingle;
  const PromptGenerator single(cfg, 42);
  const PromptPair s = single.generate(classes, batch);
  REQUIRE(s.negative.has_value());
  CHECK(s.positive.vectors.shape() == Shape{3, 4, 8});
  CHECK(s.negative->vectors.shape() == Shape{3, 4, 8});
  CHECK(param(single.params(), "decoder.shared.prompt_proj").shape() == Shape{6, 16});

  cfg.layout = DecoderLayout::kPositiveOnly;
  const PromptGenerator pos(cfg, 42);
  const PromptPair p = pos.generate(classes, batch);
  CHECK_FALSE(p.negative.has_value());
  CHECK(param_count(pos.params()) * 2 == param_count(dual.params()));

  CHECK_THROWS_AS(dual.generate(Tensor::zeros({0, 6}), batch), DimensionError);
  CHECK_THROWS_AS(dual.generate(classes, Tensor::zeros({0, 6})), DimensionError);
  CHECK_THROWS_AS(dual.generate(classes, Tensor::zeros({2, 7})), DimensionError);
}

TEST_CASE("generate matches the unrolled step operations") {
  DecoderConfig cfg = small_config();
  cfg.init_std = 0.3;
  Rng rng(18);
  const PromptDecoder dec(cfg, cfg.output_dim, rng);
  ParamList params;
  dec.collect("", params);
  Rng data(19);
  const Tensor classes = Tensor::randn({3, 6}, data, 1.0);
  const Tensor batch = Tensor::randn({5, 6}, data, 1.0);

  DecoderState s = dec.initial_state(classes, batch);
  std::vector<Tensor> outputs;
  for (std::size_t i = 0; i < cfg.length; ++i) {
    const Tensor h = dec.self_attention(dec.gru_cell(s.previous, s.hidden));
    const Tensor ctx = dec.cross_attention_context(h, s.context);
    s.hidden = h;
    s.previous = matmul(add(h, ctx), param(params, "feedback_proj"));
    outputs.push_back(matmul(s.previous, param(params, "prompt_proj")));
  }
  const Tensor expect = stack(outputs, 1);
  CHECK(max_abs_diff(dec.generate(classes, batch), expect) < 1e-6);
}

TEST_CASE("generate zero parameters give zero prompts") {
  const DecoderConfig cfg = small_config();
  const PromptGenerator gen(cfg, 1);
  fill(gen.params(), "decoder.", 0.0);
  Rng data(18);
  const PromptPair out = gen.generate(Tensor::randn({3, 6}, data, 1.0), Tensor::randn({2, 6}, data, 1.0));
  for (double v : out.positive.vectors.data()) CHECK(v == 0.0);
  for (double v : out.negative->vectors.data()) CHECK(v == 0.0);
}

TEST_CASE("generate batch duplication and class permutation") {
  DecoderConfig cfg = small_config();
  cfg.init_std = 0.3;
  const PromptGenerator gen(cfg, 19);
  Rng data(20);
  const Tensor classes = Tensor::randn({4, 6}, data, 1.0);
  const Tensor batch = Tensor::randn({3, 6}, data, 1.0);

  const PromptPair base = gen.generate(classes, batch);
  const PromptPair doubled = gen.generate(classes, concat({batch, batch}, 0));
  CHECK(max_abs_diff(base.positive.vectors, doubled.positive.vectors) < 1e-6);
  CHECK(max_abs_diff(base.negative->vectors, doubled.negative->vectors) < 1e-6);

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const PromptPair permuted = gen.generate(index_select(classes, perm), batch);
  CHECK(max_abs_diff(index_select(base.positive.vectors, perm), permuted.positive.vectors) < 1e-6);
  CHECK(max_abs_diff(index_select(base.negative->vectors, perm), permuted.negative->vectors) <
        1e-6);
}

TEST_CASE("positive and negative decoders are disjoint") {
  const PromptGenerator gen(small_config(), 21);
  const ParamList params = gen.params();
  const ParamList before = snapshot(params);
  for (const auto& p : params)
    if (p.name.rfind("decoder.pos.", 0) == 0)
      const_cast<Tensor&>(p.tensor).assign(scale(p.tensor, 2.0).data());
  std::size_t neg = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind("decoder.neg.", 0) != 0) continue;
    ++neg;
    CHECK(bitwise_equal(params[i].tensor, before[i].tensor));
    for (std::size_t j = 0; j < params.size(); ++j)
      if (params[j].name.rfind("decoder.pos.", 0) == 0)
        CHECK_FALSE(params[i].tensor.same_storage(params[j].tensor));
  }
  CHECK(neg * 2 == params.size());
}

TEST_CASE("end-to-end gradients pass grad_check") {
  DecoderConfig cfg = small_config();
  cfg.length = 3;
  cfg.init_std = 0.4;
  for (auto layout : {DecoderLayout::kDual, DecoderLayout::kSingle}) {
    cfg.layout = layout;
    const PromptGenerator gen(cfg, 23);
    Rng data(24);
    const Tensor classes = Tensor::randn({3, 6}, data, 1.0);
    const Tensor batch = Tensor::randn({2, 6}, data, 1.0);
    auto loss = [&] {
      const PromptPair out = gen.generate(classes, batch);
      return add(project(out.positive.vectors, 25), project(out.negative->vectors, 26));
    };
    for (const auto& p : gen.params()) {
      CAPTURE(p.name);
      CHECK(grad_check_param(loss, p.tensor) < 1e-4);
    }
    CHECK(grad_check(
              [&](const Tensor& x) {
                return project(gen.generate(x, batch).positive.vectors, 27);
              },
              classes) < 1e-4);
  }
}
