#include "pspg/gradsuite.hpp"

#include <algorithm>
#include <functional>

#include "pspg/backbone.hpp"
#include "pspg/decoder.hpp"
#include "pspg/fusion.hpp"
#include "pspg/gradcheck.hpp"
#include "pspg/model.hpp"
#include "pspg/objectives.hpp"

namespace pspg {

namespace {

// Random weighted sum, keeping gradients of order one.
Tensor project(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, Tensor::randn(x.shape(), rng, 1.0)));
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

void randomize(const ParamList& params, const std::string& prefix, Rng& rng, double stddev) {
  for (const auto& p : params)
    if (starts_with(p.name, prefix)) {
      Tensor t = p.tensor;
      t.assign(Tensor::randn(t.shape(), rng, stddev).data());
    }
}

double check_params(const ParamList& params, const std::string& prefix,
                    const std::function<Tensor()>& loss, double eps = 1e-5) {
  double worst = 0.0;
  for (const auto& p : params)
    if (starts_with(p.name, prefix)) worst = std::max(worst, grad_check_param(loss, p.tensor, eps));
  return worst;
}

BackboneConfig small_backbone() {
  BackboneConfig cfg;
  cfg.raw_dim = 8;
  cfg.local_count = 2;
  cfg.joint_dim = 6;
  cfg.embed_dim = 4;
  cfg.vocab_size = 10;
  cfg.max_text_len = 8;
  return cfg;
}

DecoderConfig small_decoder() {
  DecoderConfig cfg;
  cfg.length = 3;
  cfg.hidden = 8;
  cfg.input_dim = 6;
  cfg.output_dim = 4;
  cfg.heads = 2;
  cfg.init_std = 0.4;
  return cfg;
}

LabelBatch random_labels(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<std::int8_t> v(rows * cols);
  for (auto& x : v) {
    const double u = rng.uniform();
    x = u < 0.15 ? -1 : (u < 0.55 ? 1 : 0);
  }
  return LabelBatch(rows, cols, v);
}

using Check = std::function<double(std::uint64_t)>;

double image_encoder(std::uint64_t seed) {
  const Backbone bb(small_backbone(), seed);
  Rng rng(seed + 1);
  const Tensor images = Tensor::randn({3, 8}, rng, 1.0);
  return check_params(bb.params(), "backbone.image.", [&] {
    const EncodedBatch enc = bb.image().encode_batch(images);
    return add(project(enc.global, seed + 2), project(enc.local, seed + 3));
  });
}

double text_encoder(std::uint64_t seed) {
  const Backbone bb(small_backbone(), seed);
  const std::vector<TextTokens> texts = {{1, 2}, {3, 4, 5}, {6}};
  double worst = check_params(bb.params(), "backbone.text.", [&] {
    return project(bb.text().encode_tokens_many(texts), seed + 2);
  });
  Rng rng(seed + 1);
  const Tensor e = Tensor::randn({4, 4}, rng, 1.0);
  worst = std::max(worst, grad_check([&](const Tensor& x) {
                     return project(bb.text().encode_embedded(x), seed + 3);
                   }, e));
  return worst;
}

double contrastive(std::uint64_t seed) {
  const Backbone bb(small_backbone(), seed);
  Rng rng(seed + 1);
  const Tensor images = Tensor::randn({3, 8}, rng, 1.0);
  const std::vector<TextTokens> texts = {{1, 2}, {3, 4, 5}, {6}};
  return check_params(bb.params(), "backbone.", [&] {
    return contrastive_loss(bb.image().encode_batch(images).global,
                            bb.text().encode_tokens_many(texts), bb.inverse_temperature());
  });
}

struct DecoderFixture {
  explicit DecoderFixture(std::uint64_t seed) : rng(seed) {
    const DecoderConfig cfg = small_decoder();
    dec = PromptDecoder(cfg, cfg.output_dim, rng);
    dec.collect("d.", params);
    randomize(params, "d.", rng, 0.5);
  }
  Rng rng;
  PromptDecoder dec;
  ParamList params;
};

double gru_cell(std::uint64_t seed) {
  DecoderFixture f(seed);
  const Tensor t = Tensor::randn({3, 6}, f.rng, 1.0);
  const Tensor h = Tensor::randn({3, 8}, f.rng, 1.0);
  double worst = check_params(f.params, "d.gru.", [&] { return project(f.dec.gru_cell(t, h), seed); });
  worst = std::max(worst, grad_check([&](const Tensor& x) { return project(f.dec.gru_cell(x, h), seed); }, t));
  return std::max(worst, grad_check([&](const Tensor& x) { return project(f.dec.gru_cell(t, x), seed); }, h));
}

double self_attention(std::uint64_t seed) {
  DecoderFixture f(seed);
  const Tensor h = Tensor::randn({4, 8}, f.rng, 1.0);
  const double worst =
      check_params(f.params, "d.self_attn.", [&] { return project(f.dec.self_attention(h), seed); });
  return std::max(worst, grad_check([&](const Tensor& x) {
                    return project(f.dec.self_attention(x), seed);
                  }, h));
}

double cross_attention(std::uint64_t seed) {
  DecoderFixture f(seed);
  const Tensor h = Tensor::randn({3, 8}, f.rng, 1.0);
  const Tensor ctx = Tensor::randn({3, 2, 8}, f.rng, 1.0);
  double worst = check_params(f.params, "d.cross_attn.", [&] {
    return project(f.dec.cross_attention_context(h, ctx), seed);
  });
  worst = std::max(worst, grad_check([&](const Tensor& x) {
                     return project(f.dec.cross_attention_context(x, ctx), seed);
                   }, h));
  return std::max(worst, grad_check([&](const Tensor& x) {
                    return project(f.dec.cross_attention_context(h, x), seed);
                  }, ctx));
}

double fusion_kernel(std::uint64_t seed) {
  Rng rng(seed);
  const SpatialFusion sf(Tensor::randn({3}, rng, 0.5, true));
  const Tensor g = Tensor::randn({2, 5}, rng, 1.0);
  const Tensor l = Tensor::randn({2, 3, 5}, rng, 1.0);
  double worst = check_params(sf.params(), "fusion.", [&] { return project(sf.fuse_batch(g, l), seed); });
  worst = std::max(worst, grad_check([&](const Tensor& x) { return project(sf.fuse_batch(x, l), seed); }, g));
  return std::max(worst, grad_check([&](const Tensor& x) { return project(sf.fuse_batch(g, x), seed); }, l));
}

double asl(std::uint64_t seed) {
  Rng rng(seed);
  const LabelBatch y = random_labels(rng, 4, 3);
  std::vector<double> p(12);
  for (auto& v : p) v = 0.1 + 0.8 * rng.uniform();
  LossConfig cfg;
  cfg.clip = 0.05;
  return grad_check([&](const Tensor& x) { return asl_loss(x, y, cfg); }, Tensor::from({4, 3}, p));
}

double spcl(std::uint64_t seed) {
  Rng rng(seed);
  const LabelBatch y = random_labels(rng, 4, 3);
  const Tensor positions = Tensor::randn({4, 3, 5}, rng, 1.0);
  const Tensor pairs = Tensor::randn({3, 5}, rng, 1.0);
  const Tensor inv = Tensor::scalar(2.0);
  const CooccurrenceTarget q = cooccurrence_targets(y);
  double worst = 0.0;
  for (Aggregation mode : {Aggregation::kMean, Aggregation::kMax}) {
    worst = std::max(worst, grad_check([&](const Tensor& x) { return spcl_loss(x, pairs, q, inv, mode); }, positions));
    worst = std::max(worst, grad_check([&](const Tensor& x) { return spcl_loss(positions, x, q, inv, mode); }, pairs));
    worst = std::max(worst, grad_check([&](const Tensor& x) { return pcl_loss(positions, x, y, inv, mode); }, pairs));
  }
  return worst;
}

double full_path(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.backbone = small_backbone();
  cfg.backbone.tau_init = 1.0;
  cfg.decoder = small_decoder();
  cfg.decoder.layout = seed % 2 ? DecoderLayout::kSingle : DecoderLayout::kDual;
  const PspgModel model(cfg, seed);
  Rng rng(seed + 1);
  randomize(model.backbone().params(), "backbone.text.", rng, 1.0);
  const Tensor images = Tensor::randn({3, 8}, rng, 1.0);
  const std::vector<TextTokens> classes = {{1, 2}, {1, 3}, {1, 4}};
  const LabelBatch y = random_labels(rng, 3, 3);
  const EncodedBatch enc = model.backbone().image().encode_batch(images);
  const LossConfig loss_cfg;
  auto loss = [&] {
    const ForwardPass pass = model.forward(enc, classes);
    const Tensor pairs = pairwise_prompt_features(pass.positive_sequences, model.backbone().text());
    return total_loss(asl_loss(pass.out.probs, y, loss_cfg),
                      spcl_loss(pass.positions, pairs, cooccurrence_targets(y),
                                model.backbone().inverse_temperature(), cfg.aggregation));
  };
  // The cosine similarity is blind to the positive per-position gates, so the
  // fusion kernel gets an exactly zero gradient here; its own check covers it.
  // The longer chain needs a wider step to keep roundoff under the 1e-8 floor.
  return check_params(model.prompt_params(), "decoder.", loss, 1.5e-4);
}

}  // namespace

std::vector<GradcheckItem> run_gradcheck_suite(std::size_t instances, std::uint64_t seed) {
  const std::vector<std::pair<std::string, Check>> checks = {
      {"image_encoder", image_encoder},   {"text_encoder", text_encoder},
      {"contrastive", contrastive},       {"gru_cell", gru_cell},
      {"self_attention", self_attention}, {"cross_attention", cross_attention},
      {"fusion_kernel", fusion_kernel},   {"asl", asl},
      {"spcl", spcl},                     {"generate_to_loss", full_path},
  };
  DtypeGuard f64(Dtype::kF64);
  std::vector<GradcheckItem> out;
  for (const auto& [name, check] : checks) {
    GradcheckItem item{name, 0.0, instances};
    for (std::size_t i = 0; i < instances; ++i)
      item.max_rel_error = std::max(item.max_rel_error, check(splitmix64(seed + 1000 * i + out.size())));
    out.push_back(item);
  }
  return out;
}

bool gradcheck_passed(const std::vector<GradcheckItem>& items) {
  return std::all_of(items.begin(), items.end(),
                     [](const GradcheckItem& i) { return i.max_rel_error < kGradcheckTolerance; });
}

}  // namespace pspg
