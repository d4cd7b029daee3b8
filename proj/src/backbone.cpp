#include "pspg/backbone.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace pspg {

void BackboneConfig::validate() const {
  if (raw_dim == 0 || local_count == 0 || joint_dim == 0 || embed_dim == 0 ||
      vocab_size == 0 || max_text_len == 0)
    throw ConfigError("backbone: all extents must be >= 1");
  if (raw_dim % local_count != 0)
    throw ConfigError("backbone: raw_dim " + std::to_string(raw_dim) +
                      " is not divisible by local_count " + std::to_string(local_count));
  if (!(tau_init > 0.0)) throw ConfigError("backbone: tau_init must be positive");
}

// ---- image -----------------------------------------------------------------

ImageEncoder::ImageEncoder(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t p = cfg.patch_dim();
  const std::size_t h = cfg.joint_dim;
  const std::size_t d = cfg.joint_dim;
  patch_w1_ = Tensor::randn({p, h}, rng, 1.0 / std::sqrt(double(p)), true);
  patch_b1_ = Tensor::zeros({h}, true);
  patch_w2_ = Tensor::randn({h, d}, rng, 1.0 / std::sqrt(double(h)), true);
  patch_b2_ = Tensor::zeros({d}, true);
  global_proj_ = Tensor::randn({d, d}, rng, 1.0 / std::sqrt(double(d)), true);
}

EncodedBatch ImageEncoder::encode_batch(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.dim(1) != cfg_.raw_dim)
    throw DimensionError("encode_image: expected [B x " + std::to_string(cfg_.raw_dim) +
                         "], got " + shape_str(raw.shape()));
  const std::size_t b = raw.dim(0);
  const std::size_t c = cfg_.local_count;
  const Tensor patches = reshape(raw, {b * c, cfg_.patch_dim()});
  const Tensor hidden = tanh(linear(patches, patch_w1_, patch_b1_));
  const Tensor local = reshape(linear(hidden, patch_w2_, patch_b2_), {b, c, cfg_.joint_dim});
  const Tensor global = matmul(mean(local, 1), global_proj_);
  return {global, local};
}

EncodedImage ImageEncoder::encode(const Tensor& raw) const {
  if (raw.rank() != 1 || raw.dim(0) != cfg_.raw_dim)
    throw DimensionError("encode_image: expected [" + std::to_string(cfg_.raw_dim) +
                         "], got " + shape_str(raw.shape()));
  EncodedBatch batch = encode_batch(reshape(raw, {1, cfg_.raw_dim}));
  return {batch.global, reshape(batch.local, {cfg_.local_count, cfg_.joint_dim})};
}

void ImageEncoder::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "patch_w1", patch_w1_});
  out.push_back({prefix + "patch_b1", patch_b1_});
  out.push_back({prefix + "patch_w2", patch_w2_});
  out.push_back({prefix + "patch_b2", patch_b2_});
  out.push_back({prefix + "global_proj", global_proj_});
}

// ---- text ------------------------------------------------------------------

TextEncoder::TextEncoder(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t e = cfg.embed_dim;
  const std::size_t h = cfg.joint_dim;
  token_embedding_ = Tensor::randn({cfg.vocab_size, e}, rng, 0.5, true);
  position_embedding_ = Tensor::randn({cfg.max_sequence_len(), e}, rng, 0.1, true);
  gru_ = GruCell(e, h, rng, 1.0 / std::sqrt(double(e + h) / 2.0));
  proj_ = Tensor::randn({h, cfg.joint_dim}, rng, 1.0 / std::sqrt(double(h)), true);
}

Tensor TextEncoder::embed(const TextTokens& tokens) const {
  if (tokens.empty()) throw DimensionError("encode_text: empty token sequence");
  std::vector<std::size_t> rows;
  rows.reserve(tokens.size());
  for (auto id : tokens) {
    if (id >= cfg_.vocab_size)
      throw DimensionError("encode_text: token id " + std::to_string(id) +
                           " >= vocab_size " + std::to_string(cfg_.vocab_size));
    rows.push_back(id);
  }
  return index_select(token_embedding_, rows);
}

Tensor TextEncoder::encode(const TextTokens& tokens) const {
  return encode_embedded(embed(tokens));
}

Tensor TextEncoder::encode_embedded(const Tensor& embeddings) const {
  if (embeddings.rank() != 2)
    throw DimensionError("encode_text_embedded: expected [len x embed_dim], got " +
                         shape_str(embeddings.shape()));
  const Tensor batch =
      reshape(embeddings, {1, embeddings.dim(0), embeddings.dim(1)});
  return reshape(encode_embedded_batch(batch), {cfg_.joint_dim});
}

Tensor TextEncoder::encode_embedded_batch(const Tensor& embeddings) const {
  if (embeddings.rank() != 3 || embeddings.dim(2) != cfg_.embed_dim)
    throw DimensionError("encode_text_embedded: expected [S x len x " +
                         std::to_string(cfg_.embed_dim) + "], got " +
                         shape_str(embeddings.shape()));
  const std::size_t s = embeddings.dim(0);
  const std::size_t len = embeddings.dim(1);
  if (len == 0) throw DimensionError("encode_text_embedded: empty sequence");
  if (len > cfg_.max_sequence_len())
    throw DimensionError("encode_text_embedded: length " + std::to_string(len) +
                         " exceeds 2*max_text_len = " +
                         std::to_string(cfg_.max_sequence_len()));
  const Tensor x = add(embeddings, slice(position_embedding_, 0, 0, len));
  Tensor hidden = Tensor::zeros({s, gru_.hidden_dim()});
  for (std::size_t t = 0; t < len; ++t) hidden = gru_.step(select(x, 1, t), hidden);
  return matmul(hidden, proj_);
}

Tensor TextEncoder::encode_many(const std::vector<Tensor>& sequences) const {
  if (sequences.empty()) throw DimensionError("encode_many: no sequences");
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].rank() != 2)
      throw DimensionError("encode_many: sequence must be [len x embed_dim]");
    by_length[sequences[i].dim(0)].push_back(i);
  }
  std::vector<Tensor> groups;
  std::vector<std::size_t> position(sequences.size());
  std::size_t row = 0;
  for (const auto& [len, members] : by_length) {
    std::vector<Tensor> parts;
    parts.reserve(members.size());
    for (std::size_t i : members) {
      parts.push_back(sequences[i]);
      position[i] = row++;
    }
    groups.push_back(encode_embedded_batch(stack(parts, 0)));
  }
  const Tensor all = groups.size() == 1 ? groups[0] : concat(groups, 0);
  std::vector<std::size_t> identity(position.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  return position == identity ? all : index_select(all, position);
}

Tensor TextEncoder::encode_tokens_many(const std::vector<TextTokens>& texts) const {
  std::vector<Tensor> sequences;
  sequences.reserve(texts.size());
  for (const auto& t : texts) sequences.push_back(embed(t));
  return encode_many(sequences);
}

void TextEncoder::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "token_embedding", token_embedding_});
  out.push_back({prefix + "position_embedding", position_embedding_});
  gru_.collect(prefix + "gru.", out);
  out.push_back({prefix + "proj", proj_});
}

// ---- backbone ----------------------------------------------------------------

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  image_ = ImageEncoder(cfg, rng);
  text_ = TextEncoder(cfg, rng);
  logit_scale_ = Tensor::from({1}, {std::log(1.0 / cfg.tau_init)}, true);
}

double Backbone::temperature() const { return std::exp(-logit_scale_.item()); }

ParamList Backbone::params() const {
  ParamList out;
  image_.collect("backbone.image.", out);
  text_.collect("backbone.text.", out);
  out.push_back({"backbone.logit_scale", logit_scale_});
  return out;
}

// ---- similarity / loss -----------------------------------------------------

double cosine_sim(const Tensor& u, const Tensor& w) {
  if (u.numel() != w.numel())
    throw DimensionError("cosine_sim: lengths differ (" + std::to_string(u.numel()) +
                         " vs " + std::to_string(w.numel()) + ")");
  double dot = 0.0, nu = 0.0, nw = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    dot += u[i] * w[i];
    nu += u[i] * u[i];
    nw += w[i] * w[i];
  }
  if (!(nu > 0.0) || !(nw > 0.0))
    throw NumericError("cosine_sim: zero-norm feature (degenerate input)");
  return dot / (std::sqrt(nu) * std::sqrt(nw));
}

Tensor contrastive_loss(const Tensor& image_global, const Tensor& text_features,
                        const Tensor& inverse_temperature) {
  if (image_global.rank() != 2 || image_global.shape() != text_features.shape())
    throw DimensionError("contrastive_loss: image " + shape_str(image_global.shape()) +
                         " and text " + shape_str(text_features.shape()) + " must match");
  const std::size_t b = image_global.dim(0);
  if (b == 0) throw DimensionError("contrastive_loss: empty batch");
  const Tensor logits = mul(matmul(normalize(image_global, 1),
                                   transpose(normalize(text_features, 1), 0, 1)),
                            inverse_temperature);
  std::vector<double> eye(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) eye[i * b + i] = 1.0;
  const Tensor diag = Tensor::from({b, b}, std::move(eye));
  const Tensor image_to_text = sum(mul(log_softmax(logits, 1), diag));
  const Tensor text_to_image = sum(mul(log_softmax(logits, 0), diag));
  return scale(add(image_to_text, text_to_image), -0.5 / static_cast<double>(b));
}

Tensor contrastive_loss(const std::vector<EncodedImage>& images, const Tensor& text_features,
                        double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");
  std::vector<Tensor> globals;
  globals.reserve(images.size());
  for (const auto& img : images) globals.push_back(img.global);
  if (globals.empty()) throw DimensionError("contrastive_loss: empty batch");
  return contrastive_loss(concat(globals, 0), text_features, Tensor::scalar(1.0 / tau));
}

}  // namespace pspg
