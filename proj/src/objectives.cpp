#include "pspg/objectives.hpp"

#include <atomic>
#include <string>

#include "pspg/params.hpp"

namespace pspg {

namespace {

std::atomic<std::size_t> g_clamped{0};

Tensor clamp_probs(const Tensor& p) {
  std::size_t n = 0;
  Tensor out = clamp(p, kProbEpsilon, 1.0 - kProbEpsilon, &n);
  g_clamped += n;
  return out;
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

// Mean binary cross-entropy of clamped probabilities against 0/1 targets.
Tensor bce_sum(const Tensor& p, const Tensor& targets) {
  const Tensor q = clamp_probs(p);
  const Tensor pos = mul(targets, log(q));
  const Tensor neg = mul(one_minus(targets), log(one_minus(q)));
  return scale(sum(add(pos, neg)), -1.0);
}

}  // namespace

LabelBatch::LabelBatch(std::size_t r, std::size_t c, std::vector<std::int8_t> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols)
    throw DimensionError("LabelBatch: expected " + std::to_string(rows * cols) +
                         " entries, got " + std::to_string(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] < -1 || values[i] > 1)
      throw ConfigError("LabelBatch: entry " + std::to_string(int(values[i])) + " at row " +
                        std::to_string(i / cols) + " is not in {-1, 0, 1}");
}

LabelBatch LabelBatch::select_rows(const std::vector<std::size_t>& idx) const {
  std::vector<std::int8_t> out;
  out.reserve(idx.size() * cols);
  for (std::size_t r : idx) {
    if (r >= rows) throw DimensionError("LabelBatch: row index out of range");
    out.insert(out.end(), values.begin() + r * cols, values.begin() + (r + 1) * cols);
  }
  return LabelBatch(idx.size(), cols, std::move(out));
}

LabelBatch LabelBatch::select_cols(const std::vector<std::size_t>& idx) const {
  std::vector<std::int8_t> out;
  out.reserve(rows * idx.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c : idx) {
      if (c >= cols) throw DimensionError("LabelBatch: column index out of range");
      out.push_back(values[r * cols + c]);
    }
  return LabelBatch(rows, idx.size(), std::move(out));
}

void LossConfig::validate() const {
  if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0))
    throw ConfigError("loss: focusing exponents must be >= 0");
  if (!(clip >= 0.0 && clip < 1.0)) throw ConfigError("loss: clip must lie in [0, 1)");
}

std::size_t probability_clamp_count() { return g_clamped.load(); }
void reset_probability_clamp_count() { g_clamped = 0; }

std::vector<std::pair<std::size_t, std::size_t>> class_pairs(std::size_t classes) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (classes >= 2) out.reserve(classes * (classes - 1) / 2);
  for (std::size_t i = 0; i < classes; ++i)
    for (std::size_t j = i + 1; j < classes; ++j) out.emplace_back(i, j);
  return out;
}

std::vector<std::int64_t> cooccurrence_matrix(const LabelBatch& labels) {
  const std::size_t n = labels.cols;
  std::vector<std::int64_t> omega(n * n, 0);
  for (std::size_t r = 0; r < labels.rows; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      if (labels.at(r, i) != 1) continue;
      for (std::size_t j = 0; j < n; ++j)
        if (labels.at(r, j) == 1) ++omega[i * n + j];
    }
  return omega;
}

CooccurrenceTarget cooccurrence_targets(const LabelBatch& labels) {
  const std::vector<std::int64_t> omega = cooccurrence_matrix(labels);
  CooccurrenceTarget out;
  out.classes = labels.cols;
  for (const auto& [i, j] : class_pairs(labels.cols))
    out.q.push_back(omega[i * labels.cols + j] >= 1 ? 1 : 0);
  return out;
}

Tensor asl_loss(const Tensor& probs, const LabelBatch& labels, const LossConfig& cfg) {
  cfg.validate();
  if (probs.rank() != 2 || probs.dim(0) != labels.rows || probs.dim(1) != labels.cols)
    throw DimensionError("asl_loss: probabilities " + shape_str(probs.shape()) +
                         " do not match labels [" + std::to_string(labels.rows) + " x " +
                         std::to_string(labels.cols) + "]");
  std::vector<double> pos_mask(labels.values.size(), 0.0);
  std::vector<double> neg_mask(labels.values.size(), 0.0);
  std::size_t known = 0;
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    if (labels.values[i] == 1) pos_mask[i] = 1.0;
    if (labels.values[i] == 0) neg_mask[i] = 1.0;
    if (labels.values[i] >= 0) ++known;
  }
  if (known == 0) return Tensor::scalar(0.0);
  const Tensor p = clamp_probs(probs);
  const Shape& shape = probs.shape();

  const Tensor pos_term =
      mul(pow(one_minus(p), cfg.gamma_pos), log(p));
  const Tensor shifted = cfg.clip > 0.0 ? relu(add_scalar(p, -cfg.clip)) : p;
  const Tensor neg_term = mul(pow(shifted, cfg.gamma_neg), log(one_minus(shifted)));
  const Tensor total = add(sum(mul(pos_term, Tensor::from(shape, pos_mask))),
                           sum(mul(neg_term, Tensor::from(shape, neg_mask))));
  return scale(total, -1.0 / static_cast<double>(known));
}

Tensor pairwise_prompt_features(const Tensor& sequences, const TextEncoder& text) {
  if (sequences.rank() != 3)
    throw DimensionError("pairwise_prompt_features: expected [N_c x L x D], got " +
                         shape_str(sequences.shape()));
  const auto pairs = class_pairs(sequences.dim(0));
  if (pairs.empty()) return Tensor();
  std::vector<std::size_t> first, second;
  for (const auto& [i, j] : pairs) {
    first.push_back(i);
    second.push_back(j);
  }
  const Tensor joined = concat({index_select(sequences, first), index_select(sequences, second)}, 1);
  return text.encode_embedded_batch(joined);
}

Tensor spcl_loss(const Tensor& positions, const Tensor& pair_features,
                 const CooccurrenceTarget& target, const Tensor& inverse_temperature,
                 Aggregation mode) {
  if (!pair_features.defined() || target.q.empty()) return Tensor::scalar(0.0);
  if (pair_features.rank() != 2 || pair_features.dim(0) != target.q.size())
    throw DimensionError("spcl_loss: " + std::to_string(target.q.size()) +
                         " pair targets but pair features " + shape_str(pair_features.shape()));
  const Tensor probs =
      sigmoid(mul(similarity_matrix(positions, pair_features, mode), inverse_temperature));
  const Tensor pooled = max(probs, 0);  // [pairs]
  std::vector<double> q(target.q.begin(), target.q.end());
  const Tensor targets = Tensor::from({q.size()}, q);
  return scale(bce_sum(pooled, targets), 1.0 / static_cast<double>(q.size()));
}

Tensor pcl_loss(const Tensor& positions, const Tensor& pair_features, const LabelBatch& labels,
                const Tensor& inverse_temperature, Aggregation mode) {
  const auto pairs = class_pairs(labels.cols);
  if (!pair_features.defined() || pairs.empty()) return Tensor::scalar(0.0);
  if (pair_features.rank() != 2 || pair_features.dim(0) != pairs.size() ||
      positions.dim(0) != labels.rows)
    throw DimensionError("pcl_loss: pair features " + shape_str(pair_features.shape()) +
                         " or batch does not match the labels");
  std::vector<double> q;
  q.reserve(labels.rows * pairs.size());
  for (std::size_t r = 0; r < labels.rows; ++r)
    for (const auto& [i, j] : pairs)
      q.push_back(labels.at(r, i) == 1 && labels.at(r, j) == 1 ? 1.0 : 0.0);
  const Tensor probs =
      sigmoid(mul(similarity_matrix(positions, pair_features, mode), inverse_temperature));
  const Tensor targets = Tensor::from(probs.shape(), q);
  return scale(bce_sum(probs, targets), 1.0 / static_cast<double>(q.size()));
}

Tensor total_loss(const Tensor& asl, const Tensor& spcl) {
  return spcl.defined() ? add(asl, spcl) : asl;
}

}  // namespace pspg
