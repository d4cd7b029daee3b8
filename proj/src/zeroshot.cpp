#include "pspg/zeroshot.hpp"

#include <algorithm>
#include <cmath>

#include "pspg/backbone.hpp"
#include "pspg/params.hpp"

namespace pspg {

std::string aggregation_name(Aggregation mode) {
  return mode == Aggregation::kMax ? "max" : "mean";
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "mean") return Aggregation::kMean;
  if (name == "max") return Aggregation::kMax;
  throw ConfigError("unknown aggregation '" + name + "' (expected mean or max)");
}

double class_similarity(const Tensor& positions, const Tensor& w, Aggregation mode) {
  if (positions.rank() != 2 || positions.dim(0) == 0 || positions.dim(1) != w.numel())
    throw DimensionError("class_similarity: positions " + shape_str(positions.shape()) +
                         " do not match feature of length " + std::to_string(w.numel()));
  const std::size_t p = positions.dim(0);
  double total = 0.0;
  double best = -2.0;
  for (std::size_t k = 0; k < p; ++k) {
    const double s = cosine_sim(select(positions, 0, k), w);
    total += s;
    best = std::max(best, s);
  }
  return mode == Aggregation::kMax ? best : total / static_cast<double>(p);
}

Tensor similarity_matrix(const Tensor& positions, const Tensor& text, Aggregation mode) {
  if (positions.rank() != 3 || text.rank() != 2 || positions.dim(2) != text.dim(1))
    throw DimensionError("similarity_matrix: positions " + shape_str(positions.shape()) +
                         " and text " + shape_str(text.shape()) + " do not align");
  const std::size_t b = positions.dim(0), p = positions.dim(1), d = positions.dim(2);
  const std::size_t m = text.dim(0);
  const Tensor unit_pos = reshape(normalize(positions, 2), {b * p, d});
  const Tensor unit_text = normalize(text, 1);
  const Tensor cos = reshape(matmul(unit_pos, transpose(unit_text, 0, 1)), {b, p, m});
  return mode == Aggregation::kMax ? max(cos, 1) : mean(cos, 1);
}

double dual_softmax(double s_pos, double s_neg, double tau) {
  if (!(tau > 0.0)) throw ConfigError("dual_softmax: tau must be positive");
  const double a = s_pos / tau;
  const double b = s_neg / tau;
  const double top = std::max(a, b);
  const double ea = std::exp(a - top);
  const double eb = std::exp(b - top);
  return ea / (ea + eb);
}

Tensor dual_probabilities(const Tensor& s_pos, const Tensor& s_neg,
                          const Tensor& inverse_temperature) {
  const Tensor margin = s_neg.defined() ? sub(s_pos, s_neg) : s_pos;
  return sigmoid(mul(margin, inverse_temperature));
}

}  // namespace pspg
