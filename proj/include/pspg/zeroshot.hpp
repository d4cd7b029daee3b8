#pragma once

// Similarity and dual-prompt probability primitives shared by training and
// zero-shot prediction.

#include <string>

#include "pspg/tensor.hpp"

namespace pspg {

// How per-position similarities collapse to one score per (image, class).
enum class Aggregation { kMean, kMax };

std::string aggregation_name(Aggregation mode);
Aggregation parse_aggregation(const std::string& name);  // "mean" | "max"

// Per-position cosine of positions [P x D] against w [D], aggregated.
double class_similarity(const Tensor& positions, const Tensor& w, Aggregation mode);

// positions [B x P x D] against text rows [M x D] -> [B x M].
Tensor similarity_matrix(const Tensor& positions, const Tensor& text, Aggregation mode);

// exp(a/tau) / (exp(a/tau) + exp(b/tau)), evaluated without overflow.
double dual_softmax(double s_pos, double s_neg, double tau);

// Elementwise sigmoid((s_pos - s_neg) * inverse_temperature). Either
// similarity may be undefined, meaning zero.
Tensor dual_probabilities(const Tensor& s_pos, const Tensor& s_neg,
                          const Tensor& inverse_temperature);

}  // namespace pspg
