#include "pspg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pspg/params.hpp"
#include "pspg/rng.hpp"

namespace pspg {

namespace {

void check_lengths(std::size_t scores, std::size_t labels, const char* who) {
  if (scores != labels)
    throw DimensionError(std::string(who) + ": " + std::to_string(scores) + " scores vs " +
                         std::to_string(labels) + " labels");
}

void check_panel(const std::vector<double>& scores, const LabelBatch& labels, const char* who) {
  check_lengths(scores.size(), labels.values.size(), who);
}

// Known entries of one class column.
void column(const std::vector<double>& scores, const LabelBatch& labels, std::size_t c,
            std::vector<double>& s, std::vector<std::int8_t>& y) {
  s.clear();
  y.clear();
  for (std::size_t r = 0; r < labels.rows; ++r) {
    const int v = labels.at(r, c);
    if (v < 0) continue;
    s.push_back(scores[r * labels.cols + c]);
    y.push_back(static_cast<std::int8_t>(v));
  }
}

bool two_classes(const std::vector<std::int8_t>& y) {
  bool pos = false, neg = false;
  for (auto v : y) (v == 1 ? pos : neg) = true;
  return pos && neg;
}

bool has_positive(const std::vector<std::int8_t>& y) {
  return std::find(y.begin(), y.end(), std::int8_t{1}) != y.end();
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::int8_t> labels) {
  check_lengths(scores.size(), labels.size(), "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0.0, n_neg = 0.0, concordant = 0.0, tied = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_pos = 0.0, group_neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const auto y = labels[order[j]];
      if (y != 0 && y != 1) throw ConfigError("roc_auc: labels must be 0 or 1");
      (y == 1 ? group_pos : group_neg) += 1.0;
      ++j;
    }
    concordant += group_pos * n_neg;
    tied += group_pos * group_neg;
    n_pos += group_pos;
    n_neg += group_neg;
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0)
    throw MetricError("roc_auc: undefined without both positives and negatives");
  return (concordant + 0.5 * tied) / (n_pos * n_neg);
}

double average_precision(std::span<const double> scores, std::span<const std::int8_t> labels) {
  check_lengths(scores.size(), labels.size(), "average_precision");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, total = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 1) continue;
    hits += 1.0;
    total += hits / static_cast<double>(rank + 1);
  }
  if (hits == 0.0) throw MetricError("average_precision: no positives");
  return total / hits;
}

ClassMetric macro_auc(const std::vector<double>& scores, const LabelBatch& labels) {
  check_panel(scores, labels, "macro_auc");
  ClassMetric out;
  std::vector<double> s;
  std::vector<std::int8_t> y;
  for (std::size_t c = 0; c < labels.cols; ++c) {
    column(scores, labels, c, s, y);
    if (!two_classes(y)) {
      out.skipped.push_back(c);
      continue;
    }
    out.per_class.push_back(roc_auc(s, y));
    out.evaluated.push_back(c);
  }
  if (out.per_class.empty()) throw MetricError("macro_auc: every class was skipped");
  out.value = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
              static_cast<double>(out.per_class.size());
  return out;
}

ClassMetric mean_average_precision(const std::vector<double>& scores, const LabelBatch& labels) {
  check_panel(scores, labels, "mean_average_precision");
  ClassMetric out;
  std::vector<double> s;
  std::vector<std::int8_t> y;
  for (std::size_t c = 0; c < labels.cols; ++c) {
    column(scores, labels, c, s, y);
    if (!has_positive(y)) {
      out.skipped.push_back(c);
      continue;
    }
    out.per_class.push_back(average_precision(s, y));
    out.evaluated.push_back(c);
  }
  if (out.per_class.empty()) throw MetricError("mean_average_precision: no class has positives");
  out.value = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
              static_cast<double>(out.per_class.size());
  return out;
}

double micro_auc(const std::vector<double>& scores, const LabelBatch& labels) {
  check_panel(scores, labels, "micro_auc");
  std::vector<double> s;
  std::vector<std::int8_t> y;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels.values[i] < 0) continue;
    s.push_back(scores[i]);
    y.push_back(labels.values[i]);
  }
  return roc_auc(s, y);
}

EvalResult evaluate(const std::vector<double>& scores, const LabelBatch& labels) {
  const ClassMetric macro = macro_auc(scores, labels);
  EvalResult out;
  out.macro_auc = macro.value;
  out.micro_auc = micro_auc(scores, labels);
  out.map = mean_average_precision(scores, labels).value;
  out.per_class_auc.assign(labels.cols, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < macro.evaluated.size(); ++k)
    out.per_class_auc[macro.evaluated[k]] = macro.per_class[k];
  out.skipped_classes = macro.skipped;
  return out;
}

double nearest_rank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw MetricError("nearest_rank: no values");
  const double k = std::ceil(q * static_cast<double>(sorted.size()));
  const std::size_t rank = static_cast<std::size_t>(
      std::clamp(k, 1.0, static_cast<double>(sorted.size())));
  return sorted[rank - 1];
}

BootstrapCI bootstrap_ci(const PanelMetric& metric, const std::vector<double>& scores,
                         const LabelBatch& labels, std::size_t resamples, double alpha,
                         std::uint64_t seed) {
  check_panel(scores, labels, "bootstrap_ci");
  if (resamples == 0) throw ConfigError("bootstrap_ci: resamples must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("bootstrap_ci: alpha must lie in (0, 1]");
  if (labels.rows == 0) throw MetricError("bootstrap_ci: empty panel");

  BootstrapCI out;
  out.resamples = resamples;
  out.alpha = alpha;
  out.seed = seed;
  out.point = metric(scores, labels);

  const std::size_t n = labels.rows, c = labels.cols;
  std::vector<double> values;
  values.reserve(resamples);
  std::vector<double> s(n * c);
  std::vector<std::int8_t> y(n * c);
  for (std::size_t r = 0; r < resamples; ++r) {
    Rng rng(splitmix64(seed ^ static_cast<std::uint64_t>(r)));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = static_cast<std::size_t>(rng.below(n));
      std::copy_n(scores.begin() + src * c, c, s.begin() + i * c);
      std::copy_n(labels.values.begin() + src * c, c, y.begin() + i * c);
    }
    try {
      values.push_back(metric(s, LabelBatch(n, c, y)));
    } catch (const MetricError&) {
      ++out.degenerate;
    }
  }
  if (2 * out.degenerate > resamples)
    throw MetricError("bootstrap_ci: " + std::to_string(out.degenerate) + " of " +
                      std::to_string(resamples) + " resamples were degenerate");
  std::sort(values.begin(), values.end());
  out.lo = nearest_rank(values, alpha / 2.0);
  out.hi = nearest_rank(values, 1.0 - alpha / 2.0);
  return out;
}

namespace {

PanelMetric class_metric(std::vector<std::size_t> required,
                         ClassMetric (*fn)(const std::vector<double>&, const LabelBatch&)) {
  return [required = std::move(required), fn](const std::vector<double>& s,
                                              const LabelBatch& y) {
    const ClassMetric m = fn(s, y);
    if (!required.empty() && m.evaluated != required)
      throw MetricError("resample lost an evaluable class");
    return m.value;
  };
}

}  // namespace

PanelMetric macro_auc_metric(std::vector<std::size_t> required) {
  return class_metric(std::move(required), &macro_auc);
}

PanelMetric map_metric(std::vector<std::size_t> required) {
  return class_metric(std::move(required), &mean_average_precision);
}

PanelMetric micro_auc_metric() {
  return [](const std::vector<double>& s, const LabelBatch& y) { return micro_auc(s, y); };
}

}  // namespace pspg
