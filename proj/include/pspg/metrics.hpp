#pragma once

// Ranking metrics over score panels and a percentile bootstrap.
//
// A panel is a row-major [samples x classes] score matrix paired with a
// LabelBatch of the same shape. Entries labelled -1 are left out of every
// metric.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pspg/objectives.hpp"

namespace pspg {

// A metric is undefined on the given data (e.g. a single-class column).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Mann-Whitney: (concordant + 0.5 * tied) / (n_pos * n_neg). Labels are 0/1.
double roc_auc(std::span<const double> scores, std::span<const std::int8_t> labels);

// Sum of precision@rank over positives / n_pos; descending score, ties by
// original index.
double average_precision(std::span<const double> scores, std::span<const std::int8_t> labels);

struct ClassMetric {
  double value = 0.0;
  std::vector<double> per_class;             // one entry per evaluated class
  std::vector<std::size_t> evaluated;        // class ids behind per_class
  std::vector<std::size_t> skipped;          // class ids with no positives or no negatives
};

ClassMetric macro_auc(const std::vector<double>& scores, const LabelBatch& labels);
ClassMetric mean_average_precision(const std::vector<double>& scores, const LabelBatch& labels);
double micro_auc(const std::vector<double>& scores, const LabelBatch& labels);

struct EvalResult {
  double macro_auc = 0.0;
  double micro_auc = 0.0;
  double map = 0.0;
  std::vector<double> per_class_auc;  // NaN for skipped classes
  std::vector<std::size_t> skipped_classes;
};

EvalResult evaluate(const std::vector<double>& scores, const LabelBatch& labels);

using PanelMetric = std::function<double(const std::vector<double>&, const LabelBatch&)>;

struct BootstrapCI {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t resamples = 1000;
  std::size_t degenerate = 0;  // resamples where the metric was undefined
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

// Resamples rows with replacement; resample r draws from
// Rng(splitmix64(seed ^ r)). Bounds are nearest-rank percentiles at alpha/2
// and 1 - alpha/2. More than half the resamples degenerate is an error.
BootstrapCI bootstrap_ci(const PanelMetric& metric, const std::vector<double>& scores,
                         const LabelBatch& labels, std::size_t resamples = 1000,
                         double alpha = 0.05, std::uint64_t seed = 0);

// Nearest-rank percentile of sorted values, q in [0, 1].
double nearest_rank(const std::vector<double>& sorted, double q);

// Panel metrics for the bootstrap. The macro-style metrics require the same
// classes to stay evaluable as in the full panel.
PanelMetric macro_auc_metric(std::vector<std::size_t> required);
PanelMetric map_metric(std::vector<std::size_t> required);
PanelMetric micro_auc_metric();

}  // namespace pspg
