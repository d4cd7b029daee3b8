#include <cmath>
#include <vector>

#include "doctest.h"
#include "pspg/metrics.hpp"
#include "pspg/rng.hpp"

using namespace pspg;

namespace {

using Labels = std::vector<std::int8_t>;

// Direct pair counting.
double pair_auc(const std::vector<double>& s, const Labels& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return good / pairs;
}

// Precision at each positive, counting earlier items directly.
double pair_ap(const std::vector<double>& s, const Labels& y) {
  double total = 0.0, positives = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    positives += 1.0;
    double rank = 0.0, hits = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool ahead = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (!ahead) continue;
      rank += 1.0;
      hits += y[j] == 1;
    }
    total += hits / rank;
  }
  return total / positives;
}

// Coarse scores so ties are common.
std::vector<double> random_scores(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (auto& v : s) v = std::floor(rng.uniform() * 8.0) / 8.0;
  return s;
}

LabelBatch random_panel_labels(Rng& rng, std::size_t rows, std::size_t cols) {
  Labels v(rows * cols);
  for (auto& x : v) {
    const double u = rng.uniform();
    x = u < 0.1 ? -1 : (u < 0.5 ? 1 : 0);
  }
  return LabelBatch(rows, cols, v);
}

}  // namespace

TEST_CASE("roc_auc examples") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.1}, Labels{1, 1, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, Labels{1, 0, 1, 0}) == 0.5);
  CHECK(roc_auc(std::vector<double>{0.2, 0.8}, Labels{1, 0}) == 0.0);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.2, 0.8}, Labels{1, 1}), MetricError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.2}, Labels{1, 0}), DimensionError);
}

TEST_CASE("roc_auc matches pair counting and its invariances") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.below(60);
    const std::vector<double> s = random_scores(rng, m);
    Labels y(m);
    for (auto& v : y) v = rng.uniform() < 0.4;
    y[0] = 1;
    y[1] = 0;
    const double auc = roc_auc(s, y);
    CHECK(std::abs(auc - pair_auc(s, y)) < 1e-9);

    std::vector<double> neg(s), mono(s);
    for (auto& v : neg) v = -v;
    for (auto& v : mono) v = std::exp(3.0 * v) + 7.0;
    CHECK(std::abs(auc + roc_auc(neg, y) - 1.0) < 1e-12);
    CHECK(roc_auc(mono, y) == auc);
  }
}

TEST_CASE("average_precision examples and oracle") {
  CHECK(average_precision(std::vector<double>{0.9, 0.6, 0.4}, Labels{1, 1, 0}) == 1.0);
  CHECK(std::abs(average_precision(std::vector<double>{0.9, 0.6, 0.4}, Labels{1, 0, 1}) -
                 0.8333333) < 1e-6);
  CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.7, 0.1}, Labels{0, 0, 0, 1}) == 0.25);
  CHECK_THROWS_AS(average_precision(std::vector<double>{0.1}, Labels{0}), MetricError);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(40);
    const std::vector<double> s = random_scores(rng, m);
    Labels y(m);
    for (auto& v : y) v = rng.uniform() < 0.4;
    y[0] = 1;
    CHECK(std::abs(average_precision(s, y) - pair_ap(s, y)) < 1e-9);
  }
}

TEST_CASE("macro, micro and mAP") {
  // Class 0 perfect, class 1 fully tied.
  const std::vector<double> s = {0.9, 0.5, 0.1, 0.5, 0.8, 0.5, 0.2, 0.5};
  const LabelBatch y(4, 2, {1, 1, 0, 0, 1, 1, 0, 0});
  const ClassMetric macro = macro_auc(s, y);
  CHECK(macro.value == 0.75);
  CHECK(macro.per_class == std::vector<double>{1.0, 0.5});

  const LabelBatch skip(4, 2, {1, 0, 0, 0, 1, 0, 0, 0});
  const ClassMetric m2 = macro_auc(s, skip);
  CHECK(m2.skipped == std::vector<std::size_t>{1});
  CHECK(m2.value == 1.0);
  CHECK_THROWS_AS(macro_auc(s, LabelBatch(4, 2, std::vector<std::int8_t>(8, 0))), MetricError);

  // One class: micro equals the per-class AUC.
  const std::vector<double> one = {0.3, 0.9, 0.4, 0.1};
  const LabelBatch y1(4, 1, {0, 1, 1, 0});
  CHECK(micro_auc(one, y1) == roc_auc(one, Labels{0, 1, 1, 0}));
  // Unknown entries drop out of the pool.
  const LabelBatch y1u(4, 1, {0, 1, -1, 0});
  CHECK(micro_auc(one, y1u) == roc_auc(std::vector<double>{0.3, 0.9, 0.1}, Labels{0, 1, 0}));

  // Positives ranked first in every class.
  const std::vector<double> ranked = {0.9, 0.8, 0.1, 0.2, 0.7, 0.05};
  const LabelBatch yr(3, 2, {1, 1, 0, 0, 1, 0});
  CHECK(mean_average_precision(ranked, yr).value == 1.0);
}

TEST_CASE("panel metrics match brute force") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 20, cols = 5;
    const std::vector<double> s = random_scores(rng, rows * cols);
    const LabelBatch y = random_panel_labels(rng, rows, cols);

    double macro_sum = 0.0, ap_sum = 0.0;
    std::size_t macro_n = 0, ap_n = 0;
    std::vector<double> pool_s;
    Labels pool_y;
    for (std::size_t c = 0; c < cols; ++c) {
      std::vector<double> cs;
      Labels cy;
      for (std::size_t r = 0; r < rows; ++r) {
        if (y.at(r, c) < 0) continue;
        cs.push_back(s[r * cols + c]);
        cy.push_back(static_cast<std::int8_t>(y.at(r, c)));
      }
      int pos = 0, neg = 0;
      for (auto v : cy) (v ? pos : neg)++;
      if (pos && neg) {
        macro_sum += pair_auc(cs, cy);
        ++macro_n;
      }
      if (pos) {
        ap_sum += pair_ap(cs, cy);
        ++ap_n;
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i)
      if (y.values[i] >= 0) {
        pool_s.push_back(s[i]);
        pool_y.push_back(y.values[i]);
      }
    const EvalResult r = evaluate(s, y);
    CHECK(std::abs(r.macro_auc - macro_sum / double(macro_n)) < 1e-9);
    CHECK(std::abs(r.map - ap_sum / double(ap_n)) < 1e-9);
    CHECK(std::abs(r.micro_auc - pair_auc(pool_s, pool_y)) < 1e-9);
    for (double v : {r.macro_auc, r.micro_auc, r.map}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("bootstrap examples") {
  // Constant data: every resample gives the same metric.
  const std::vector<double> s = {1.0, 2.0, 3.0, 4.0};
  const LabelBatch y(4, 1, {0, 0, 1, 1});
  const PanelMetric constant = [](const std::vector<double>&, const LabelBatch&) { return 0.7; };
  const BootstrapCI flat = bootstrap_ci(constant, s, y, 50, 0.05, 9);
  CHECK(flat.lo == 0.7);
  CHECK(flat.hi == 0.7);
  CHECK(flat.point == 0.7);

  // alpha = 1 collapses both bounds onto the median resample.
  Rng rng(4);
  std::vector<double> big(60);
  Labels by(60);
  for (std::size_t i = 0; i < 60; ++i) {
    by[i] = i % 2;
    big[i] = rng.normal() + by[i];
  }
  const LabelBatch yb(60, 1, by);
  const BootstrapCI med = bootstrap_ci(micro_auc_metric(), big, yb, 101, 1.0, 3);
  CHECK(med.lo == med.hi);

  const BootstrapCI a = bootstrap_ci(micro_auc_metric(), big, yb, 200, 0.05, 11);
  const BootstrapCI b = bootstrap_ci(micro_auc_metric(), big, yb, 200, 0.05, 11);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo <= a.point);
  CHECK(a.point <= a.hi);

  const BootstrapCI defaults;
  CHECK(defaults.resamples == 1000);
  CHECK(defaults.alpha == 0.05);

  CHECK_THROWS_AS(bootstrap_ci(micro_auc_metric(), big, yb, 0), ConfigError);
  CHECK_THROWS_AS(bootstrap_ci(micro_auc_metric(), big, yb, 10, 0.0), ConfigError);
  // One positive and one negative among 40 rows: most resamples miss one.
  Labels rare(40, -1);
  rare[0] = 1;
  rare[1] = 0;
  CHECK_THROWS_AS(bootstrap_ci(micro_auc_metric(), std::vector<double>(40, 0.5),
                               LabelBatch(40, 1, rare), 200),
                  MetricError);
}

TEST_CASE("nearest rank percentiles") {
  const std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(nearest_rank(v, 0.025) == 1);
  CHECK(nearest_rank(v, 0.5) == 5);
  CHECK(nearest_rank(v, 0.975) == 10);
  CHECK(nearest_rank(v, 0.0) == 1);
  CHECK_THROWS_AS(nearest_rank({}, 0.5), MetricError);
}

TEST_CASE("macro bootstrap treats a lost class as degenerate") {
  const std::vector<double> s = {0.9, 0.1, 0.2, 0.8, 0.3, 0.3, 0.7, 0.6};
  const LabelBatch y(4, 2, {1, 0, 0, 1, 0, 0, 1, 1});
  const ClassMetric full = macro_auc(s, y);
  const PanelMetric metric = macro_auc_metric(full.evaluated);
  const BootstrapCI ci = bootstrap_ci(metric, s, y, 400, 0.05, 1);
  CHECK(ci.degenerate > 0);
  CHECK(ci.point == full.value);
}
