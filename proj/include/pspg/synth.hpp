#pragma once

// Synthetic multi-label data with controlled co-occurrence. Labels follow a
// log-linear distribution over all 2^N_c outcomes,
//   log w(y) = sum_k y_k logit(base_rate) + sum_{(a,b)} boost_ab y_a y_b,
// sampled exactly by enumeration. Images are sums of orthonormal class
// prototypes plus Gaussian noise; reports list the positive class tokens.
//
// Vocabulary: 0 report prefix, 1-2 positive template, 3-5 negative template,
// 6 class-name template, 8 + k class k.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pspg/backbone.hpp"
#include "pspg/model.hpp"
#include "pspg/objectives.hpp"

namespace pspg {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kReportPrefix = 0;
inline constexpr std::uint32_t kFindingsToken = 1;
inline constexpr std::uint32_t kSuggestingToken = 2;
inline constexpr std::uint32_t kNoToken = 3;
inline constexpr std::uint32_t kEvidenceToken = 4;
inline constexpr std::uint32_t kOfToken = 5;
inline constexpr std::uint32_t kClassTemplateToken = 6;
inline constexpr std::uint32_t kFirstClassToken = 8;
inline constexpr std::size_t kMaxSynthClasses = 10;

struct PairBoost {
  std::size_t a = 0;
  std::size_t b = 0;
  double boost = 0.0;  // added log-odds when both are present
};

struct SynthConfig {
  std::size_t classes = 8;
  std::size_t raw_dim = 64;
  std::size_t train_samples = 2000;
  std::size_t val_samples = 200;
  std::size_t test_samples = 500;
  double base_rate = 0.3;
  double prototype_scale = 3.0;
  double noise_sigma = 0.35;
  std::vector<PairBoost> pair_boost = {{0, 1, 1.5}, {2, 3, 1.2}, {4, 6, 1.5}, {5, 7, 1.2}};
  std::vector<std::size_t> seen_classes = {0, 1, 2, 3, 4, 5};
  std::uint64_t seed = 42;

  void validate() const;
  std::size_t vocab_size() const { return kFirstClassToken + classes; }
  std::vector<std::size_t> unseen_classes() const;
};

struct Dataset {
  std::string split;
  std::size_t raw_dim = 0;
  std::vector<double> images;  // [samples x raw_dim], float-representable values
  LabelBatch labels;
  std::vector<TextTokens> reports;
  std::vector<TextTokens> class_tokens;
  std::vector<std::size_t> seen_classes;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.rows; }
  std::size_t classes() const { return labels.cols; }
  Tensor image_rows(const std::vector<std::size_t>& rows) const;  // [rows x raw_dim]
  Tensor all_images() const;
};

struct SynthData {
  Dataset train, val, test;
  std::vector<double> prototypes;  // [classes x raw_dim], orthonormal rows
};

SynthData generate(const SynthConfig& cfg);

// Exact label distribution: probability of each outcome, bit k = class k.
std::vector<double> label_distribution(const SynthConfig& cfg);
std::vector<double> analytic_marginals(const SynthConfig& cfg);
double analytic_joint(const SynthConfig& cfg, std::size_t a, std::size_t b);

std::vector<TextTokens> class_name_tokens(std::size_t classes);
TextTokens report_tokens(const LabelBatch& labels, std::size_t row);
std::vector<TemplatePair> baseline_templates(std::size_t classes);

// <x, prototype_k> for every sample and class, row-major.
std::vector<double> prototype_scores(const Dataset& ds, const std::vector<double>& prototypes);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Writes train/, val/ and test/ under `root`.
void write_splits(const SynthData& data, const std::filesystem::path& root);

struct GzslLabels {
  LabelBatch train;  // unseen columns set to -1
  LabelBatch test;   // unchanged
};

GzslLabels gzsl_split(const LabelBatch& train, const LabelBatch& test,
                      const std::vector<std::size_t>& seen);

}  // namespace pspg
