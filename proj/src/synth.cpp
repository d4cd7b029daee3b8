#include "pspg/synth.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pspg/rng.hpp"

namespace pspg {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (classes < 1 || classes > kMaxSynthClasses)
    throw ConfigError("synth: classes must lie in [1, " + std::to_string(kMaxSynthClasses) + "]");
  if (classes > raw_dim)
    throw ConfigError("synth: " + std::to_string(classes) + " prototypes do not fit in raw_dim " +
                      std::to_string(raw_dim));
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw ConfigError("synth: base_rate must lie in (0, 1)");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
  if (!(prototype_scale > 0.0)) throw ConfigError("synth: prototype_scale must be positive");
  if (seen_classes.empty()) throw ConfigError("synth: seen_classes must not be empty");
  for (std::size_t c : seen_classes)
    if (c >= classes) throw ConfigError("synth: seen class " + std::to_string(c) + " out of range");
  for (const auto& p : pair_boost)
    if (p.a >= classes || p.b >= classes || p.a == p.b)
      throw ConfigError("synth: invalid boosted pair");
  if (train_samples == 0 || val_samples == 0 || test_samples == 0)
    throw ConfigError("synth: every split needs at least one sample");
}

std::vector<std::size_t> SynthConfig::unseen_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c)
    if (std::find(seen_classes.begin(), seen_classes.end(), c) == seen_classes.end())
      out.push_back(c);
  return out;
}

Tensor Dataset::image_rows(const std::vector<std::size_t>& rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * raw_dim);
  for (std::size_t r : rows) {
    if (r >= size()) throw DimensionError("dataset: row " + std::to_string(r) + " out of range");
    out.insert(out.end(), images.begin() + r * raw_dim, images.begin() + (r + 1) * raw_dim);
  }
  return Tensor::from({rows.size(), raw_dim}, std::move(out));
}

Tensor Dataset::all_images() const { return Tensor::from({size(), raw_dim}, images); }

std::vector<double> label_distribution(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t outcomes = std::size_t{1} << cfg.classes;
  const double logit = std::log(cfg.base_rate / (1.0 - cfg.base_rate));
  std::vector<double> w(outcomes);
  for (std::size_t y = 0; y < outcomes; ++y) {
    double e = logit * std::popcount(y);
    for (const auto& p : cfg.pair_boost)
      if ((y >> p.a & 1) && (y >> p.b & 1)) e += p.boost;
    w[y] = std::exp(e);
  }
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= z;
  return w;
}

std::vector<double> analytic_marginals(const SynthConfig& cfg) {
  const std::vector<double> dist = label_distribution(cfg);
  std::vector<double> out(cfg.classes, 0.0);
  for (std::size_t y = 0; y < dist.size(); ++y)
    for (std::size_t k = 0; k < cfg.classes; ++k)
      if (y >> k & 1) out[k] += dist[y];
  return out;
}

double analytic_joint(const SynthConfig& cfg, std::size_t a, std::size_t b) {
  const std::vector<double> dist = label_distribution(cfg);
  double out = 0.0;
  for (std::size_t y = 0; y < dist.size(); ++y)
    if ((y >> a & 1) && (y >> b & 1)) out += dist[y];
  return out;
}

std::vector<TextTokens> class_name_tokens(std::size_t classes) {
  std::vector<TextTokens> out;
  for (std::size_t k = 0; k < classes; ++k)
    out.push_back({kClassTemplateToken, static_cast<std::uint32_t>(kFirstClassToken + k)});
  return out;
}

TextTokens report_tokens(const LabelBatch& labels, std::size_t row) {
  TextTokens out = {kReportPrefix};
  for (std::size_t k = 0; k < labels.cols; ++k)
    if (labels.at(row, k) == 1) out.push_back(static_cast<std::uint32_t>(kFirstClassToken + k));
  return out;
}

std::vector<TemplatePair> baseline_templates(std::size_t classes) {
  std::vector<TemplatePair> out;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto cls = static_cast<std::uint32_t>(kFirstClassToken + k);
    out.push_back({{kFindingsToken, kSuggestingToken, cls}, {kNoToken, kEvidenceToken, kOfToken, cls}});
  }
  return out;
}

namespace {

std::vector<double> make_prototypes(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.classes, d = cfg.raw_dim;
  std::vector<double> p(n * d);
  for (double& v : p) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = p.data() + i * d;
    for (std::size_t j = 0; j < i; ++j) {
      const double* prev = p.data() + j * d;
      const double dot = std::inner_product(row, row + d, prev, 0.0);
      for (std::size_t k = 0; k < d; ++k) row[k] -= dot * prev[k];
    }
    const double norm = std::sqrt(std::inner_product(row, row + d, row, 0.0));
    if (!(norm > 1e-9)) throw NumericError("synth: degenerate prototype");
    for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
  }
  return p;
}

Dataset make_split(const SynthConfig& cfg, const std::string& name, std::size_t samples,
                   const std::vector<double>& cumulative, const std::vector<double>& prototypes,
                   Rng& rng) {
  Dataset ds;
  ds.split = name;
  ds.raw_dim = cfg.raw_dim;
  ds.seed = cfg.seed;
  ds.seen_classes = cfg.seen_classes;
  ds.class_tokens = class_name_tokens(cfg.classes);
  std::vector<std::int8_t> labels(samples * cfg.classes);
  ds.images.resize(samples * cfg.raw_dim);
  for (std::size_t s = 0; s < samples; ++s) {
    const double u = rng.uniform();
    const std::size_t y = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end() - 1, u) - cumulative.begin());
    double* image = ds.images.data() + s * cfg.raw_dim;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      const bool on = y >> k & 1;
      labels[s * cfg.classes + k] = on ? 1 : 0;
      if (!on) continue;
      for (std::size_t j = 0; j < cfg.raw_dim; ++j)
        image[j] += cfg.prototype_scale * prototypes[k * cfg.raw_dim + j];
    }
    for (std::size_t j = 0; j < cfg.raw_dim; ++j)
      image[j] = static_cast<double>(static_cast<float>(image[j] + cfg.noise_sigma * rng.normal()));
  }
  ds.labels = LabelBatch(samples, cfg.classes, std::move(labels));
  for (std::size_t s = 0; s < samples; ++s) ds.reports.push_back(report_tokens(ds.labels, s));
  return ds;
}

}  // namespace

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthData out;
  out.prototypes = make_prototypes(cfg, rng);
  const std::vector<double> dist = label_distribution(cfg);
  std::vector<double> cumulative(dist.size());
  std::partial_sum(dist.begin(), dist.end(), cumulative.begin());
  out.train = make_split(cfg, "train", cfg.train_samples, cumulative, out.prototypes, rng);
  out.val = make_split(cfg, "val", cfg.val_samples, cumulative, out.prototypes, rng);
  out.test = make_split(cfg, "test", cfg.test_samples, cumulative, out.prototypes, rng);
  return out;
}

std::vector<double> prototype_scores(const Dataset& ds, const std::vector<double>& prototypes) {
  const std::size_t n = ds.size(), c = ds.classes(), d = ds.raw_dim;
  if (prototypes.size() != c * d) throw DimensionError("prototype_scores: shape mismatch");
  std::vector<double> out(n * c);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < c; ++k)
      out[s * c + k] = std::inner_product(ds.images.begin() + s * d, ds.images.begin() + (s + 1) * d,
                                          prototypes.begin() + k * d, 0.0);
  return out;
}

// ---- files -----------------------------------------------------------------

namespace {

std::string join_ids(const TextTokens& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(t[i]);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path.filename().string() + ": cannot open");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Each non-final line must end with '\n'; returns the integer rows.
std::vector<std::vector<long>> parse_csv(const fs::path& path) {
  const std::string text = read_text(path);
  const std::string name = path.filename().string();
  std::vector<std::vector<long>> rows;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    ++line;
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos)
      throw ParseError(name + ":" + std::to_string(line) + ": missing newline at offset " +
                       std::to_string(text.size()) + " (truncated file?)");
    std::vector<long> row;
    std::size_t p = pos;
    while (p <= end) {
      long value = 0;
      const auto [next, ec] = std::from_chars(text.data() + p, text.data() + end, value);
      if (ec != std::errc())
        throw ParseError(name + ":" + std::to_string(line) + ": expected an integer at offset " +
                         std::to_string(p));
      row.push_back(value);
      p = static_cast<std::size_t>(next - text.data());
      if (p == end) break;
      if (text[p] != ',')
        throw ParseError(name + ":" + std::to_string(line) + ": unexpected character at offset " +
                         std::to_string(p));
      ++p;
    }
    rows.push_back(std::move(row));
    pos = end + 1;
  }
  return rows;
}

std::vector<TextTokens> to_tokens(const std::vector<std::vector<long>>& rows, const char* file) {
  std::vector<TextTokens> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    TextTokens t;
    for (long v : rows[i]) {
      if (v < 0 || v > 0xFFFFFFFFL)
        throw ParseError(std::string(file) + ":" + std::to_string(i + 1) + ": token id " +
                         std::to_string(v) + " out of range");
      t.push_back(static_cast<std::uint32_t>(v));
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json meta;
  meta["format_version"] = 1;
  meta["split"] = ds.split;
  meta["samples"] = ds.size();
  meta["classes"] = ds.classes();
  meta["raw_dim"] = ds.raw_dim;
  meta["seed"] = ds.seed;
  meta["seen_classes"] = ds.seen_classes;
  meta["images"] = {{"file", "images.f32"}, {"dtype", "f32le"}, {"shape", {ds.size(), ds.raw_dim}}};
  meta["position_order"] = "global_first";
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  std::string bytes;
  bytes.reserve(ds.images.size() * 4);
  for (double v : ds.images) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  write_text(dir / "images.f32", bytes);

  std::string labels;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.classes(); ++c) {
      if (c) labels += ',';
      labels += std::to_string(ds.labels.at(r, c));
    }
    labels += '\n';
  }
  write_text(dir / "labels.csv", labels);

  std::string reports;
  for (const auto& t : ds.reports) reports += join_ids(t) + "\n";
  write_text(dir / "reports.csv", reports);

  std::string classes;
  for (const auto& t : ds.class_tokens) classes += join_ids(t) + "\n";
  write_text(dir / "classes.csv", classes);
}

Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  json meta;
  try {
    meta = json::parse(read_text(dir / "meta.json"));
    ds.split = meta.at("split").get<std::string>();
    ds.raw_dim = meta.at("raw_dim").get<std::size_t>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.seen_classes = meta.at("seen_classes").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("meta.json: ") + e.what());
  }
  const std::size_t samples = meta["samples"].get<std::size_t>();
  const std::size_t classes = meta["classes"].get<std::size_t>();

  const std::string bytes = read_text(dir / "images.f32");
  const std::size_t expected = samples * ds.raw_dim * 4;
  if (bytes.size() != expected)
    throw ParseError("images.f32: expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(bytes.size()) + " (offset " + std::to_string(bytes.size()) + ")");
  ds.images.resize(samples * ds.raw_dim);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v))
      throw ParseError("images.f32: non-finite value at offset " + std::to_string(4 * i));
    ds.images[i] = v;
  }

  const auto label_rows = parse_csv(dir / "labels.csv");
  if (label_rows.size() != samples)
    throw ParseError("labels.csv: expected " + std::to_string(samples) + " rows, got " +
                     std::to_string(label_rows.size()));
  std::vector<std::int8_t> labels;
  labels.reserve(samples * classes);
  for (std::size_t r = 0; r < label_rows.size(); ++r) {
    if (label_rows[r].size() != classes)
      throw ParseError("labels.csv:" + std::to_string(r + 1) + ": expected " +
                       std::to_string(classes) + " columns, got " +
                       std::to_string(label_rows[r].size()));
    for (std::size_t c = 0; c < classes; ++c) {
      const long v = label_rows[r][c];
      if (v < -1 || v > 1)
        throw ParseError("labels.csv:" + std::to_string(r + 1) + ": label " + std::to_string(v) +
                         " in column " + std::to_string(c + 1) + " is not in {-1, 0, 1}");
      labels.push_back(static_cast<std::int8_t>(v));
    }
  }
  ds.labels = LabelBatch(samples, classes, std::move(labels));

  ds.reports = to_tokens(parse_csv(dir / "reports.csv"), "reports.csv");
  if (ds.reports.size() != samples)
    throw ParseError("reports.csv: expected " + std::to_string(samples) + " rows, got " +
                     std::to_string(ds.reports.size()));
  ds.class_tokens = to_tokens(parse_csv(dir / "classes.csv"), "classes.csv");
  if (ds.class_tokens.size() != classes)
    throw ParseError("classes.csv: expected " + std::to_string(classes) + " rows, got " +
                     std::to_string(ds.class_tokens.size()));
  return ds;
}

void write_splits(const SynthData& data, const fs::path& root) {
  write_dataset(data.train, root / "train");
  write_dataset(data.val, root / "val");
  write_dataset(data.test, root / "test");
}

GzslLabels gzsl_split(const LabelBatch& train, const LabelBatch& test,
                      const std::vector<std::size_t>& seen) {
  if (seen.empty()) throw ConfigError("gzsl_split: seen set must not be empty");
  std::vector<bool> keep(train.cols, false);
  for (std::size_t c : seen) {
    if (c >= train.cols) throw ConfigError("gzsl_split: seen class out of range");
    keep[c] = true;
  }
  GzslLabels out{train, test};
  for (std::size_t r = 0; r < train.rows; ++r)
    for (std::size_t c = 0; c < train.cols; ++c)
      if (!keep[c]) out.train.values[r * train.cols + c] = -1;
  return out;
}

}  // namespace pspg
