#include "pspg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "pspg/rng.hpp"

namespace pspg {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void take_step(const PhaseConfig& phase, const ParamList& params, double lr,
               OptimizerState& state) {
  if (phase.optimizer == OptimizerKind::kSgd)
    sgd_step(params, lr, phase.momentum, state);
  else
    adamw_step(params, lr, phase.adam, state);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed, std::size_t epoch,
                                                    std::size_t min_rows) {
  Rng rng(seed ^ static_cast<std::uint64_t>(epoch));
  const std::vector<std::size_t> order = shuffled_indices(n, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    if (end - start < min_rows) continue;
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

std::vector<TextTokens> pick(const std::vector<TextTokens>& all,
                             const std::vector<std::size_t>& idx) {
  std::vector<TextTokens> out;
  for (std::size_t i : idx) out.push_back(all.at(i));
  return out;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::string sidecar_path(const std::filesystem::path& ckpt) { return ckpt.string() + ".json"; }

}  // namespace

std::string EpochLog::line() const {
  return std::to_string(epoch) + "," + phase + "," + fmt(lr) + "," + fmt(loss_asl) + "," +
         fmt(loss_spcl) + "," + fmt(loss_total) + "," + fmt(val_macro_auc);
}

// ---- phase 1 ---------------------------------------------------------------

PretrainResult train_pretrain(const RunConfig& cfg_in, const Dataset& train, std::ostream* log) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  if (train.reports.size() != train.size()) throw DimensionError("pretrain: dataset has no reports");
  PretrainResult out;
  out.backbone = Backbone(cfg.model.backbone, cfg.seed);
  const ParamList params = out.backbone.params();
  OptimizerState state;
  if (log) *log << kLogHeader << "\n";

  for (std::size_t epoch = 0; epoch < cfg.pretrain.schedule.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.pretrain.schedule);
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& rows : epoch_batches(train.size(), cfg.pretrain.batch_size, cfg.seed, epoch, 2)) {
      const EncodedBatch images = out.backbone.image().encode_batch(train.image_rows(rows));
      const Tensor text = out.backbone.text().encode_tokens_many(pick(train.reports, rows));
      const Tensor loss =
          contrastive_loss(images.global, text, out.backbone.inverse_temperature());
      loss.backward();
      take_step(cfg.pretrain, params, lr, state);
      zero_grads(params);
      total += loss.item();
      ++steps;
    }
    if (steps == 0) throw ConfigError("pretrain: no batch with at least two samples");
    EpochLog e{epoch, "pretrain", lr, kNaN, kNaN, total / static_cast<double>(steps), kNaN};
    if (log) *log << e.line() << "\n" << std::flush;
    out.log.push_back(e);
  }
  return out;
}

// ---- phase 2 ---------------------------------------------------------------

PromptResult train_prompt(const RunConfig& cfg_in, const ParamList& backbone, const Dataset& train,
                          const Dataset& val, const ParamList* init, std::ostream* log) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  const std::vector<std::size_t>& seen = cfg.data.seen_classes;
  for (std::size_t c : seen)
    if (c >= train.classes() || c >= val.classes())
      throw ConfigError("prompt: seen class " + std::to_string(c) + " missing from the data");

  PromptResult out;
  out.model = PspgModel(cfg.model, cfg.seed);
  const ParamList frozen = out.model.backbone().params();
  load_params(frozen, backbone);
  const ParamList trainable = out.model.prompt_params();
  if (init) load_params(trainable, *init);
  set_requires_grad(frozen, false);
  const ParamList frozen_before = snapshot(frozen);

  const std::vector<TextTokens> seen_tokens = pick(train.class_tokens, seen);
  const LabelBatch train_labels = train.labels.select_cols(seen);
  const LabelBatch val_labels = val.labels.select_cols(seen);
  const Tensor val_images = val.all_images();

  EncodedBatch encoded;
  {
    NoGradGuard no_grad;
    encoded = out.model.backbone().image().encode_batch(train.all_images());
  }
  const Tensor inv_temp = out.model.backbone().inverse_temperature();
  const bool pairwise = cfg.loss.spcl_enabled && seen.size() >= 2;

  OptimizerState state;
  ParamList best;
  double best_auc = -1.0;
  if (log) *log << kLogHeader << "\n";

  for (std::size_t epoch = 0; epoch < cfg.prompt.schedule.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.prompt.schedule);
    double sum_asl = 0.0, sum_pair = 0.0, sum_total = 0.0;
    std::size_t steps = 0;
    for (const auto& rows : epoch_batches(train.size(), cfg.prompt.batch_size, cfg.seed, epoch, 1)) {
      const EncodedBatch batch{index_select(encoded.global, rows), index_select(encoded.local, rows)};
      const LabelBatch labels = train_labels.select_rows(rows);
      const ForwardPass pass = out.model.forward(batch, seen_tokens);
      const Tensor asl = asl_loss(pass.out.probs, labels, cfg.loss);
      Tensor pair;
      if (pairwise) {
        const Tensor features =
            pairwise_prompt_features(pass.positive_sequences, out.model.backbone().text());
        pair = cfg.loss.pcl_variant
                   ? pcl_loss(pass.positions, features, labels, inv_temp, cfg.model.aggregation)
                   : spcl_loss(pass.positions, features, cooccurrence_targets(labels), inv_temp,
                               cfg.model.aggregation);
      }
      const Tensor total = total_loss(asl, pair);
      total.backward();
      take_step(cfg.prompt, trainable, lr, state);
      zero_grads(trainable);
      sum_asl += asl.item();
      sum_pair += pair.defined() ? pair.item() : 0.0;
      sum_total += total.item();
      ++steps;
    }

    double val_auc;
    {
      NoGradGuard no_grad;
      const Tensor probs = predict_in_batches(out.model, val_images, seen_tokens, cfg.prompt.batch_size);
      val_auc = macro_auc(values(probs), val_labels).value;
    }
    const double n = static_cast<double>(steps);
    EpochLog e{epoch, "prompt", lr, sum_asl / n, pairwise ? sum_pair / n : kNaN, sum_total / n, val_auc};
    if (log) *log << e.line() << "\n" << std::flush;
    out.log.push_back(e);
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best = snapshot(trainable);
      out.best_epoch = epoch;
    }
  }

  load_params(trainable, best);
  out.best_val_macro_auc = best_auc;
  if (!params_identical(snapshot(frozen), frozen_before))
    throw GraphError("prompt: backbone parameters changed during prompt learning");
  return out;
}

// ---- persistence -----------------------------------------------------------

void save_run(const std::filesystem::path& path, const ParamList& params, const RunConfig& cfg,
              const std::string& phase, std::optional<std::size_t> best_epoch,
              std::optional<double> best_val) {
  write_checkpoint(path, params);
  json side = {{"phase", phase}, {"config", json::parse(config_to_json(cfg))}};
  if (best_epoch) side["best_epoch"] = *best_epoch;
  if (best_val) side["best_val_macro_auc"] = *best_val;
  std::ofstream f(sidecar_path(path), std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + sidecar_path(path));
  f << side.dump(2) << "\n";
}

SavedRun load_run(const std::filesystem::path& path) {
  SavedRun run;
  run.params = read_checkpoint(path);
  std::ifstream f(sidecar_path(path));
  if (!f) throw CheckpointError("missing config sidecar " + sidecar_path(path));
  try {
    const json side = json::parse(f);
    run.phase = side.at("phase").get<std::string>();
    run.config = config_from_json(side.at("config").dump());
  } catch (const json::exception& e) {
    throw CheckpointError(sidecar_path(path) + ": " + e.what());
  }
  return run;
}

PspgModel model_from_run(const SavedRun& run) {
  if (run.phase != "prompt")
    throw CheckpointError("checkpoint holds a '" + run.phase + "' run, expected 'prompt'");
  PspgModel model(run.config.model, run.config.seed);
  load_params(model.params(), run.params);
  return model;
}

// ---- evaluation ------------------------------------------------------------

namespace {

BootstrapCI point_only(double v, const EvalOptions& opt) {
  BootstrapCI ci;
  ci.point = ci.lo = ci.hi = v;
  ci.resamples = 0;
  ci.alpha = opt.alpha;
  ci.seed = opt.seed;
  return ci;
}

BootstrapCI measure(const PanelMetric& metric, const std::vector<double>& scores,
                    const LabelBatch& labels, const EvalOptions& opt) {
  if (opt.bootstrap == 0) return point_only(metric(scores, labels), opt);
  return bootstrap_ci(metric, scores, labels, opt.bootstrap, opt.alpha, opt.seed);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

double EvalReport::point(const std::string& name) const {
  for (const auto& m : metrics)
    if (m.name == name) return m.ci.point;
  throw std::out_of_range("eval report has no metric '" + name + "'");
}

std::string EvalReport::to_json() const {
  json j = json::object();
  for (const auto& m : metrics) {
    json v = {{"point", m.ci.point}};
    if (resamples > 0) {
      v["lo"] = m.ci.lo;
      v["hi"] = m.ci.hi;
      v["degenerate"] = m.ci.degenerate;
    }
    j[m.name] = v;
  }
  json per = json::array();
  for (double v : per_class_auc) per.push_back(finite_or_null(v));
  j["per_class_auc"] = per;
  j["skipped_classes"] = skipped_classes;
  j["resamples"] = resamples;
  if (resamples > 0) j["alpha"] = alpha;
  j["seed"] = seed;
  j["aggregation_mode"] = aggregation;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::string out = resamples > 0 ? "metric,point,lo,hi\n" : "metric,point\n";
  for (const auto& m : metrics) {
    out += m.name + "," + fmt(m.ci.point);
    if (resamples > 0) out += "," + fmt(m.ci.lo) + "," + fmt(m.ci.hi);
    out += "\n";
  }
  return out;
}

EvalReport evaluate_panel(const std::vector<double>& scores, const LabelBatch& labels,
                          const std::vector<std::size_t>& seen, const EvalOptions& opt,
                          Aggregation aggregation) {
  EvalReport r;
  r.resamples = opt.bootstrap;
  r.alpha = opt.alpha;
  r.seed = opt.seed;
  r.aggregation = aggregation_name(aggregation);

  const EvalResult full = evaluate(scores, labels);
  r.per_class_auc = full.per_class_auc;
  r.skipped_classes = full.skipped_classes;
  const ClassMetric macro = macro_auc(scores, labels);
  const ClassMetric ap = mean_average_precision(scores, labels);
  r.metrics.push_back({"macro_auc", measure(macro_auc_metric(macro.evaluated), scores, labels, opt)});
  r.metrics.push_back({"micro_auc", measure(micro_auc_metric(), scores, labels, opt)});
  r.metrics.push_back({"map", measure(map_metric(ap.evaluated), scores, labels, opt)});

  std::vector<std::size_t> unseen;
  for (std::size_t c = 0; c < labels.cols; ++c)
    if (std::find(seen.begin(), seen.end(), c) == seen.end()) unseen.push_back(c);
  auto subset = [&](const std::string& name, const std::vector<std::size_t>& cols) {
    if (cols.empty()) return;
    const LabelBatch sub = labels.select_cols(cols);
    std::vector<double> s;
    s.reserve(labels.rows * cols.size());
    for (std::size_t row = 0; row < labels.rows; ++row)
      for (std::size_t c : cols) s.push_back(scores[row * labels.cols + c]);
    const ClassMetric m = macro_auc(s, sub);
    r.metrics.push_back({name, measure(macro_auc_metric(m.evaluated), s, sub, opt)});
  };
  subset("seen_macro_auc", seen);
  subset("unseen_macro_auc", unseen);
  return r;
}

ClassifierOutput predict_dataset(const PspgModel& model, const Dataset& ds, std::size_t batch) {
  NoGradGuard no_grad;
  ClassifierOutput out;
  predict_in_batches(model, ds.all_images(), ds.class_tokens, batch, &out);
  return out;
}

std::string predictions_csv(const ClassifierOutput& out) {
  std::string s = "sample_id,class_id,prob,pos_sim,neg_sim\n";
  const std::size_t rows = out.probs.dim(0), cols = out.probs.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      s += std::to_string(r) + "," + std::to_string(c) + "," + fmt(out.probs[i]) + "," +
           fmt(out.pos_sims[i]) + "," + fmt(out.neg_sims[i]) + "\n";
    }
  return s;
}

// ---- sweep -----------------------------------------------------------------

std::vector<SweepRow> run_length_sweep(const RunConfig& cfg, const ParamList& backbone,
                                       const Dataset& train, const Dataset& val,
                                       const Dataset& test, const std::vector<std::size_t>& lengths,
                                       std::ostream* log) {
  std::vector<SweepRow> rows;
  for (std::size_t n : lengths) {
    RunConfig run = cfg;
    run.model.decoder.length = n;
    const PromptResult trained = train_prompt(run, backbone, train, val, nullptr, log);
    const ClassifierOutput out = predict_dataset(trained.model, test, run.prompt.batch_size);
    EvalOptions opt;
    opt.bootstrap = 0;
    rows.push_back({n, trained.best_epoch, trained.best_val_macro_auc,
                    evaluate_panel(values(out.probs), test.labels, run.data.seen_classes, opt,
                                   run.model.aggregation)});
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::string out =
      "length,best_epoch,val_seen_macro_auc,macro_auc,micro_auc,map,seen_macro_auc,unseen_macro_auc\n";
  for (const auto& r : rows) {
    out += std::to_string(r.length) + "," + std::to_string(r.best_epoch) + "," +
           fmt(r.best_val_macro_auc);
    for (const char* m : {"macro_auc", "micro_auc", "map", "seen_macro_auc", "unseen_macro_auc"}) {
      double v = kNaN;
      for (const auto& e : r.test.metrics)
        if (e.name == m) v = e.ci.point;
      out += "," + fmt(v);
    }
    out += "\n";
  }
  return out;
}

}  // namespace pspg
