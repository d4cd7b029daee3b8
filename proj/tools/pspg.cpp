// pspg: data generation, both training phases, evaluation, gradient checks
// and the prompt-length sweep.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pspg/gradsuite.hpp"
#include "pspg/train.hpp"

using namespace pspg;
namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override, e.g. prompt.schedule.epochs=20 (repeatable)");
    app->add_option("--seed", seed, "run seed");
  }

  RunConfig load() const {
    RunConfig cfg = path.empty() ? RunConfig() : load_config(path);
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (!overrides.empty()) cfg = with_overrides(cfg, overrides);
    cfg.validate();
    return cfg;
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

// The dataset's own seen-class list decides the split.
RunConfig with_data(RunConfig cfg, const Dataset& train) {
  cfg.data.seen_classes = train.seen_classes;
  cfg.data.classes = train.classes();
  cfg.data.raw_dim = train.raw_dim;
  cfg.validate();
  return cfg;
}

struct LogSink {
  std::ofstream file;
  std::ostream* stream = nullptr;

  explicit LogSink(const std::string& path) {
    if (path == "-") {
      stream = &std::cout;
    } else if (!path.empty()) {
      file.open(path, std::ios::binary);
      if (!file) throw std::runtime_error("cannot write " + path);
      stream = &file;
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-prompt generation for zero-shot multi-label classification"};
  app.require_subcommand(1);

  ConfigFlags gen_cfg, pre_cfg, prompt_cfg, sweep_cfg;

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/val/test splits");
  std::string gen_out;
  gen_cfg.add(gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "contrastive backbone training");
  std::string pre_data, pre_out, pre_log;
  pre_cfg.add(pre);
  pre->add_option("--data", pre_data, "dataset root")->required();
  pre->add_option("--out", pre_out, "checkpoint path")->required();
  pre->add_option("--log", pre_log, "epoch log path, '-' for stdout");

  auto* prompt = app.add_subcommand("prompt-learn", "frozen-backbone prompt learning");
  std::string pl_data, pl_backbone, pl_out, pl_init, pl_log;
  prompt_cfg.add(prompt);
  prompt->add_option("--data", pl_data, "dataset root")->required();
  prompt->add_option("--backbone", pl_backbone, "pretrain checkpoint")->required();
  prompt->add_option("--out", pl_out, "checkpoint path")->required();
  prompt->add_option("--init", pl_init, "start from an earlier prompt checkpoint");
  prompt->add_option("--log", pl_log, "epoch log path, '-' for stdout");

  auto* ev = app.add_subcommand("eval", "metrics with bootstrap confidence intervals");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_agg, ev_format = "json", ev_out, ev_pred;
  EvalOptions ev_opt;
  bool ev_baseline = false;
  ev->add_option("--ckpt", ev_ckpt, "prompt checkpoint (pretrain checkpoint with --baseline)")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--split", ev_split, "split directory")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--bootstrap", ev_opt.bootstrap, "resamples, 0 for point estimates only");
  ev->add_option("--alpha", ev_opt.alpha, "two-sided CI level");
  ev->add_option("--agg", ev_agg, "position aggregation")->check(CLI::IsMember({"mean", "max"}));
  ev->add_option("--format", ev_format, "report format")->check(CLI::IsMember({"json", "csv"}));
  ev->add_option("--seed", ev_opt.seed, "bootstrap seed");
  ev->add_option("--out", ev_out, "report path (stdout when absent)");
  ev->add_option("--predictions", ev_pred, "per-sample CSV path");
  ev->add_flag("--baseline", ev_baseline, "score the fixed-template dual-prompt baseline");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every module");
  std::size_t gc_instances = 10;
  std::uint64_t gc_seed = 0;
  gc->add_option("--instances", gc_instances, "random instances per module");
  gc->add_option("--seed", gc_seed, "base seed");

  auto* sw = app.add_subcommand("sweep", "prompt-length sweep");
  std::string sw_data, sw_backbone, sw_out;
  std::vector<std::size_t> sw_lengths = {8, 16, 32};
  sweep_cfg.add(sw);
  sw->add_option("--data", sw_data, "dataset root")->required();
  sw->add_option("--backbone", sw_backbone, "pretrain checkpoint")->required();
  sw->add_option("--lengths", sw_lengths, "prompt lengths")->delimiter(',');
  sw->add_option("--out", sw_out, "table path (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      const RunConfig cfg = gen_cfg.load();
      write_splits(generate(cfg.data), gen_out);
      std::cout << "wrote " << gen_out << "/{train,val,test}\n";
    } else if (*pre) {
      const Dataset train = read_dataset(fs::path(pre_data) / "train");
      const RunConfig cfg = with_data(pre_cfg.load(), train);
      LogSink sink(pre_log);
      const PretrainResult r = train_pretrain(cfg, train, sink.stream);
      save_run(pre_out, r.backbone.params(), cfg, "pretrain");
    } else if (*prompt) {
      const Dataset train = read_dataset(fs::path(pl_data) / "train");
      const Dataset val = read_dataset(fs::path(pl_data) / "val");
      const RunConfig cfg = with_data(prompt_cfg.load(), train);
      const ParamList backbone = load_run(pl_backbone).params;
      std::optional<ParamList> init;
      if (!pl_init.empty()) init = load_run(pl_init).params;
      LogSink sink(pl_log);
      const PromptResult r =
          train_prompt(cfg, backbone, train, val, init ? &*init : nullptr, sink.stream);
      save_run(pl_out, r.model.params(), cfg, "prompt", r.best_epoch, r.best_val_macro_auc);
      std::cerr << "best epoch " << r.best_epoch << ", val seen macro AUC "
                << r.best_val_macro_auc << "\n";
    } else if (*ev) {
      const SavedRun run = load_run(ev_ckpt);
      const Dataset ds = read_dataset(fs::path(ev_data) / ev_split);
      RunConfig cfg = run.config;
      if (!ev_agg.empty()) cfg.model.aggregation = parse_aggregation(ev_agg);
      ev_opt.batch = cfg.prompt.batch_size;
      ClassifierOutput out;
      if (ev_baseline) {
        Backbone bb(cfg.model.backbone, cfg.seed);
        load_params(bb.params(), run.params);
        NoGradGuard no_grad;
        out = template_predict(bb, ds.all_images(), baseline_templates(ds.classes()),
                               cfg.model.aggregation);
      } else {
        SavedRun adjusted = run;
        adjusted.config = cfg;
        out = predict_dataset(model_from_run(adjusted), ds, ev_opt.batch);
      }
      const std::vector<double> scores(out.probs.data().begin(), out.probs.data().end());
      const EvalReport report =
          evaluate_panel(scores, ds.labels, ds.seen_classes, ev_opt, cfg.model.aggregation);
      const std::string text = ev_format == "json" ? report.to_json() : report.to_csv();
      if (ev_out.empty())
        std::cout << text;
      else
        write_file(ev_out, text);
      if (!ev_pred.empty()) write_file(ev_pred, predictions_csv(out));
    } else if (*gc) {
      const auto start = std::chrono::steady_clock::now();
      const auto items = run_gradcheck_suite(gc_instances, gc_seed);
      for (const auto& item : items) {
        std::printf("%-18s max_rel_error=%.3e %s\n", item.module.c_str(), item.max_rel_error,
                    item.max_rel_error < kGradcheckTolerance ? "ok" : "FAIL");
      }
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("%zu modules, %zu instances each, %.1f s\n", items.size(), gc_instances, secs);
      return gradcheck_passed(items) ? 0 : 1;
    } else if (*sw) {
      const Dataset train = read_dataset(fs::path(sw_data) / "train");
      const Dataset val = read_dataset(fs::path(sw_data) / "val");
      const Dataset test = read_dataset(fs::path(sw_data) / "test");
      const RunConfig cfg = with_data(sweep_cfg.load(), train);
      const ParamList backbone = load_run(sw_backbone).params;
      const auto rows = run_length_sweep(cfg, backbone, train, val, test, sw_lengths);
      const std::string table = sweep_table(rows);
      if (sw_out.empty())
        std::cout << table;
      else
        write_file(sw_out, table);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
