#pragma once

// Two-phase training, evaluation reports and the prompt-length sweep.
//
// Phase 1 trains the backbone (both encoders and the temperature) with the
// contrastive loss on image/report pairs. Phase 2 freezes it and trains the
// fusion kernel and the prompt decoder(s) on seen-class labels only,
// keeping the epoch with the best seen-class validation Macro AUC.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pspg/checkpoint.hpp"
#include "pspg/config.hpp"
#include "pspg/metrics.hpp"
#include "pspg/model.hpp"
#include "pspg/synth.hpp"

namespace pspg {

// One log line per epoch:
//   epoch,phase,lr,loss_asl,loss_spcl,loss_total,val_macro_auc
// Terms that do not apply to a phase are written as "nan".
struct EpochLog {
  std::size_t epoch = 0;
  std::string phase;
  double lr = 0.0;
  double loss_asl = 0.0;
  double loss_spcl = 0.0;
  double loss_total = 0.0;
  double val_macro_auc = 0.0;

  std::string line() const;
};

inline constexpr const char* kLogHeader = "epoch,phase,lr,loss_asl,loss_spcl,loss_total,val_macro_auc";

struct PretrainResult {
  Backbone backbone;
  std::vector<EpochLog> log;
};

// `log`, when given, receives the header and each epoch line as it finishes.
PretrainResult train_pretrain(const RunConfig& cfg, const Dataset& train,
                              std::ostream* log = nullptr);

struct PromptResult {
  PspgModel model;  // best-epoch prompt parameters loaded
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_macro_auc = 0.0;
};

// `backbone` must hold every "backbone." tensor; `init`, when given, supplies
// starting fusion and decoder parameters from an earlier prompt checkpoint.
PromptResult train_prompt(const RunConfig& cfg, const ParamList& backbone, const Dataset& train,
                          const Dataset& val, const ParamList* init = nullptr,
                          std::ostream* log = nullptr);

// A checkpoint plus its "<path>.json" sidecar holding the run config.
struct SavedRun {
  RunConfig config;
  ParamList params;
  std::string phase;
};

void save_run(const std::filesystem::path& path, const ParamList& params, const RunConfig& cfg,
              const std::string& phase, std::optional<std::size_t> best_epoch = std::nullopt,
              std::optional<double> best_val = std::nullopt);
SavedRun load_run(const std::filesystem::path& path);

// Rebuilds the classifier from a prompt-phase run.
PspgModel model_from_run(const SavedRun& run);

struct EvalOptions {
  std::size_t bootstrap = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t batch = 64;
};

struct MetricEntry {
  std::string name;
  BootstrapCI ci;  // lo and hi meaningful only when resamples > 0
};

struct EvalReport {
  std::vector<MetricEntry> metrics;  // macro_auc, micro_auc, map, then seen/unseen macro
  std::vector<double> per_class_auc;
  std::vector<std::size_t> skipped_classes;
  std::size_t resamples = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string aggregation;

  double point(const std::string& name) const;
  std::string to_json() const;
  std::string to_csv() const;
};

// Scores and labels cover every class; `seen` picks the seen-class subset.
EvalReport evaluate_panel(const std::vector<double>& scores, const LabelBatch& labels,
                          const std::vector<std::size_t>& seen, const EvalOptions& opt,
                          Aggregation aggregation);

ClassifierOutput predict_dataset(const PspgModel& model, const Dataset& ds, std::size_t batch);

// sample_id,class_id,prob,pos_sim,neg_sim
std::string predictions_csv(const ClassifierOutput& out);

struct SweepRow {
  std::size_t length = 0;
  std::size_t best_epoch = 0;
  double best_val_macro_auc = 0.0;
  EvalReport test;
};

// Phase 2 once per prompt length, all from the same backbone.
std::vector<SweepRow> run_length_sweep(const RunConfig& cfg, const ParamList& backbone,
                                       const Dataset& train, const Dataset& val,
                                       const Dataset& test, const std::vector<std::size_t>& lengths,
                                       std::ostream* log = nullptr);
std::string sweep_table(const std::vector<SweepRow>& rows);

}  // namespace pspg
