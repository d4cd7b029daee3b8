#pragma once

// Run configuration shared by every CLI subcommand, read from JSON. A config
// file may list any subset of keys; missing keys keep their defaults and
// unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pspg/model.hpp"
#include "pspg/objectives.hpp"
#include "pspg/optim.hpp"
#include "pspg/synth.hpp"

namespace pspg {

struct PhaseConfig {
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  Schedule schedule;
  std::size_t batch_size = 64;
  AdamConfig adam;
  double momentum = 0.0;  // sgd only

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 42;
  SynthConfig data;
  ModelConfig model;
  LossConfig loss;
  PhaseConfig pretrain;
  PhaseConfig prompt;
  std::string selection = "macro_auc";  // validation metric for best-epoch selection

  RunConfig();

  // Syncs the model widths and checks that model and data agree.
  void validate();
};

std::string config_to_json(const RunConfig& cfg);

// Applies a JSON object on top of `base`.
RunConfig config_from_json(const std::string& text, const RunConfig& base = RunConfig());

RunConfig load_config(const std::filesystem::path& path);

// Sets one dotted key, e.g. "prompt.schedule.epochs" = "20". The value is
// parsed as JSON when possible and taken as a string otherwise.
RunConfig with_override(const RunConfig& cfg, const std::string& key, const std::string& value);
// All overrides merged into one patch, validated once.
RunConfig with_overrides(const RunConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace pspg
