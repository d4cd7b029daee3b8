#include "pspg/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pspg {

using nlohmann::json;

void PhaseConfig::validate() const {
  schedule.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (adam.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

RunConfig::RunConfig() {
  model.backbone.raw_dim = data.raw_dim;
  model.backbone.vocab_size = data.vocab_size();
  model.decoder.mode = PromptMode::kPrefix;
  // std 0.02 rescaled from hidden width 512 to 64: 0.02 * sqrt(8).
  model.decoder.init_std = 0.057;

  pretrain.optimizer = OptimizerKind::kAdamW;
  pretrain.schedule = {3e-3, 1e-6, 2, 15};
  pretrain.batch_size = 64;

  prompt.optimizer = OptimizerKind::kSgd;
  prompt.schedule = {1.0, 1e-3, 5, 50};
  prompt.batch_size = 64;
  prompt.adam.weight_decay = 0.0;
}

void RunConfig::validate() {
  data.validate();
  model.sync();
  loss.validate();
  pretrain.validate();
  prompt.validate();
  if (model.backbone.raw_dim != data.raw_dim)
    throw ConfigError("model.backbone.raw_dim " + std::to_string(model.backbone.raw_dim) +
                      " differs from data.raw_dim " + std::to_string(data.raw_dim));
  if (model.backbone.vocab_size < data.vocab_size())
    throw ConfigError("model.backbone.vocab_size must be >= " + std::to_string(data.vocab_size()));
  if (selection != "macro_auc") throw ConfigError("selection must be macro_auc");
}

namespace {

json schedule_json(const Schedule& s) {
  return {{"base_lr", s.base_lr},
          {"warmup_lr", s.warmup_lr},
          {"warmup_epochs", s.warmup_epochs},
          {"epochs", s.epochs}};
}

json phase_json(const PhaseConfig& p) {
  return {{"optimizer", optimizer_name(p.optimizer)},
          {"schedule", schedule_json(p.schedule)},
          {"batch_size", p.batch_size},
          {"momentum", p.momentum},
          {"adam",
           {{"beta1", p.adam.beta1},
            {"beta2", p.adam.beta2},
            {"eps", p.adam.eps},
            {"weight_decay", p.adam.weight_decay}}}};
}

json to_json_doc(const RunConfig& c) {
  json boosts = json::array();
  for (const auto& b : c.data.pair_boost) boosts.push_back({{"a", b.a}, {"b", b.b}, {"boost", b.boost}});
  const auto& bb = c.model.backbone;
  const auto& d = c.model.decoder;
  return {
      {"seed", c.seed},
      {"selection", c.selection},
      {"data",
       {{"classes", c.data.classes},
        {"raw_dim", c.data.raw_dim},
        {"train_samples", c.data.train_samples},
        {"val_samples", c.data.val_samples},
        {"test_samples", c.data.test_samples},
        {"base_rate", c.data.base_rate},
        {"prototype_scale", c.data.prototype_scale},
        {"noise_sigma", c.data.noise_sigma},
        {"pair_boost", boosts},
        {"seen_classes", c.data.seen_classes},
        {"seed", c.data.seed}}},
      {"model",
       {{"backbone",
         {{"raw_dim", bb.raw_dim},
          {"local_count", bb.local_count},
          {"joint_dim", bb.joint_dim},
          {"embed_dim", bb.embed_dim},
          {"vocab_size", bb.vocab_size},
          {"max_text_len", bb.max_text_len},
          {"tau_init", bb.tau_init}}},
        {"decoder",
         {{"length", d.length},
          {"hidden", d.hidden},
          {"heads", d.heads},
          {"mode", prompt_mode_name(d.mode)},
          {"layout", layout_name(d.layout)},
          {"init_std", d.init_std}}},
        {"features", feature_mode_name(c.model.features)},
        {"aggregation", aggregation_name(c.model.aggregation)}}},
      {"loss",
       {{"gamma_pos", c.loss.gamma_pos},
        {"gamma_neg", c.loss.gamma_neg},
        {"clip", c.loss.clip},
        {"spcl_enabled", c.loss.spcl_enabled},
        {"pcl_variant", c.loss.pcl_variant}}},
      {"pretrain", phase_json(c.pretrain)},
      {"prompt", phase_json(c.prompt)},
  };
}

// Overlays `patch` onto `base`, refusing keys `base` does not have.
void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + (path.empty() ? "root" : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + here + "'");
    if (base[key].is_object())
      merge(base[key], value, here);
    else
      base[key] = value;
  }
}

Schedule schedule_from(const json& j) {
  return {j.at("base_lr").get<double>(), j.at("warmup_lr").get<double>(),
          j.at("warmup_epochs").get<std::size_t>(), j.at("epochs").get<std::size_t>()};
}

PhaseConfig phase_from(const json& j) {
  PhaseConfig p;
  p.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  p.schedule = schedule_from(j.at("schedule"));
  p.batch_size = j.at("batch_size").get<std::size_t>();
  p.momentum = j.at("momentum").get<double>();
  const json& a = j.at("adam");
  p.adam = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>(),
            a.at("weight_decay").get<double>()};
  return p;
}

RunConfig from_json_doc(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.selection = j.at("selection").get<std::string>();
  const json& d = j.at("data");
  c.data.classes = d.at("classes").get<std::size_t>();
  c.data.raw_dim = d.at("raw_dim").get<std::size_t>();
  c.data.train_samples = d.at("train_samples").get<std::size_t>();
  c.data.val_samples = d.at("val_samples").get<std::size_t>();
  c.data.test_samples = d.at("test_samples").get<std::size_t>();
  c.data.base_rate = d.at("base_rate").get<double>();
  c.data.prototype_scale = d.at("prototype_scale").get<double>();
  c.data.noise_sigma = d.at("noise_sigma").get<double>();
  c.data.pair_boost.clear();
  for (const auto& b : d.at("pair_boost"))
    c.data.pair_boost.push_back(
        {b.at("a").get<std::size_t>(), b.at("b").get<std::size_t>(), b.at("boost").get<double>()});
  c.data.seen_classes = d.at("seen_classes").get<std::vector<std::size_t>>();
  c.data.seed = d.at("seed").get<std::uint64_t>();

  const json& m = j.at("model");
  const json& bb = m.at("backbone");
  auto& b = c.model.backbone;
  b.raw_dim = bb.at("raw_dim").get<std::size_t>();
  b.local_count = bb.at("local_count").get<std::size_t>();
  b.joint_dim = bb.at("joint_dim").get<std::size_t>();
  b.embed_dim = bb.at("embed_dim").get<std::size_t>();
  b.vocab_size = bb.at("vocab_size").get<std::size_t>();
  b.max_text_len = bb.at("max_text_len").get<std::size_t>();
  b.tau_init = bb.at("tau_init").get<double>();
  const json& dj = m.at("decoder");
  auto& dc = c.model.decoder;
  dc.length = dj.at("length").get<std::size_t>();
  dc.hidden = dj.at("hidden").get<std::size_t>();
  dc.heads = dj.at("heads").get<std::size_t>();
  dc.mode = parse_prompt_mode(dj.at("mode").get<std::string>());
  dc.layout = parse_layout(dj.at("layout").get<std::string>());
  dc.init_std = dj.at("init_std").get<double>();
  c.model.features = parse_feature_mode(m.at("features").get<std::string>());
  c.model.aggregation = parse_aggregation(m.at("aggregation").get<std::string>());

  const json& l = j.at("loss");
  c.loss.gamma_pos = l.at("gamma_pos").get<double>();
  c.loss.gamma_neg = l.at("gamma_neg").get<double>();
  c.loss.clip = l.at("clip").get<double>();
  c.loss.spcl_enabled = l.at("spcl_enabled").get<bool>();
  c.loss.pcl_variant = l.at("pcl_variant").get<bool>();

  c.pretrain = phase_from(j.at("pretrain"));
  c.prompt = phase_from(j.at("prompt"));
  return c;
}

RunConfig apply_patch(const RunConfig& base, const json& patch) {
  json doc = to_json_doc(base);
  merge(doc, patch, "");
  try {
    RunConfig out = from_json_doc(doc);
    out.validate();
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return to_json_doc(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text, const RunConfig& base) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return apply_patch(base, patch);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return config_from_json(s.str());
}

RunConfig with_overrides(const RunConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  json patch = json::object();
  for (const auto& [key, value] : overrides) {
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    json* at = &patch;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key.find('.', start);
      const std::string part =
          key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("config: bad key '" + key + "'");
      if (dot == std::string::npos) {
        (*at)[part] = v;
        break;
      }
      at = &(*at)[part];
      if (!at->is_null() && !at->is_object())
        throw ConfigError("config: '" + key + "' conflicts with an earlier override");
      start = dot + 1;
    }
  }
  return apply_patch(cfg, patch);
}

RunConfig with_override(const RunConfig& cfg, const std::string& key, const std::string& value) {
  return with_overrides(cfg, {{key, value}});
}

}  // namespace pspg
