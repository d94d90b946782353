#include "cinformer/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "cinformer/errors.hpp"

namespace cinformer {

using nlohmann::json;

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kWindow: return "window";
    case AttentionKind::kGlobal: return "global";
    case AttentionKind::kTopK: return "topk";
  }
  return "window";
}

std::string to_string(TopKVariant variant) {
  return variant == TopKVariant::kFullKey ? "full-key" : "selected-key";
}

AttentionKind attention_kind_from(const std::string& s) {
  if (s == "window") return AttentionKind::kWindow;
  if (s == "global") return AttentionKind::kGlobal;
  if (s == "topk") return AttentionKind::kTopK;
  throw ConfigError("unknown attention kind '" + s + "' (expected window, global or topk)");
}

TopKVariant topk_variant_from(const std::string& s) {
  if (s == "full-key") return TopKVariant::kFullKey;
  if (s == "selected-key") return TopKVariant::kSelectedKey;
  throw ConfigError("unknown topk_variant '" + s + "' (expected full-key or selected-key)");
}

namespace {

void collect_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& prefix,
                     std::vector<std::string>& unknown) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" + prefix + "' must be a JSON object");
  }
  for (const auto& [key, _] : obj.items()) {
    if (allowed.count(key) == 0) unknown.push_back(prefix.empty() ? key : prefix + "." + key);
  }
}

template <class V>
void read(const json& obj, const char* key, V& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + "." + key + "' has the wrong type: " + e.what());
  }
}

template <class V>
void read_array4(const json& obj, const char* key, std::array<V, 4>& out, const std::string& path) {
  if (!obj.contains(key)) return;
  const json& a = obj.at(key);
  if (!a.is_array() || a.size() != 4) {
    throw ConfigError("config key '" + path + "." + key + "' must be an array of 4 values");
  }
  try {
    for (std::size_t i = 0; i < 4; ++i) out[i] = a[i].get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + "." + key + "' has the wrong element type: " + e.what());
  }
}

}  // namespace

Config config_from_json(const json& j) {
  std::vector<std::string> unknown;
  collect_unknown(j, {"model", "train", "data"}, "", unknown);
  Config c;
  const json empty = json::object();
  const json& m = j.contains("model") ? j.at("model") : empty;
  const json& t = j.contains("train") ? j.at("train") : empty;
  const json& d = j.contains("data") ? j.at("data") : empty;
  collect_unknown(m,
                  {"input_size", "num_classes", "stem_widths", "stem_stride", "fpn_width",
                   "stage_widths", "stage_depths", "attention", "inject", "freeze_stem"},
                  "model", unknown);
  collect_unknown(t, {"lr", "weight_decay", "batch", "steps", "warmup_frac", "min_lr_frac", "eval_every", "seed"},
                  "train", unknown);
  collect_unknown(d, {"dir"}, "data", unknown);
  const json& a = m.contains("attention") ? m.at("attention") : empty;
  collect_unknown(a, {"kinds", "heads", "window", "k_tokens", "k_channels", "topk_variant"},
                  "model.attention", unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }

  ModelConfig& mc = c.model;
  read(m, "input_size", mc.input_size, "model");
  read(m, "num_classes", mc.num_classes, "model");
  read_array4(m, "stem_widths", mc.stem_widths, "model");
  read(m, "stem_stride", mc.stem_stride, "model");
  read(m, "fpn_width", mc.fpn_width, "model");
  read_array4(m, "stage_widths", mc.stage_widths, "model");
  read_array4(m, "stage_depths", mc.stage_depths, "model");
  read(m, "inject", mc.inject, "model");
  read(m, "freeze_stem", mc.freeze_stem, "model");
  std::array<std::string, 4> kinds;
  for (std::size_t i = 0; i < 4; ++i) kinds[i] = to_string(mc.attention.kinds[i]);
  read_array4(a, "kinds", kinds, "model.attention");
  for (std::size_t i = 0; i < 4; ++i) mc.attention.kinds[i] = attention_kind_from(kinds[i]);
  read(a, "heads", mc.attention.heads, "model.attention");
  read(a, "window", mc.attention.window, "model.attention");
  read(a, "k_tokens", mc.attention.k_tokens, "model.attention");
  read(a, "k_channels", mc.attention.k_channels, "model.attention");
  std::string variant = to_string(mc.attention.topk_variant);
  read(a, "topk_variant", variant, "model.attention");
  mc.attention.topk_variant = topk_variant_from(variant);

  TrainConfig& tc = c.train;
  read(t, "lr", tc.lr, "train");
  read(t, "weight_decay", tc.weight_decay, "train");
  read(t, "batch", tc.batch, "train");
  read(t, "steps", tc.steps, "train");
  read(t, "warmup_frac", tc.warmup_frac, "train");
  read(t, "min_lr_frac", tc.min_lr_frac, "train");
  read(t, "eval_every", tc.eval_every, "train");
  read(t, "seed", tc.seed, "train");
  read(d, "dir", c.data.dir, "data");
  validate(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json to_json(const Config& c) {
  const ModelConfig& m = c.model;
  json kinds = json::array();
  for (auto k : m.attention.kinds) kinds.push_back(to_string(k));
  return json{
      {"model",
       {{"input_size", m.input_size},
        {"num_classes", m.num_classes},
        {"stem_widths", m.stem_widths},
        {"stem_stride", m.stem_stride},
        {"fpn_width", m.fpn_width},
        {"stage_widths", m.stage_widths},
        {"stage_depths", m.stage_depths},
        {"attention",
         {{"kinds", kinds},
          {"heads", m.attention.heads},
          {"window", m.attention.window},
          {"k_tokens", m.attention.k_tokens},
          {"k_channels", m.attention.k_channels},
          {"topk_variant", to_string(m.attention.topk_variant)}}},
        {"inject", m.inject},
        {"freeze_stem", m.freeze_stem}}},
      {"train",
       {{"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"batch", c.train.batch},
        {"steps", c.train.steps},
        {"warmup_frac", c.train.warmup_frac},
        {"min_lr_frac", c.train.min_lr_frac},
        {"eval_every", c.train.eval_every},
        {"seed", c.train.seed}}},
      {"data", {{"dir", c.data.dir}}}};
}

void validate(const Config& c) {
  std::vector<std::string> problems;
  const ModelConfig& m = c.model;
  auto need = [&problems](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  need(m.stem_stride == 1 || m.stem_stride == 2, "model.stem_stride must be 1 or 2");
  need(m.input_size > 0 && m.stem_stride > 0 && m.input_size % m.input_multiple() == 0,
       "model.input_size must be a positive multiple of " + std::to_string(16 * m.stem_stride));
  need(m.num_classes >= 2, "model.num_classes must be >= 2");
  for (std::size_t i = 0; i < 4; ++i) {
    need(m.stem_widths[i] > 0 && m.stem_widths[i] % kNormGroups == 0,
         "model.stem_widths entries must be positive multiples of 8");
    need(m.stage_widths[i] > 0 && m.stage_widths[i] % kNormGroups == 0,
         "model.stage_widths entries must be positive multiples of 8");
    need(m.stage_depths[i] >= 1, "model.stage_depths entries must be >= 1");
    if (i > 0) need(m.stage_widths[i] == 2 * m.stage_widths[i - 1], "model.stage_widths must double per stage");
  }
  need(m.fpn_width > 0 && m.fpn_width % kNormGroups == 0, "model.fpn_width must be a positive multiple of 8");
  const AttentionConfig& a = m.attention;
  need(a.heads >= 1, "model.attention.heads must be >= 1");
  need(a.window >= 1, "model.attention.window must be >= 1");
  need(a.k_tokens >= 1, "model.attention.k_tokens must be >= 1");
  need(a.k_channels >= 1, "model.attention.k_channels must be >= 1");
  if (problems.empty()) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t res = m.stage_resolution(i);
      if (a.kinds[i] != AttentionKind::kTopK) {
        need(m.stage_widths[i] % a.heads == 0,
             "stage " + std::to_string(i + 1) + " width not divisible by attention.heads");
      }
      if (a.kinds[i] == AttentionKind::kWindow) {
        const std::size_t w = std::min(a.window, res);
        need(res % w == 0, "stage " + std::to_string(i + 1) + " resolution " + std::to_string(res) +
                               " not divisible by window " + std::to_string(w));
      }
    }
  }
  const TrainConfig& t = c.train;
  need(t.lr > 0.0, "train.lr must be positive");
  need(t.weight_decay >= 0.0, "train.weight_decay must be non-negative");
  need(t.batch >= 1, "train.batch must be >= 1");
  need(t.steps >= 1, "train.steps must be >= 1");
  need(t.eval_every >= 1, "train.eval_every must be >= 1");
  need(t.warmup_frac >= 0.0 && t.warmup_frac < 1.0, "train.warmup_frac must be in [0,1)");
  need(t.min_lr_frac >= 0.0 && t.min_lr_frac <= 1.0, "train.min_lr_frac must be in [0,1]");
  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

ModelConfig micro_model_config() {
  ModelConfig m;
  m.input_size = 16;
  m.num_classes = 2;
  m.stem_widths = {32, 32, 32, 32};
  m.stem_stride = 1;
  m.fpn_width = 8;
  m.stage_widths = {8, 16, 32, 64};
  m.stage_depths = {1, 1, 1, 1};
  m.attention.heads = 2;
  m.attention.window = 2;
  m.attention.k_tokens = 3;
  m.attention.k_channels = 12;
  return m;
}

}  // namespace cinformer
