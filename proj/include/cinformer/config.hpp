#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

namespace cinformer {

enum class AttentionKind { kWindow, kGlobal, kTopK };
enum class TopKVariant { kFullKey, kSelectedKey };

std::string to_string(AttentionKind kind);
std::string to_string(TopKVariant variant);
AttentionKind attention_kind_from(const std::string& s);
TopKVariant topk_variant_from(const std::string& s);

struct AttentionConfig {
  std::array<AttentionKind, 4> kinds{AttentionKind::kWindow, AttentionKind::kWindow,
                                     AttentionKind::kTopK, AttentionKind::kTopK};
  std::size_t heads = 4;
  std::size_t window = 4;
  // Clamped to the token count / width of each hosting stage.
  std::size_t k_tokens = 8;
  std::size_t k_channels = 64;
  TopKVariant topk_variant = TopKVariant::kFullKey;
};

struct ModelConfig {
  std::size_t input_size = 64;
  std::size_t num_classes = 4;
  std::array<std::size_t, 4> stem_widths{16, 32, 64, 128};
  // Stride of the first stem convolution; 1 gives a stride-16 pyramid for tiny inputs.
  std::size_t stem_stride = 2;
  std::size_t fpn_width = 32;
  std::array<std::size_t, 4> stage_widths{32, 64, 128, 256};
  std::array<std::size_t, 4> stage_depths{2, 2, 2, 2};
  AttentionConfig attention;
  bool inject = true;
  bool freeze_stem = false;

  // Input extent must be a multiple of this.
  std::size_t input_multiple() const { return 16 * stem_stride; }
  std::size_t stage_resolution(std::size_t stage) const {
    return input_size / (stem_stride * (std::size_t{2} << stage));
  }
};

struct TrainConfig {
  double lr = 7.5e-4;
  double weight_decay = 5e-3;
  std::size_t batch = 4;
  std::size_t steps = 1000;
  double warmup_frac = 0.1;
  double min_lr_frac = 0.01;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
};

struct DataConfig {
  std::string dir;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

// GroupNorm group count used throughout the CNN paths.
inline constexpr std::size_t kNormGroups = 8;

/// Strict parse: unknown keys are rejected (all offenders listed), missing keys
/// take defaults, the result is validated.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::string& path);
nlohmann::json to_json(const Config& c);

/// Throws ConfigError describing every violated constraint.
void validate(const Config& c);

/// Tiny configuration used by the gradient checks: 16x16 input, 2 classes.
ModelConfig micro_model_config();

}  // namespace cinformer
