#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mvccl {

enum class AttentionScale {
  sqrt_input_width,  // divide logits by √D
  sqrt_head_width,   // divide logits by √(D'/heads)
};

struct ModuleFlags {
  bool fusion = true;
  bool sa = false;
  bool lcm = true;
  bool gcm = true;

  bool operator==(const ModuleFlags&) const = default;
};

struct ModelConfig {
  std::size_t input_height = 96;
  std::size_t input_width = 48;
  std::size_t backbone_stages = 4;
  /// Stage i has min(base << i, max) channels: 16/32/64/64 by default.
  std::size_t backbone_base_width = 16;
  std::size_t backbone_max_width = 64;
  std::size_t feature_width = 64;    // D
  std::size_t attention_width = 32;  // D'
  std::size_t heads = 4;
  std::size_t classifier_hidden = 64;
  AttentionScale attention_scale = AttentionScale::sqrt_input_width;
  ModuleFlags enabled;
  double epsilon = 1e-8;
  double lambda_sim = 1.0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  std::size_t stage_width(std::size_t stage) const;
  std::size_t feature_height() const;  // Ĥ
  std::size_t feature_cols() const;    // Ŵ
  std::size_t tokens() const { return feature_height() * feature_cols(); }
  bool has_local_branch() const { return enabled.sa || enabled.lcm; }
  std::size_t classifier_input_width() const;

  bool operator==(const ModelConfig&) const = default;
};

/// The six rows of the ablation table, in table order.
const std::vector<std::string>& ablation_variant_names();
/// "fusion", "fusion+sa", ..., "fusion+lcm+gcm"; "full" is an alias of the last.
ModuleFlags variant_flags(std::string_view name);
std::string variant_name(const ModuleFlags& flags);

/// Flat `model.key=value` view used by config files and checkpoint headers.
std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& config);
/// Applies one `model.*` key. Returns false when the key is not a model key.
/// Throws ConfigError on a malformed value.
bool apply_key_value(ModelConfig& config, std::string_view key, std::string_view value);

}  // namespace mvccl
