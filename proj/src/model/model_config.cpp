#include "mvccl/model_config.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "mvccl/errors.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

void ModelConfig::validate() const {
  if (backbone_stages == 0) throw ConfigError("model.backbone_stages must be >= 1");
  const std::size_t factor = std::size_t{1} << backbone_stages;
  if (input_height == 0 || input_width == 0 || input_height % factor != 0 || input_width % factor != 0) {
    throw ConfigError("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " is not divisible by 2^" + std::to_string(backbone_stages));
  }
  if (backbone_base_width == 0 || backbone_max_width == 0) throw ConfigError("backbone widths must be positive");
  if (feature_width == 0 || attention_width == 0 || classifier_hidden == 0) {
    throw ConfigError("model widths must be positive");
  }
  if (heads == 0 || attention_width % heads != 0) {
    throw ConfigError("model.heads=" + std::to_string(heads) + " must divide model.attention_width=" +
                      std::to_string(attention_width));
  }
  if (enabled.sa && enabled.lcm) throw ConfigError("sa and lcm are alternative local branches; enable at most one");
  if (classifier_input_width() == 0) throw ConfigError("no module enabled: classifier input would be empty");
  if (!(epsilon > 0.0)) throw ConfigError("model.epsilon must be positive");
  if (!(lambda_sim >= 0.0)) throw ConfigError("model.lambda_sim must be non-negative");
}

std::size_t ModelConfig::stage_width(std::size_t stage) const {
  return std::min(backbone_base_width << stage, backbone_max_width);
}

std::size_t ModelConfig::feature_height() const { return input_height >> backbone_stages; }
std::size_t ModelConfig::feature_cols() const { return input_width >> backbone_stages; }

std::size_t ModelConfig::classifier_input_width() const {
  std::size_t width = 0;
  if (enabled.gcm) {
    width += feature_width;
  } else if (enabled.fusion) {
    width += 2 * feature_width;
  }
  if (has_local_branch()) width += 2 * attention_width;
  return width;
}

const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names{"fusion",     "fusion+sa",     "fusion+lcm",
                                              "fusion+gcm", "fusion+sa+gcm", "fusion+lcm+gcm"};
  return names;
}

ModuleFlags variant_flags(std::string_view name) {
  if (name == "full") name = "fusion+lcm+gcm";
  const auto& names = ablation_variant_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw ConfigError("unknown variant '" + std::string(name) + "'");
  }
  ModuleFlags flags;
  flags.fusion = true;
  flags.sa = name.find("+sa") != std::string_view::npos;
  flags.lcm = name.find("+lcm") != std::string_view::npos;
  flags.gcm = name.find("+gcm") != std::string_view::npos;
  return flags;
}

std::string variant_name(const ModuleFlags& flags) {
  std::string name = flags.fusion ? "fusion" : "";
  auto append = [&name](const char* part) {
    if (!name.empty()) name += "+";
    name += part;
  };
  if (flags.sa) append("sa");
  if (flags.lcm) append("lcm");
  if (flags.gcm) append("gcm");
  return name;
}

namespace {

using text::format_double;

std::string scale_name(AttentionScale scale) {
  return scale == AttentionScale::sqrt_input_width ? "sqrt_d" : "sqrt_head";
}

}  // namespace

std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"model.input_height", std::to_string(c.input_height)},
      {"model.input_width", std::to_string(c.input_width)},
      {"model.backbone_stages", std::to_string(c.backbone_stages)},
      {"model.backbone_base_width", std::to_string(c.backbone_base_width)},
      {"model.backbone_max_width", std::to_string(c.backbone_max_width)},
      {"model.D", std::to_string(c.feature_width)},
      {"model.D_prime", std::to_string(c.attention_width)},
      {"model.heads", std::to_string(c.heads)},
      {"model.classifier_hidden", std::to_string(c.classifier_hidden)},
      {"model.attention_scale", scale_name(c.attention_scale)},
      {"model.fusion", b(c.enabled.fusion)},
      {"model.sa", b(c.enabled.sa)},
      {"model.lcm", b(c.enabled.lcm)},
      {"model.gcm", b(c.enabled.gcm)},
      {"model.epsilon", format_double(c.epsilon)},
      {"model.lambda_sim", format_double(c.lambda_sim)},
  };
}

bool apply_key_value(ModelConfig& c, std::string_view key, std::string_view value) {
  using Setter = std::function<void(ModelConfig&, std::string_view, std::string_view)>;
  auto size_field = [](std::size_t ModelConfig::*field) -> Setter {
    return [field](ModelConfig& cfg, std::string_view k, std::string_view v) { cfg.*field = text::parse_size(v, k); };
  };
  auto flag_field = [](bool ModuleFlags::*field) -> Setter {
    return [field](ModelConfig& cfg, std::string_view k, std::string_view v) {
      cfg.enabled.*field = text::parse_bool(v, k);
    };
  };
  static const std::map<std::string, Setter, std::less<>> setters{
      {"model.input_height", size_field(&ModelConfig::input_height)},
      {"model.input_width", size_field(&ModelConfig::input_width)},
      {"model.backbone_stages", size_field(&ModelConfig::backbone_stages)},
      {"model.backbone_base_width", size_field(&ModelConfig::backbone_base_width)},
      {"model.backbone_max_width", size_field(&ModelConfig::backbone_max_width)},
      {"model.D", size_field(&ModelConfig::feature_width)},
      {"model.D_prime", size_field(&ModelConfig::attention_width)},
      {"model.heads", size_field(&ModelConfig::heads)},
      {"model.classifier_hidden", size_field(&ModelConfig::classifier_hidden)},
      {"model.attention_scale",
       [](ModelConfig& cfg, std::string_view k, std::string_view v) {
         v = text::trim(v);
         if (v == "sqrt_d") {
           cfg.attention_scale = AttentionScale::sqrt_input_width;
         } else if (v == "sqrt_head") {
           cfg.attention_scale = AttentionScale::sqrt_head_width;
         } else {
           throw ConfigError(std::string(k) + ": expected sqrt_d or sqrt_head, got '" + std::string(v) + "'");
         }
       }},
      {"model.fusion", flag_field(&ModuleFlags::fusion)},
      {"model.sa", flag_field(&ModuleFlags::sa)},
      {"model.lcm", flag_field(&ModuleFlags::lcm)},
      {"model.gcm", flag_field(&ModuleFlags::gcm)},
      {"model.epsilon",
       [](ModelConfig& cfg, std::string_view k, std::string_view v) { cfg.epsilon = text::parse_double(v, k); }},
      {"model.lambda_sim",
       [](ModelConfig& cfg, std::string_view k, std::string_view v) { cfg.lambda_sim = text::parse_double(v, k); }},
      {"model.variant",
       [](ModelConfig& cfg, std::string_view, std::string_view v) { cfg.enabled = variant_flags(text::trim(v)); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) return false;
  it->second(c, key, value);
  return true;
}

}  // namespace mvccl
