#include "mvccl/run_config.hpp"

#include <fstream>
#include <sstream>

#include "mvccl/errors.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

void DataConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("data.train_fraction must be in (0, 1]");
  if (!(val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0 + 1e-12)) {
    throw ConfigError("data.val_fraction must be >= 0 with train_fraction + val_fraction <= 1");
  }
}

std::vector<std::pair<std::string, std::string>> to_key_values(const DataConfig& c) {
  return {
      {"data.train_fraction", text::format_double(c.train_fraction)},
      {"data.val_fraction", text::format_double(c.val_fraction)},
      {"data.split_seed", std::to_string(c.split_seed)},
  };
}

bool apply_key_value(DataConfig& c, std::string_view key, std::string_view value) {
  if (key == "data.train_fraction") {
    c.train_fraction = text::parse_double(value, key);
  } else if (key == "data.val_fraction") {
    c.val_fraction = text::parse_double(value, key);
  } else if (key == "data.split_seed") {
    c.split_seed = text::parse_u64(value, key);
  } else {
    return false;
  }
  return true;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(number) + ": expected key=value, got '" +
                       std::string(trimmed) + "'");
    }
    out.emplace_back(std::string(text::trim(trimmed.substr(0, eq))), std::string(text::trim(trimmed.substr(eq + 1))));
  }
  return out;
}

std::pair<std::string, std::string> split_setting(std::string_view setting) {
  const auto eq = setting.find('=');
  if (eq == std::string_view::npos) throw UsageError("expected key=value, got '" + std::string(setting) + "'");
  return {std::string(text::trim(setting.substr(0, eq))), std::string(text::trim(setting.substr(eq + 1)))};
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  if (apply_key_value(config.model, key, value)) return;
  if (apply_key_value(config.train, key, value)) return;
  if (apply_key_value(config.data, key, value)) return;
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

RunConfig load_run_config(const RunConfig& base, const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides) {
  RunConfig config = base;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot open config '" + *path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(buffer.str())) apply_setting(config, k, v);
  }
  for (const auto& setting : overrides) {
    const auto [k, v] = split_setting(setting);
    apply_setting(config, k, v);
  }
  config.validate();
  return config;
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  auto emit = [&](const std::vector<std::pair<std::string, std::string>>& kvs) {
    for (const auto& [k, v] : kvs) out += k + "=" + v + "\n";
  };
  emit(to_key_values(config.model));
  emit(to_key_values(config.train));
  emit(to_key_values(config.data));
  return out;
}

}  // namespace mvccl
