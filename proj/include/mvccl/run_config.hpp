#pragma once

// Flat key=value run configuration shared by the command-line tools:
//
//   # comment
//   model.D=64
//   train.lr=1e-4
//   data.split_seed=0
//
// Later lines and --set overrides win. Unknown keys are a UsageError.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvccl/model_config.hpp"
#include "mvccl/train.hpp"

namespace mvccl {

struct DataConfig {
  double train_fraction = 2.0 / 3.0;
  double val_fraction = 1.0 / 6.0;
  std::uint64_t split_seed = 0;

  void validate() const;
};

std::vector<std::pair<std::string, std::string>> to_key_values(const DataConfig& config);
bool apply_key_value(DataConfig& config, std::string_view key, std::string_view value);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

/// Key/value pairs in file order. Errors name the 1-based line.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Splits "key=value"; UsageError when there is no '='.
std::pair<std::string, std::string> split_setting(std::string_view setting);

/// Routes one key to its section. UsageError for an unknown key.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// `base`, then the file (if any), then each "key=value" override in order.
RunConfig load_run_config(const RunConfig& base, const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides);

/// Every effective key, one "key=value" line each.
std::string echo_config(const RunConfig& config);

}  // namespace mvccl
