#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvccl/dataset.hpp"
#include "mvccl/metrics.hpp"
#include "mvccl/model.hpp"
#include "mvccl/train.hpp"

namespace mvccl {

/// One image-level entry per pair (the main view is the scored image).
template <typename T>
ScoredSet score_pairs(const MvcclModel<T>& model, std::span<const ViewPair> pairs);

struct AblationRow {
  std::string variant;
  ModuleFlags flags;
  std::uint64_t seed = 0;
  double test_auc = 0.0;  // image-level AUC-ROC of the best-validation checkpoint
  double best_val_auc = 0.0;
  std::size_t best_epoch = 0;
  double initial_val_sim = 0.0;
  double final_val_sim = 0.0;  // after the last completed epoch
  bool diverged = false;
};

/// Trains every variant from `base` with the same seed and data order and
/// scores the test split with its best-validation checkpoint.
std::vector<AblationRow> ablation_run(const Split& split, const ModelConfig& base,
                                      const std::vector<std::string>& variants, const TrainConfig& train,
                                      const std::function<void(const AblationRow&)>& on_row = {});

struct AblationSummary {
  std::string variant;
  ModuleFlags flags;
  std::size_t runs = 0;
  double mean_test_auc = 0.0;
  double std_test_auc = 0.0;  // sample standard deviation; 0 for a single run
};

/// Groups rows by variant in order of first appearance.
std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows);

void write_ablation_runs_csv(std::ostream& out, const std::vector<AblationRow>& rows, const std::string& comment);
void write_ablation_csv(std::ostream& out, const std::vector<AblationSummary>& rows, const std::string& comment);

}  // namespace mvccl
