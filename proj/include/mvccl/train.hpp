#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvccl/checkpoint.hpp"
#include "mvccl/dataset.hpp"
#include "mvccl/model.hpp"

namespace mvccl {

enum class Precision { f32, f64 };

std::string to_string(Precision precision);
Precision parse_precision(std::string_view text);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-6;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 2;
  double plateau_threshold = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;
  Precision precision = Precision::f32;

  void validate() const;
};

/// `train.*` keys, in a fixed order.
std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& config);
/// Returns false when `key` is not a train key; ConfigError on a bad value.
bool apply_key_value(TrainConfig& config, std::string_view key, std::string_view value);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

AdamConfig adam_config(const TrainConfig& config);

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// g ← ∇ + wd·θ;  m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²;
/// θ ← θ − lr · m̂ / (√v̂ + ε) with bias-corrected m̂, v̂.
/// Parameters never reached by backward count as zero gradient. A non-finite
/// gradient throws NumericalError naming the parameter before anything is
/// modified.
template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, AdamState<T>& state, const AdamConfig& config, double lr);

/// Reduce-on-plateau on a monitored loss (lower is better).
struct PlateauScheduler {
  double factor = 0.1;
  std::size_t patience = 2;
  double threshold = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  /// Records one epoch's loss; true when the learning rate should be
  /// multiplied by `factor`.
  bool observe(double loss);
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_bce = 0.0;
  double val_bce = 0.0;
  double val_sim = 0.0;
  double val_auc = 0.0;  // NaN when the validation set has a single class
  double lr = 0.0;       // learning rate used during the epoch
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,val_bce,val_auc,lr";
void write_metrics_csv(std::ostream& out, const std::vector<EpochLog>& log);

struct PairOutcome {
  double score = 0.0;
  double bce = 0.0;
  double sim = 0.0;  // 0 when GCM is disabled
};

/// Forward-only scoring, one outcome per pair in input order.
template <typename T>
std::vector<PairOutcome> predict(const MvcclModel<T>& model, std::span<const ViewPair> pairs);

struct ValidationSummary {
  double mean_bce = 0.0;
  double mean_sim = 0.0;
  double auc = 0.0;  // NaN when undefined
};

ValidationSummary summarize(const std::vector<PairOutcome>& outcomes, std::span<const ViewPair> pairs);

/// Everything besides the weights needed to continue a run.
template <typename T>
struct TrainState {
  std::size_t epochs_done = 0;
  double lr = 0.0;
  PlateauScheduler scheduler;
  AdamState<T> adam;
  double best_val_auc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

template <typename T>
Checkpoint make_checkpoint(const MvcclModel<T>& model, const TrainConfig& config, const TrainState<T>& state);

ModelConfig model_config_from(const Checkpoint& ckpt);
Precision precision_of(const Checkpoint& ckpt);

/// Rebuilds the model from the checkpoint's config and weights. Every
/// parameter must have exactly one block of the right dtype and shape.
template <typename T>
MvcclModel<T> load_model(const Checkpoint& ckpt);

template <typename T>
TrainState<T> load_train_state(const Checkpoint& ckpt, const MvcclModel<T>& model);

/// Training order for one epoch: breasts shuffled, then for each breast its
/// two main-view orderings in random order, each with its own augmentation.
std::vector<ViewPair> epoch_order(const std::vector<BreastRecord>& train, const TrainConfig& config,
                                  std::size_t epoch_index);

template <typename T>
struct FitResult {
  std::vector<EpochLog> log;
  Checkpoint best;  // highest validation AUC so far (initial weights before any epoch)
  Checkpoint last;  // state after the last completed epoch, resumable
  ValidationSummary initial;  // validation metrics before the first epoch of this call
  bool diverged = false;
  std::string divergence;
};

struct FitOptions {
  const Checkpoint* resume_from = nullptr;  // a `last` checkpoint
  const Checkpoint* resume_best = nullptr;  // the matching `best`, if kept
  std::function<void(const EpochLog&)> on_epoch;
};

/// Trains `model` in place. Divergence (NumericalError) stops the loop and
/// is reported in the result; weights stay at the last finite epoch.
template <typename T>
FitResult<T> fit(MvcclModel<T>& model, const std::vector<BreastRecord>& train, const std::vector<BreastRecord>& val,
                 const TrainConfig& config, const FitOptions& options = {});

}  // namespace mvccl
