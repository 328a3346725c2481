#include "mvccl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "mvccl/errors.hpp"
#include "mvccl/metrics.hpp"
#include "mvccl/preprocess.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

std::string to_string(Precision precision) { return precision == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float") return Precision::f32;
  if (text == "f64" || text == "double") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("train.plateau_factor must be in (0, 1)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(plateau_threshold >= 0.0)) throw ConfigError("train.plateau_threshold must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
}

std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  using text::format_double;
  return {
      {"train.lr", format_double(c.lr)},
      {"train.weight_decay", format_double(c.weight_decay)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.epochs", std::to_string(c.epochs)},
      {"train.plateau_factor", format_double(c.plateau_factor)},
      {"train.plateau_patience", std::to_string(c.plateau_patience)},
      {"train.plateau_threshold", format_double(c.plateau_threshold)},
      {"train.beta1", format_double(c.beta1)},
      {"train.beta2", format_double(c.beta2)},
      {"train.adam_eps", format_double(c.adam_eps)},
      {"train.seed", std::to_string(c.seed)},
      {"train.augment", c.augment ? "true" : "false"},
      {"train.precision", to_string(c.precision)},
  };
}

bool apply_key_value(TrainConfig& c, std::string_view key, std::string_view value) {
  if (key == "train.lr") {
    c.lr = text::parse_double(value, key);
  } else if (key == "train.weight_decay") {
    c.weight_decay = text::parse_double(value, key);
  } else if (key == "train.batch_size") {
    c.batch_size = text::parse_size(value, key);
  } else if (key == "train.epochs") {
    c.epochs = text::parse_size(value, key);
  } else if (key == "train.plateau_factor") {
    c.plateau_factor = text::parse_double(value, key);
  } else if (key == "train.plateau_patience") {
    c.plateau_patience = text::parse_size(value, key);
  } else if (key == "train.plateau_threshold") {
    c.plateau_threshold = text::parse_double(value, key);
  } else if (key == "train.beta1") {
    c.beta1 = text::parse_double(value, key);
  } else if (key == "train.beta2") {
    c.beta2 = text::parse_double(value, key);
  } else if (key == "train.adam_eps") {
    c.adam_eps = text::parse_double(value, key);
  } else if (key == "train.seed") {
    c.seed = text::parse_u64(value, key);
  } else if (key == "train.augment") {
    c.augment = text::parse_bool(value, key);
  } else if (key == "train.precision") {
    c.precision = parse_precision(text::trim(value));
  } else {
    return false;
  }
  return true;
}

AdamConfig adam_config(const TrainConfig& c) { return {c.beta1, c.beta2, c.adam_eps, c.weight_decay}; }

template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, AdamState<T>& state, const AdamConfig& config, double lr) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    if (state.m[i].size() != t.numel() || state.v[i].size() != t.numel()) {
      throw DimensionError("optimizer state for '" + params[i].name + "' does not match its size");
    }
    for (T g : t.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + params[i].name + "'");
    }
  }

  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, step);
  const double correction2 = 1.0 - std::pow(config.beta2, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    const auto grad = tensor.grad();
    auto theta = tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = (grad.empty() ? 0.0 : static_cast<double>(grad[k])) +
                       config.weight_decay * static_cast<double>(theta[k]);
      const double mk = config.beta1 * static_cast<double>(m[k]) + (1.0 - config.beta1) * g;
      const double vk = config.beta2 * static_cast<double>(v[k]) + (1.0 - config.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      theta[k] = static_cast<T>(static_cast<double>(theta[k]) - lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

bool PlateauScheduler::observe(double loss) {
  if (loss < best - threshold) {
    best = loss;
    bad_epochs = 0;
    return false;
  }
  ++bad_epochs;
  if (bad_epochs >= patience) {
    bad_epochs = 0;
    return true;
  }
  return false;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  auto cell = [](double v) { return std::isnan(v) ? std::string() : text::format_double(v); };
  out << kMetricsHeader << '\n';
  for (const auto& e : log) {
    out << e.epoch << ',' << cell(e.train_loss) << ',' << cell(e.val_bce) << ',' << cell(e.val_auc) << ','
        << cell(e.lr) << '\n';
  }
}

template <typename T>
std::vector<PairOutcome> predict(const MvcclModel<T>& model, std::span<const ViewPair> pairs) {
  NoGradGuard no_grad;
  std::vector<PairOutcome> outcomes;
  outcomes.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const auto out = model.forward(pair);
    PairOutcome o;
    o.score = static_cast<double>(out.y_hat.item());
    o.bce = static_cast<double>(bce_loss(pair.label, out.y_hat).item());
    if (model.config().enabled.gcm) {
      o.sim = static_cast<double>(
          consistency_loss(out.g_m, out.g_a, out.g_tilde_m, out.g_tilde_a, model.config().epsilon).item());
    }
    outcomes.push_back(o);
  }
  return outcomes;
}

ValidationSummary summarize(const std::vector<PairOutcome>& outcomes, std::span<const ViewPair> pairs) {
  if (outcomes.size() != pairs.size() || outcomes.empty()) {
    throw DimensionError("summarize: " + std::to_string(outcomes.size()) + " outcomes for " +
                         std::to_string(pairs.size()) + " pairs");
  }
  ValidationSummary s;
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    s.mean_bce += outcomes[i].bce;
    s.mean_sim += outcomes[i].sim;
    scores.push_back(outcomes[i].score);
    labels.push_back(pairs[i].label);
  }
  s.mean_bce /= static_cast<double>(outcomes.size());
  s.mean_sim /= static_cast<double>(outcomes.size());
  try {
    s.auc = auc_roc(scores, labels);
  } catch (const UndefinedMetricError&) {
    s.auc = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

namespace {

constexpr const char* kAdamMomentPrefix = "adam.m.";
constexpr const char* kAdamVariancePrefix = "adam.v.";

template <typename T>
void assign_weights(MvcclModel<T>& model, const Checkpoint& ckpt) {
  const auto params = model.parameters();
  std::size_t weight_blocks = 0;
  for (const auto& b : ckpt.blocks) {
    if (!b.name.starts_with("adam.")) ++weight_blocks;
  }
  if (weight_blocks != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(weight_blocks) + " weight blocks, model expects " +
                      std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const TensorBlock* block = ckpt.find_block(p.name);
    if (block == nullptr) throw ConfigError("checkpoint has no block for parameter '" + p.name + "'");
    if (block->shape != p.tensor.shape()) {
      throw ConfigError("checkpoint block '" + p.name + "' has a different shape than the model parameter");
    }
    auto tensor = p.tensor;
    read_block<T>(*block, tensor.mutable_data());
  }
}

std::seed_seq epoch_seed(std::uint64_t seed, std::size_t epoch) {
  const auto e = static_cast<std::uint64_t>(epoch);
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(e >> 32)};
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const MvcclModel<T>& model, const TrainConfig& config, const TrainState<T>& state) {
  using text::format_double;
  Checkpoint ckpt;
  ckpt.config = to_key_values(model.config());
  ckpt.state = {{"precision", dtype_name<T>()}};
  for (auto& kv : to_key_values(config)) ckpt.state.push_back(std::move(kv));
  ckpt.state.insert(ckpt.state.end(), {
                                          {"epochs_done", std::to_string(state.epochs_done)},
                                          {"lr", format_double(state.lr)},
                                          {"scheduler.best", format_double(state.scheduler.best)},
                                          {"scheduler.bad_epochs", std::to_string(state.scheduler.bad_epochs)},
                                          {"adam.step", std::to_string(state.adam.step)},
                                          {"best_val_auc", format_double(state.best_val_auc)},
                                          {"best_epoch", std::to_string(state.best_epoch)},
                                          // Epoch e draws from seed_seq{seed, e}; the seed is the whole state.
                                          {"rng.seed", std::to_string(config.seed)},
                                      });
  const auto params = model.parameters();
  for (const auto& p : params) ckpt.blocks.push_back(make_block<T>(p.name, p.tensor.shape(), p.tensor.data()));
  const bool has_moments = !state.adam.m.empty();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<T> zeros(has_moments ? 0 : params[i].tensor.numel(), T(0));
    const std::span<const T> m = has_moments ? std::span<const T>(state.adam.m[i]) : std::span<const T>(zeros);
    const std::span<const T> v = has_moments ? std::span<const T>(state.adam.v[i]) : std::span<const T>(zeros);
    ckpt.blocks.push_back(make_block<T>(kAdamMomentPrefix + params[i].name, params[i].tensor.shape(), m));
    ckpt.blocks.push_back(make_block<T>(kAdamVariancePrefix + params[i].name, params[i].tensor.shape(), v));
  }
  return ckpt;
}

ModelConfig model_config_from(const Checkpoint& ckpt) {
  ModelConfig config;
  for (const auto& [k, v] : ckpt.config) {
    if (!apply_key_value(config, k, v)) throw ConfigError("checkpoint: unknown config key '" + k + "'");
  }
  config.validate();
  return config;
}

Precision precision_of(const Checkpoint& ckpt) { return parse_precision(ckpt.state_value("precision")); }

template <typename T>
MvcclModel<T> load_model(const Checkpoint& ckpt) {
  if (precision_of(ckpt) != parse_precision(dtype_name<T>())) {
    throw ConfigError("checkpoint precision is " + ckpt.state_value("precision") + ", requested " + dtype_name<T>());
  }
  MvcclModel<T> model(model_config_from(ckpt), 0);
  assign_weights(model, ckpt);
  return model;
}

template <typename T>
TrainState<T> load_train_state(const Checkpoint& ckpt, const MvcclModel<T>& model) {
  TrainState<T> state;
  state.epochs_done = text::parse_size(ckpt.state_value("epochs_done"), "epochs_done");
  state.lr = text::parse_double(ckpt.state_value("lr"), "lr");
  state.scheduler.best = text::parse_double(ckpt.state_value("scheduler.best"), "scheduler.best");
  state.scheduler.bad_epochs = text::parse_size(ckpt.state_value("scheduler.bad_epochs"), "scheduler.bad_epochs");
  state.adam.step = text::parse_u64(ckpt.state_value("adam.step"), "adam.step");
  state.best_val_auc = text::parse_double(ckpt.state_value("best_val_auc"), "best_val_auc");
  state.best_epoch = text::parse_size(ckpt.state_value("best_epoch"), "best_epoch");
  if (state.adam.step > 0) {
    for (const auto& p : model.parameters()) {
      for (const char* prefix : {kAdamMomentPrefix, kAdamVariancePrefix}) {
        const TensorBlock* block = ckpt.find_block(prefix + p.name);
        if (block == nullptr) throw ConfigError("checkpoint has no optimizer block '" + (prefix + p.name) + "'");
        std::vector<T> values(p.tensor.numel());
        read_block<T>(*block, values);
        (prefix == kAdamMomentPrefix ? state.adam.m : state.adam.v).push_back(std::move(values));
      }
    }
  }
  return state;
}

std::vector<ViewPair> epoch_order(const std::vector<BreastRecord>& train, const TrainConfig& config,
                                  std::size_t epoch_index) {
  auto seq = epoch_seed(config.seed, epoch_index);
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ViewPair> pairs;
  pairs.reserve(2 * train.size());
  for (std::size_t idx : order) {
    auto both = make_pairs(train[idx]);
    if (rng() & 1U) std::swap(both[0], both[1]);
    for (auto& pair : both) {
      if (config.augment) {
        const auto draw = sample_augment(rng, pair.main.height, pair.main.width);
        pair = augment(pair, draw);
      }
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

template <typename T>
FitResult<T> fit(MvcclModel<T>& model, const std::vector<BreastRecord>& train, const std::vector<BreastRecord>& val,
                 const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (train.empty()) throw DataError("fit: empty training set");
  if (val.empty()) throw DataError("fit: empty validation set");

  TrainState<T> state;
  state.lr = config.lr;
  FitResult<T> result;
  if (options.resume_from != nullptr) {
    assign_weights(model, *options.resume_from);
    state = load_train_state(*options.resume_from, model);
  }
  state.scheduler.factor = config.plateau_factor;
  state.scheduler.patience = config.plateau_patience;
  state.scheduler.threshold = config.plateau_threshold;

  const auto val_pairs = make_pairs(val);
  result.initial = summarize(predict(model, std::span<const ViewPair>(val_pairs)), val_pairs);
  result.last = make_checkpoint(model, config, state);
  result.best = options.resume_best != nullptr ? *options.resume_best : result.last;

  const auto params = model.parameters();
  const auto adam = adam_config(config);
  for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = state.lr;
    try {
      const auto pairs = epoch_order(train, config, epoch);
      double loss_sum = 0.0;
      double bce_sum = 0.0;
      for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
        const std::size_t n = std::min(config.batch_size, pairs.size() - start);
        const auto terms = total_loss(model, std::span<const ViewPair>(pairs).subspan(start, n));
        const double batch_loss = static_cast<double>(terms.total.item());
        if (!std::isfinite(batch_loss)) throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch + 1));
        backward(terms.total);
        adam_step<T>(params, state.adam, adam, state.lr);
        for (const auto& p : params) {
          auto tensor = p.tensor;
          tensor.zero_grad();
        }
        loss_sum += batch_loss * static_cast<double>(n);
        bce_sum += terms.mean_bce * static_cast<double>(n);
      }
      entry.train_loss = loss_sum / static_cast<double>(pairs.size());
      entry.train_bce = bce_sum / static_cast<double>(pairs.size());
      const auto summary = summarize(predict(model, std::span<const ViewPair>(val_pairs)), val_pairs);
      if (!std::isfinite(summary.mean_bce)) {
        throw NumericalError("non-finite validation loss in epoch " + std::to_string(epoch + 1));
      }
      entry.val_bce = summary.mean_bce;
      entry.val_sim = summary.mean_sim;
      entry.val_auc = summary.auc;
    } catch (const NumericalError& err) {
      assign_weights(model, result.last);
      result.diverged = true;
      result.divergence = err.what();
      break;
    }

    state.epochs_done = epoch + 1;
    if (state.scheduler.observe(entry.val_bce)) state.lr *= config.plateau_factor;
    const bool improved = std::isfinite(entry.val_auc) && entry.val_auc > state.best_val_auc;
    if (improved) {
      state.best_val_auc = entry.val_auc;
      state.best_epoch = epoch + 1;
    }
    result.last = make_checkpoint(model, config, state);
    if (improved) result.best = result.last;
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  return result;
}

#define MVCCL_INSTANTIATE_TRAIN(T)                                                                               \
  template void adam_step(std::span<const NamedTensor<T>>, AdamState<T>&, const AdamConfig&, double);           \
  template std::vector<PairOutcome> predict(const MvcclModel<T>&, std::span<const ViewPair>);                   \
  template Checkpoint make_checkpoint(const MvcclModel<T>&, const TrainConfig&, const TrainState<T>&);          \
  template MvcclModel<T> load_model(const Checkpoint&);                                                          \
  template TrainState<T> load_train_state(const Checkpoint&, const MvcclModel<T>&);                              \
  template FitResult<T> fit(MvcclModel<T>&, const std::vector<BreastRecord>&, const std::vector<BreastRecord>&, \
                            const TrainConfig&, const FitOptions&);

MVCCL_INSTANTIATE_TRAIN(float)
MVCCL_INSTANTIATE_TRAIN(double)

#undef MVCCL_INSTANTIATE_TRAIN

}  // namespace mvccl
