#include "mvccl/ablation.hpp"

#include <cmath>
#include <ostream>

#include "mvccl/errors.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

template <typename T>
ScoredSet score_pairs(const MvcclModel<T>& model, std::span<const ViewPair> pairs) {
  const auto outcomes = predict(model, pairs);
  ScoredSet scored;
  scored.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    ScoredExample ex;
    ex.id = p.episode_id + "/" + p.side + "/" + to_string(p.main_role);
    ex.score = outcomes[i].score;
    ex.label = p.label;
    ex.episode_id = p.episode_id;
    ex.side = p.side;
    ex.role = p.main_role;
    scored.push_back(std::move(ex));
  }
  return scored;
}

namespace {

template <typename T>
AblationRow run_variant(const Split& split, ModelConfig config, const std::string& variant, const TrainConfig& train) {
  config.enabled = variant_flags(variant);
  config.validate();
  MvcclModel<T> model(config, train.seed);
  const auto result = fit(model, split.train, split.val, train);

  AblationRow row;
  row.variant = variant_name(config.enabled);
  row.flags = config.enabled;
  row.seed = train.seed;
  row.diverged = result.diverged;
  row.initial_val_sim = result.initial.mean_sim;
  row.final_val_sim = result.log.empty() ? result.initial.mean_sim : result.log.back().val_sim;
  row.best_epoch = text::parse_size(result.best.state_value("best_epoch"), "best_epoch");
  row.best_val_auc = text::parse_double(result.best.state_value("best_val_auc"), "best_val_auc");

  const auto best = load_model<T>(result.best);
  const auto pairs = make_pairs(split.test);
  const auto scored = score_pairs(best, std::span<const ViewPair>(pairs));
  row.test_auc = auc_roc(scores_of(scored), labels_of(scored));
  return row;
}

}  // namespace

std::vector<AblationRow> ablation_run(const Split& split, const ModelConfig& base,
                                      const std::vector<std::string>& variants, const TrainConfig& train,
                                      const std::function<void(const AblationRow&)>& on_row) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  if (split.test.empty()) throw DataError("ablation needs a nonempty test split");
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    rows.push_back(train.precision == Precision::f32 ? run_variant<float>(split, base, variant, train)
                                                     : run_variant<double>(split, base, variant, train));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    std::size_t i = 0;
    while (i < out.size() && out[i].variant != r.variant) ++i;
    if (i == out.size()) {
      out.push_back({r.variant, r.flags, 0, 0.0, 0.0});
      values.emplace_back();
    }
    values[i].push_back(r.test_auc);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out[i].runs = v.size();
    out[i].mean_test_auc = mean;
    out[i].std_test_auc = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return out;
}

namespace {
const char* flag(bool b) { return b ? "1" : "0"; }
}  // namespace

void write_ablation_runs_csv(std::ostream& out, const std::vector<AblationRow>& rows, const std::string& comment) {
  out << "# " << comment << '\n';
  out << "variant,fusion,sa,lcm,gcm,seed,test_auc_roc,best_val_auc,best_epoch,initial_val_sim,final_val_sim,"
         "diverged\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << flag(r.flags.fusion) << ',' << flag(r.flags.sa) << ',' << flag(r.flags.lcm) << ','
        << flag(r.flags.gcm) << ',' << r.seed << ',' << text::format_double(r.test_auc) << ','
        << text::format_double(r.best_val_auc) << ',' << r.best_epoch << ','
        << text::format_double(r.initial_val_sim) << ',' << text::format_double(r.final_val_sim) << ','
        << flag(r.diverged) << '\n';
  }
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationSummary>& rows, const std::string& comment) {
  out << "# " << comment << '\n';
  out << "variant,fusion,sa,lcm,gcm,runs,mean_test_auc_roc,std_test_auc_roc\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << flag(r.flags.fusion) << ',' << flag(r.flags.sa) << ',' << flag(r.flags.lcm) << ','
        << flag(r.flags.gcm) << ',' << r.runs << ',' << text::format_double(r.mean_test_auc) << ','
        << text::format_double(r.std_test_auc) << '\n';
  }
}

template ScoredSet score_pairs(const MvcclModel<float>&, std::span<const ViewPair>);
template ScoredSet score_pairs(const MvcclModel<double>&, std::span<const ViewPair>);

}  // namespace mvccl
