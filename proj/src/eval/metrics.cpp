#include "mvccl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "mvccl/errors.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

namespace {

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

ClassCounts check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("scores (" + std::to_string(scores.size()) + ") and labels (" +
                         std::to_string(labels.size()) + ") differ in length");
  }
  ClassCounts counts;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericalError("non-finite score at index " + std::to_string(i));
    if (labels[i] == 1) {
      ++counts.positives;
    } else if (labels[i] == 0) {
      ++counts.negatives;
    } else {
      throw DataError("label must be 0 or 1, got " + std::to_string(labels[i]));
    }
  }
  return counts;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return order;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = check_inputs(scores, labels);
  if (counts.positives == 0 || counts.negatives == 0) {
    throw UndefinedMetricError("AUC-ROC needs both classes (" + std::to_string(counts.positives) + " positives, " +
                               std::to_string(counts.negatives) + " negatives)");
  }
  const auto order = order_by_score(scores, false);
  // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
  // every partial sum is an integer.
  double doubled_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos_in_group += labels[order[j]] == 1;
      ++j;
    }
    const double doubled_avg_rank = static_cast<double>(i + 1 + j);  // 2 · (i+1 + j) / 2
    doubled_rank_sum += doubled_avg_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(counts.positives);
  const double nn = static_cast<double>(counts.negatives);
  const double doubled_u = doubled_rank_sum - np * (np + 1.0);
  return doubled_u / (2.0 * np * nn);
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = check_inputs(scores, labels);
  if (counts.positives == 0) throw UndefinedMetricError("AUC-PR needs at least one positive");
  const auto order = order_by_score(scores, true);
  const double total = static_cast<double>(counts.positives);
  double ap = 0.0;
  double previous_recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / total;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - previous_recall) * precision;
    previous_recall = recall;
    i = j;
  }
  return ap;
}

std::string to_string(Metric metric) { return metric == Metric::auc_roc ? "auc_roc" : "auc_pr"; }

double evaluate_metric(Metric metric, std::span<const double> scores, std::span<const int> labels) {
  return metric == Metric::auc_roc ? auc_roc(scores, labels) : auc_pr(scores, labels);
}

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw UsageError("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

EvalReport bootstrap_ci(std::span<const double> scores, std::span<const int> labels, Metric metric,
                        std::size_t replicates, double level, std::uint64_t seed) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must be in (0, 1)");
  EvalReport report;
  report.metric = to_string(metric);
  report.point = evaluate_metric(metric, scores, labels);
  report.replicates = replicates;
  report.level = level;
  report.seed = seed;
  if (replicates == 0) {
    report.mean = report.ci_low = report.ci_high = std::numeric_limits<double>::quiet_NaN();
    return report;
  }

  const std::size_t n = scores.size();
  std::vector<double> values(replicates);
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t r = 0; r < replicates; ++r) {
    std::mt19937_64 rng(seed + r);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (true) {
      bool has_pos = false;
      bool has_neg = false;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = pick(rng);
        s[k] = scores[idx];
        l[k] = labels[idx];
        (l[k] == 1 ? has_pos : has_neg) = true;
      }
      if (has_pos && (has_neg || metric == Metric::auc_pr)) break;
    }
    values[r] = evaluate_metric(metric, s, l);
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  report.mean = sum / static_cast<double>(replicates);
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0;
  report.ci_low = percentile_sorted(values, tail);
  report.ci_high = percentile_sorted(values, 1.0 - tail);
  return report;
}

ScoredSet breast_level(const ScoredSet& scored) {
  std::map<std::pair<std::string, char>, std::size_t> index;
  ScoredSet out;
  std::vector<std::size_t> counts;
  for (const auto& ex : scored) {
    const auto key = std::make_pair(ex.episode_id, ex.side);
    auto [it, inserted] = index.emplace(key, out.size());
    if (inserted) {
      ScoredExample b = ex;
      b.id = ex.episode_id + "/" + ex.side;
      b.score = 0.0;
      out.push_back(b);
      counts.push_back(0);
    }
    ScoredExample& b = out[it->second];
    if (b.label != ex.label) throw DataError("conflicting labels within breast " + b.id);
    b.score += ex.score;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].score /= static_cast<double>(counts[i]);
  return out;
}

std::vector<double> scores_of(const ScoredSet& scored) {
  std::vector<double> v;
  v.reserve(scored.size());
  for (const auto& e : scored) v.push_back(e.score);
  return v;
}

std::vector<int> labels_of(const ScoredSet& scored) {
  std::vector<int> v;
  v.reserve(scored.size());
  for (const auto& e : scored) v.push_back(e.label);
  return v;
}

void write_reports_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows,
                       const std::string& comment) {
  auto cell = [](double v) { return std::isnan(v) ? std::string() : text::format_double(v); };
  out << "# " << comment << '\n';
  out << "level,metric,point,mean,ci_low,ci_high,replicates,seed\n";
  for (const auto& [level, r] : rows) {
    out << level << ',' << r.metric << ',' << cell(r.point) << ',' << cell(r.mean) << ',' << cell(r.ci_low) << ','
        << cell(r.ci_high) << ',' << r.replicates << ',' << r.seed << '\n';
  }
}

}  // namespace mvccl
