#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvccl/image.hpp"

namespace mvccl {

struct ScoredExample {
  std::string id;
  double score = 0.0;
  int label = 0;
  std::string episode_id;
  char side = 'L';
  ViewRole role = ViewRole::cc;
};

using ScoredSet = std::vector<ScoredExample>;

/// Mann–Whitney statistic by sort-and-rank; ties count one half.
/// Throws UndefinedMetricError unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: Σ (R_t − R_{t−1})·P_t over distinct score thresholds
/// taken in decreasing order. Throws UndefinedMetricError without positives.
double auc_pr(std::span<const double> scores, std::span<const int> labels);

enum class Metric { auc_roc, auc_pr };

std::string to_string(Metric metric);
double evaluate_metric(Metric metric, std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  std::string metric;
  double point = 0.0;
  double mean = 0.0;     // NaN when replicates == 0
  double ci_low = 0.0;   // NaN when replicates == 0
  double ci_high = 0.0;  // NaN when replicates == 0
  std::size_t replicates = 0;
  double level = 0.95;
  std::uint64_t seed = 0;
};

/// Percentile bootstrap. Replicate r resamples with std::mt19937_64(seed + r)
/// and redraws until both classes needed by the metric are present.
EvalReport bootstrap_ci(std::span<const double> scores, std::span<const int> labels, Metric metric,
                        std::size_t replicates = 2000, double level = 0.95, std::uint64_t seed = 0);

/// Linear interpolation between order statistics of an ascending sample.
double percentile_sorted(std::span<const double> sorted, double q);

/// One entry per (episode_id, side), in order of first appearance, scored by
/// the mean of its views. Conflicting labels are a DataError.
ScoredSet breast_level(const ScoredSet& scored);

std::vector<double> scores_of(const ScoredSet& scored);
std::vector<int> labels_of(const ScoredSet& scored);

/// "# <comment>" line, header, one row per report. Empty cells for NaN.
void write_reports_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows,
                       const std::string& comment);

}  // namespace mvccl
