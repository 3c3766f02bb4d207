#pragma once

#include "persona/bfi2.hpp"
#include "persona/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace persona::eval {

// Per-label regression metrics plus the across-label mean column. PCC and R2
// are absent where undefined (constant predictions or truths).
struct MetricTable {
  std::vector<std::string> labels;
  std::vector<double> mse;
  std::vector<double> mae;
  std::vector<std::optional<double>> pcc;
  std::vector<std::optional<double>> r2;
  double mean_mse = 0.0;
  double mean_mae = 0.0;
  std::optional<double> mean_pcc;
  std::optional<double> mean_r2;

  std::string to_json_string() const;
  std::string to_csv_string() const;
  static MetricTable from_json_string(const std::string& text);
};

// Metrics across subjects for aligned prediction/truth lists at one level.
// Needs at least two subjects (PCC and R2 are per-label across subjects).
MetricTable metrics(const std::vector<bfi2::PersonalityVector>& preds,
                    const std::vector<bfi2::PersonalityVector>& truths,
                    const std::vector<std::string>& labels);

// Elementwise mean and stdev of metric tables across folds.
struct FoldAggregate {
  MetricTable mean;
  MetricTable stdev;
  int n_folds = 0;
};
FoldAggregate aggregate_folds(const std::vector<MetricTable>& per_fold);

struct FoldSplit {
  int fold = 0;
  std::set<std::string> train_participants;
  std::set<std::string> val_participants;
  std::set<std::string> test_participants;
  std::vector<std::string> train_sessions;
  std::vector<std::string> val_sessions;
  std::vector<std::string> test_sessions;
  std::vector<std::string> dropped_sessions;  // dyads straddling split boundaries
};

// Balance objective for a candidate partition: squared deviation of each
// group's trait means, z-scored age mean and gender proportions from the
// roster-wide values, summed over groups.
double partition_objective(const std::vector<std::vector<int>>& groups, const Matrix& trait_scores,
                           const Vector& age_z, const std::vector<int>& gender_codes, int n_genders);

// Subject-independent folds: participants are partitioned into n_folds
// balanced groups (greedy assignment plus local swap refinement); fold i
// tests on group i and validates on group (i+1) mod n_folds. Sessions whose
// two participants land in different parts of a fold are dropped for that
// fold and recorded.
std::vector<FoldSplit> make_folds(const DatasetManifest& manifest,
                                  const std::map<std::string, bfi2::PersonalityVector>& nuance_labels,
                                  const bfi2::ScoringKey& key, int n_folds, std::uint64_t seed);

// Constant predictor: per-label mean of the training ground truth.
bfi2::PersonalityVector baseline_predict(const std::vector<bfi2::PersonalityVector>& train_truths);

// Unifies per-session predictions at any level to trait-level per-participant
// scores and evaluates them against trait truths derived from the ground-truth
// nuances. Every id in `required` must have predictions.
MetricTable evaluate_cross_level(
    const std::map<std::string, std::vector<bfi2::PersonalityVector>>& preds_by_participant,
    const std::map<std::string, bfi2::PersonalityVector>& nuance_truths,
    const std::set<std::string>& required, const bfi2::ScoringKey& key,
    bfi2::AggregationOrder order = bfi2::AggregationOrder::ConvertThenCollapse,
    bfi2::CollapseStrategy strategy = bfi2::CollapseStrategy::Mean);

// Percent MSE decrease of table b relative to reference table a, per label
// plus the mean column.
struct ImprovementReport {
  std::vector<std::string> labels;
  std::vector<double> percent;  // per label
  double mean_percent = 0.0;    // decrease of the mean-MSE cell
  double max_percent = 0.0;     // max over all cells including the mean

  std::string to_markdown(const std::string& reference_name, const std::string& comparison_name) const;
};
ImprovementReport improvement_report(const MetricTable& a, const MetricTable& b);

// Split persistence for the CLI pipeline.
struct SplitFile {
  std::string manifest_path;
  int n_folds = 0;
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;
};
void save_splits(const std::string& path, const SplitFile& splits);
SplitFile load_splits(const std::string& path);

}  // namespace persona::eval
