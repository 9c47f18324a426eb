#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "halo/hpr.hpp"
#include "halo/numkit.hpp"
#include "halo/taxonomy.hpp"

namespace halo::eval {

struct CheckpointRecord {
  std::size_t stream_position = 0;
  /// Accuracy per level, only for levels where some eligible sample's true
  /// class has an output row.
  std::map<int, double> level_accuracy;
  /// Accuracy at the deepest level; nullopt when that level is not scorable yet.
  std::optional<double> fine_accuracy;
  /// Mean LCA height over fine-level mistakes; 0 when `no_mistakes`.
  double mistake_severity = 0.0;
  bool no_mistakes = true;
  std::uint64_t tree_version = 0;
  std::size_t eligible = 0;

  /// Mean of level_accuracy (0 when empty).
  double mean_accuracy() const;
};

struct TestItem {
  std::size_t feature_ref = 0;
  std::string fine_class;
};

/// Aggregated distribution per level for one test feature; level h has one
/// entry per id in `level_classes[h]` (empty when the level has no classes).
using PredictFn = std::function<std::vector<num::Vec>(std::size_t feature_ref)>;

struct EvalContext {
  const taxonomy::DynamicLabelTree* truth = nullptr;
  const taxonomy::DynamicLabelTree* live = nullptr;
  std::vector<std::vector<std::string>> level_classes;
};

/// Scores `predict` on the test items whose fine class is in `seen`.
/// Predictions are argmax with ties to the lowest index. Throws DomainError
/// when no item is eligible.
CheckpointRecord evaluate_checkpoint(const PredictFn& predict, const std::vector<TestItem>& test,
                                     const EvalContext& context, const std::vector<std::string>& seen,
                                     std::size_t stream_position);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(const num::Vec& values);

/// Trapezoidal area divided by the position span; a single point gives its
/// value. Throws DomainError unless positions strictly increase.
double auc(const std::vector<std::pair<double, double>>& curve);

struct MetricSummary {
  double aauc = 0.0;
  double fauc = 0.0;
  double ms = 0.0;
  double ffacc = 0.0;
  double faacc = 0.0;
  /// False when no checkpoint had a fine-level mistake.
  bool ms_defined = false;
};

MetricSummary summarize(const std::vector<CheckpointRecord>& records);

/// Spearman correlation with average ranks; nullopt when either side is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Rank correlation between prototype distances (1 - max pair cosine) and
/// normalized LCA distances in `truth`, over pairs of classes at `level`.
/// nullopt when fewer than 3 classes or a side is constant.
std::optional<double> prototype_alignment(const hpr::PrototypeBank& bank, const taxonomy::DynamicLabelTree& truth,
                                          int level);

}  // namespace halo::eval
