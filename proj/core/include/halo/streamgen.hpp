#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "halo/featuresim.hpp"
#include "halo/rng.hpp"
#include "halo/taxonomy.hpp"

namespace halo::stream {

struct Annotation {
  std::string class_id;
  int level = 0;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// One stream occurrence: a feature reference plus exactly one (class, level)
/// annotation.
struct StreamSample {
  std::uint64_t sample_id = 0;
  std::size_t feature_ref = 0;
  std::string true_fine_class;
  Annotation annotation;
  std::size_t arrival_index = 0;
  std::uint32_t jitter_tag = 0;
  friend bool operator==(const StreamSample&, const StreamSample&) = default;
};

struct HierarchyEvent {
  std::size_t arrival_index = 0;
  std::string class_id;
  int level = 0;
  friend bool operator==(const HierarchyEvent&, const HierarchyEvent&) = default;
};

enum class SplitMode { kFine, kCoarse };

struct StreamConfig {
  std::size_t num_groups = 10;
  /// Share of each group's span that mixes with its neighbour, in [0, 0.5).
  double overlap_fraction = 0.1;
  /// Per-level annotation weights, coarse first; empty means uniform over the
  /// taxonomy's levels.
  std::vector<double> granularity_weights;
  std::uint32_t duplication_factor = 1;
  SplitMode split_mode = SplitMode::kFine;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Shuffles `fine_classes` and cuts them into `num_groups` disjoint groups
/// whose sizes differ by at most one.
std::vector<std::vector<std::string>> partition_classes(const std::vector<std::string>& fine_classes,
                                                        std::size_t num_groups, std::uint64_t seed);

/// Coarse split: partitions the level-1 ancestors instead and expands each
/// group to the fine classes below it.
std::vector<std::vector<std::string>> partition_by_ancestor(const taxonomy::DynamicLabelTree& truth,
                                                            const std::vector<std::string>& fine_classes,
                                                            int ancestor_level, std::size_t num_groups,
                                                            std::uint64_t seed);

/// Draws one class on the root path of `fine_class` with the given per-level
/// weights (restricted to the path's levels).
Annotation sample_granularity(const std::string& fine_class, const taxonomy::DynamicLabelTree& truth,
                              std::span<const double> weights, Rng& rng);

/// Builds the blurred, single-granularity stream over the train split.
std::vector<StreamSample> build_stream(const std::vector<std::vector<std::string>>& groups,
                                       const features::DatasetIndex& index,
                                       const features::FeatureStore& store,
                                       const taxonomy::DynamicLabelTree& truth,
                                       const StreamConfig& config);

/// One event per distinct annotated class at its first arrival, sorted.
std::vector<HierarchyEvent> schedule_hierarchy_events(const std::vector<StreamSample>& stream);

/// CSV `arrival_index,sample_id,true_fine,annot_class,annot_level,jitter_tag`.
std::string format_manifest(const std::vector<StreamSample>& stream);

}  // namespace halo::stream
