#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "halo/numkit.hpp"
#include "halo/streamgen.hpp"

namespace halo {

enum class Variant { kLinearOnly, kAnalyticOnly, kPredLA, kPredLAHpr };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);

/// Every experiment knob, with defaults for the desk-scale synthetic benchmark.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  Variant variant = Variant::kPredLAHpr;

  // [taxonomy]
  std::string taxonomy_path;                 // empty: balanced synthetic tree
  std::vector<int> branching{5, 3, 4};

  // [features]
  std::string feature_path;                  // empty: generate synthetic maps
  std::uint32_t feature_dim = 32;
  std::uint32_t feature_height = 4;
  std::uint32_t feature_width = 4;
  std::uint32_t samples_per_class = 60;
  double test_fraction = 0.2;
  std::vector<double> sigma_per_level{0.4, 0.4, 0.4};
  double jitter_scale = 0.05;

  // [stream]
  std::size_t num_groups = 10;
  double overlap_fraction = 0.1;
  std::vector<double> granularity_weights;   // empty: uniform
  std::uint32_t duplication_factor = 1;
  stream::SplitMode split_mode = stream::SplitMode::kFine;
  std::size_t batch_size = 32;

  // [model]
  std::size_t proto_dim = 16;
  std::size_t prototypes_per_class = 5;
  double gamma = 1.0;

  // [optim]
  num::OptimizerKind optimizer = num::OptimizerKind::kSgd;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;

  // [hpr]
  double lambda = 0.1;
  double hpr_learning_rate = 0.5;  // adapter and prototypes
  double margin = 0.1;
  double topk_fraction = 0.10;
  std::size_t max_pairs = 32;
  std::int64_t cache_period = 1;
  double w_ce = 1.0;
  double w_cluster = 0.8;
  double w_separation = 0.08;

  // [predla]
  double alpha_lr = 1e-2;
  double tau_lr = 0.01;
  double delta = 0.1;
  double tau_min = 0.05;

  // [replay]
  std::size_t buffer_capacity = 1000;
  std::size_t memory_batch = 16;

  // [oracle]
  std::int64_t oracle_delay = 1;
  double noise_rate = 0.0;
  double vacancy_rate = 0.0;

  // [eval]
  std::size_t eval_interval = 500;
  int alignment_level = -1;                  // -1: deepest level

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Sets one dotted key (`stream.num_groups`, `seed`, ...) from text.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Parses `key = value` lines under `[section]` headers; `#` starts a comment.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig read_config_file(const std::string& path, ExperimentConfig base = {});

/// Canonical text of every key except the seed, sorted by section.
std::string canonical_config(const ExperimentConfig& config);
/// Full echo (seed first, then the canonical body); parses back to `config`.
std::string echo_config(const ExperimentConfig& config);
/// FNV-1a of canonical_config, as 16 lowercase hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Dotted keys in canonical order.
std::vector<std::string> config_keys();

/// Shortest round-trip decimal text of `v`.
std::string format_double(double v);

}  // namespace halo
