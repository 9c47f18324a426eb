#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "halo/config.hpp"
#include "halo/evalkit.hpp"
#include "halo/featuresim.hpp"
#include "halo/heads.hpp"
#include "halo/hpr.hpp"
#include "halo/predla.hpp"
#include "halo/replaybuf.hpp"
#include "halo/streamgen.hpp"
#include "halo/taxonomy.hpp"

namespace halo::runner {

/// Everything fixed before the stream starts: ground truth, features, the
/// stream itself and its hierarchy events.
struct Environment {
  taxonomy::DynamicLabelTree truth;
  features::FeatureStore store;
  features::DatasetIndex index;
  std::vector<std::vector<std::string>> groups;
  std::vector<stream::StreamSample> stream;
  std::vector<stream::HierarchyEvent> events;
  std::vector<eval::TestItem> test;
};

Environment build_environment(const ExperimentConfig& config);

/// Feature map as (H*W) x d, one patch per row.
hpr::PatchMatrix to_patches(const features::FeatureMap& map);

/// Learner state: trainable per-patch path f, frozen projection f0, both head
/// banks, adapter, prototypes and aggregation state.
class Model {
 public:
  Model(const ExperimentConfig& config, std::size_t feature_dim);

  struct TrainableCache {
    hpr::PatchMatrix input;
    hpr::PatchMatrix hidden;  // post-ReLU
    hpr::PatchMatrix output;
    num::Vec pooled;
  };

  /// y_i = x_i + W2 relu(W1 x_i + b1) + b2 per patch, plus the mean over patches.
  TrainableCache trainable_forward(const hpr::PatchMatrix& x) const;
  /// Accumulates gradients of the trainable path given dL/dy per patch.
  void trainable_backward(const TrainableCache& cache, const hpr::PatchMatrix& d_output);

  /// Frozen features: fixed random projection of the mean-pooled map.
  Eigen::VectorXd frozen_features(const hpr::PatchMatrix& x) const;

  /// Registers output rows (and prototypes, when enabled) for a new class.
  void expand_class(int level, const std::string& id, const hpr::PatchMatrix* init_patches, Rng& rng);

  /// Per-level prediction of the configured variant.
  std::vector<num::Vec> predict(const hpr::PatchMatrix& x, const Eigen::VectorXd& phi) const;

  void zero_grad();
  /// One optimizer step on the trainable path and linear heads, plus the
  /// adapter and prototypes when `with_hpr`.
  void step(bool with_hpr);

  /// FNV-1a over the bytes of the trainable path and linear heads.
  std::uint64_t theta_checksum() const;

  const ExperimentConfig& config() const { return config_; }
  bool hpr_enabled() const { return config_.variant == Variant::kPredLAHpr; }

  num::GradSlot f_first, f_first_bias, f_second, f_second_bias;
  num::Matrix projection;
  heads::LinearHeadBank linear;
  heads::AnalyticHeadBank analytic;
  hpr::Adapter adapter;
  hpr::PrototypeBank prototypes;
  predla::PredLAState predla;

 private:
  ExperimentConfig config_;
  num::Optimizer optimizer_;
  num::Optimizer hpr_optimizer_;
};

struct RunResult {
  std::vector<eval::CheckpointRecord> records;
  std::vector<std::optional<double>> alignment;
  std::vector<std::vector<std::array<double, 3>>> predla_trace;  // per checkpoint, per level: alpha_lin, tau_lin, tau_acil
  eval::MetricSummary summary;
  std::size_t iterations = 0;
  std::size_t consumed = 0;
};

/// Drives training over the stream.
class Trainer {
 public:
  Trainer(const ExperimentConfig& config, const Environment& env);

  /// One pass of the per-iteration update order over a stream batch and a
  /// (possibly empty) replay batch.
  void train_iteration(std::span<const stream::StreamSample> batch, const std::vector<replay::BufferItem>& replay);

  /// Consumes the whole stream with periodic evaluation. `on_checkpoint` runs
  /// after every evaluation (used for per-checkpoint dumps).
  RunResult run(const std::function<void(const Trainer&, std::size_t position)>& on_checkpoint = {});

  eval::CheckpointRecord evaluate(std::size_t position) const;
  std::optional<double> alignment() const;

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const taxonomy::DynamicLabelTree& live_tree() const { return live_; }
  const replay::ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t iteration() const { return iteration_; }
  int alignment_level() const;

 private:
  hpr::PatchMatrix sample_patches(std::size_t feature_ref, std::uint64_t sample_id, std::uint32_t tag) const;
  const Eigen::VectorXd& cached_phi(std::size_t feature_ref) const;
  void fire_events(std::span<const stream::StreamSample> batch);
  void stream_step(std::span<const stream::StreamSample> batch, const std::vector<heads::CompletedLabel>& labels,
                   const std::vector<hpr::PatchMatrix>& xs);
  void replay_step(const std::vector<replay::BufferItem>& replay);

  const ExperimentConfig& config_;
  const Environment& env_;
  taxonomy::DynamicLabelTree live_;
  taxonomy::KnowledgeOracle oracle_;
  Model model_;
  replay::ReplayBuffer buffer_;
  Rng replay_rng_;
  Rng hpr_rng_;
  Rng proto_rng_;
  std::size_t next_event_ = 0;
  std::int64_t iteration_ = 0;
  std::vector<std::string> seen_;
  std::unordered_set<std::string> seen_set_;
  mutable std::vector<std::optional<Eigen::VectorXd>> phi_cache_;
};

/// Runs without touching the filesystem.
RunResult run_in_memory(const ExperimentConfig& config);

/// Runs and writes metrics.csv, summary.json, alignment.csv, stream.csv,
/// config.ini, heads.bin, prototypes.{json,bin}, prototype_distance.csv and
/// buffer dumps under `<out_root>/<config-hash>-<seed>`. Returns that path.
std::filesystem::path run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_root,
                                     RunResult* result = nullptr);

std::string format_metrics_csv(const RunResult& result, int levels);
std::string format_alignment_csv(const RunResult& result);
std::string format_summary_json(const RunResult& result, const ExperimentConfig& config);

}  // namespace halo::runner
