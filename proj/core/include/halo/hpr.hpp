#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halo/heads.hpp"
#include "halo/numkit.hpp"
#include "halo/rng.hpp"
#include "halo/taxonomy.hpp"

namespace halo::hpr {

/// Per-patch maps are stored one patch per row: (H*W) x channels.
using PatchMatrix = num::Matrix;

class Adapter {
 public:
  Adapter() = default;
  /// Seeded Gaussian initialization with variance 1/fan_in; zero biases.
  Adapter(std::size_t in_dim, std::size_t proto_dim, std::uint64_t seed);

  struct Cache {
    PatchMatrix input;
    PatchMatrix hidden;  // post-ReLU
    PatchMatrix output;  // post-sigmoid
  };

  std::size_t in_dim() const { return first.value.cols(); }
  std::size_t proto_dim() const { return second.value.rows(); }

  PatchMatrix forward(const PatchMatrix& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients and, when `dx` is non-null, dL/dx.
  void backward(const Cache& cache, const PatchMatrix& d_out, PatchMatrix* dx);

  num::GradSlot first;         // d_p x d
  num::GradSlot first_bias;    // 1 x d_p
  num::GradSlot second;        // d_p x d_p
  num::GradSlot second_bias;   // 1 x d_p

  void zero_grad();
};

struct ClassPrototypes {
  int level = 0;
  std::string class_id;
  num::GradSlot vectors;  // J x d_p
};

class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::size_t proto_dim, std::size_t per_class) : dim_(proto_dim), per_class_(per_class) {}

  std::size_t proto_dim() const { return dim_; }
  std::size_t per_class() const { return per_class_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_prototypes() const { return entries_.size() * per_class_; }

  const std::vector<ClassPrototypes>& entries() const { return entries_; }
  ClassPrototypes& entry(std::size_t i) { return entries_.at(i); }
  const ClassPrototypes& entry(std::size_t i) const { return entries_.at(i); }
  std::optional<std::size_t> find(int level, const std::string& class_id) const;
  /// Entry indices at `level`, in creation order.
  std::vector<std::size_t> level_entries(int level) const;

  /// Adds an entry (used by expand_prototypes and restore).
  std::size_t add(int level, const std::string& class_id, num::Matrix vectors);

  /// Snapshot handling. The cache is a deep copy of every entry's vectors;
  /// entries created after the snapshot have no cached counterpart.
  std::vector<num::Matrix> snapshot() const;
  void install_cache(std::vector<num::Matrix> snapshot, std::int64_t iteration);
  const num::Matrix* cached(std::size_t entry) const;
  std::int64_t cache_iteration() const { return cache_iteration_; }
  bool has_cache() const { return cache_iteration_ >= 0; }

  void zero_grad();
  template <typename Fn>
  void for_each_slot(Fn&& fn) {
    for (auto& e : entries_) fn(e.vectors);
  }

 private:
  std::size_t dim_ = 0;
  std::size_t per_class_ = 5;
  std::vector<ClassPrototypes> entries_;
  std::vector<num::Matrix> cache_;
  std::int64_t cache_iteration_ = -1;
};

/// Creates `per_class` unit prototypes for a new (level, class). When
/// `init_patches` is given (adapter output of the class's first sample),
/// prototypes are distinct patches picked by `rng` and normalized; otherwise
/// they are random unit vectors.
void expand_prototypes(PrototypeBank& bank, int level, const std::string& class_id,
                       const PatchMatrix* init_patches, Rng& rng);

/// Replaces the snapshot with the current vectors when iteration % period == 0.
void cache_prototypes(PrototypeBank& bank, std::int64_t iteration, std::int64_t period);

struct LevelScores {
  std::vector<std::size_t> entries;            // bank entries at the level
  num::Matrix score;                           // entries x J, spatial max cosine
  std::vector<std::vector<std::size_t>> argmax;  // entries x J, patch index
};

LevelScores prototype_scores(const PatchMatrix& M, const PrototypeBank& bank, int level);

/// Class logit = sum of the class's own prototype scores.
num::Vec prototype_logits(const LevelScores& scores);

struct ProtoLossWeights {
  double cross_entropy = 1.0;
  double cluster = 0.8;
  double separation = 0.08;
};

/// Sum over the label's defined levels of CE + cluster + separation costs.
/// Gradients (times `scale`) go to the prototypes and to `d_M` when non-null.
double proto_loss(const PatchMatrix& M, PrototypeBank& bank, const heads::CompletedLabel& label,
                  const ProtoLossWeights& weights, PatchMatrix* d_M, double scale = 1.0);

struct PairMax {
  double value = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
};

/// Maximum cosine over all prototype pairs of two banks (lowest indices win ties).
PairMax bank_similarity(const num::Matrix& a, const num::Matrix& b);

struct RegularizerConfig {
  double lambda = 0.1;
  double margin = 0.1;
  double topk_fraction = 0.10;
  std::size_t max_pairs = 32;
};

/// Margin ranking term over sampled anchored ancestor/descendant pairs.
/// Gradients (times `scale`) go to the live prototypes.
double ranking_loss(const taxonomy::DynamicLabelTree& tree, PrototypeBank& bank, double margin,
                    std::size_t max_pairs, Rng& rng, double scale = 1.0);

/// Temporal saliency term: for every cached prototype, mean squared change of
/// its similarity on the top-K patches of M. Gradients reach the live
/// prototypes and `d_M`.
double saliency_loss(const PatchMatrix& M, PrototypeBank& bank, double topk_fraction, PatchMatrix* d_M,
                     double scale = 1.0);

/// lambda * (ranking + mean saliency over `Ms`). With lambda = 0 nothing is
/// computed, no rng draw happens and no gradient is touched.
double hpr_regularizer(const taxonomy::DynamicLabelTree& tree, PrototypeBank& bank,
                       const std::vector<PatchMatrix>& Ms, const RegularizerConfig& config, Rng& rng,
                       std::vector<PatchMatrix>* d_Ms);

/// Distance matrix 1 - max pair cosine between the banks of `entries`.
num::Matrix prototype_distance_matrix(const PrototypeBank& bank, const std::vector<std::size_t>& entries);

/// CSV with a header row of class ids followed by one row per class.
std::string format_distance_csv(const PrototypeBank& bank, int level);

/// JSON index (level, class, J, offset) plus a binary payload of f64 values.
void write_prototype_dump(const PrototypeBank& bank, const std::filesystem::path& json_path,
                          const std::filesystem::path& bin_path);
PrototypeBank read_prototype_dump(const std::filesystem::path& json_path, const std::filesystem::path& bin_path);

}  // namespace halo::hpr
