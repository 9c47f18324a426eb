#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "halo/numkit.hpp"
#include "halo/streamgen.hpp"
#include "halo/taxonomy.hpp"

namespace halo::heads {

/// Append-only mapping between class ids and output rows at one level.
class ClassIndex {
 public:
  /// Throws TaxonomyError when `id` is already present.
  std::size_t add(const std::string& id);
  std::optional<std::size_t> find(const std::string& id) const;
  std::size_t at(const std::string& id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> rows_;
};

struct CompletedLabel {
  /// level -> class id, for defined levels only.
  std::map<int, std::string> classes;
  stream::Annotation source;

  bool defined(int level) const { return classes.count(level) != 0; }
};

/// Completes an annotation along its ancestor path in `tree`.
CompletedLabel complete_label(const taxonomy::DynamicLabelTree& tree, const stream::Annotation& annotation);

// ---- linear heads ---------------------------------------------------------

class LinearHeadBank {
 public:
  explicit LinearHeadBank(std::size_t feature_dim = 0) : dim_(feature_dim) {}

  /// Appends zero rows for `ids` at `level`; creates missing levels.
  void expand(int level, const std::vector<std::string>& ids);

  std::size_t feature_dim() const { return dim_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const ClassIndex& classes(int level) const { return levels_.at(static_cast<std::size_t>(level)).classes; }
  num::GradSlot& weights(int level) { return levels_.at(static_cast<std::size_t>(level)).weights; }
  const num::GradSlot& weights(int level) const { return levels_.at(static_cast<std::size_t>(level)).weights; }

  num::Vec logits(int level, std::span<const double> feature) const;
  /// Accumulates dL/dW and dL/dfeature for the given dL/dlogits.
  void backward(int level, std::span<const double> feature, std::span<const double> d_logits,
                std::span<double> d_feature);

  void zero_grad();
  template <typename Fn>
  void for_each_slot(Fn&& fn) {
    for (auto& l : levels_) fn(l.weights);
  }

 private:
  struct Level {
    ClassIndex classes;
    num::GradSlot weights;
  };
  std::size_t dim_;
  std::vector<Level> levels_;
};

/// Sum of per-level cross-entropies over the label's defined levels. Gradients
/// are scaled by `scale` and accumulated into the bank and `d_feature`; the
/// returned loss is scaled too. Throws DomainError when no level is defined.
double multi_ce_stream_loss(LinearHeadBank& bank, std::span<const double> feature,
                            const CompletedLabel& label, std::span<double> d_feature, double scale = 1.0);

/// Sums child probabilities into their anchored parents. `parent_ids` fixes
/// the output order. Throws TaxonomyError when a child with nonzero mass has
/// no parent among `parent_ids`.
num::Vec aggregate_up(const taxonomy::DynamicLabelTree& tree, const std::vector<std::string>& child_ids,
                      std::span<const double> p_child, const std::vector<std::string>& parent_ids);

/// Per-level CE at defined levels plus half the JS divergence between each
/// level's distribution and the upward aggregate of the next level. Children
/// without a parent at the level above are left out of the aggregate, which is
/// renormalized over the remaining mass.
double replay_consistency_loss(LinearHeadBank& bank, const taxonomy::DynamicLabelTree& tree,
                               std::span<const double> feature, const CompletedLabel& label,
                               std::span<double> d_feature, double scale = 1.0);

// ---- analytic heads -------------------------------------------------------

class AnalyticHead {
 public:
  AnalyticHead() = default;
  AnalyticHead(std::size_t feature_dim, double gamma = 1.0);

  void expand(const std::vector<std::string>& ids);

  const ClassIndex& classes() const { return classes_; }
  const Eigen::MatrixXd& W() const { return W_; }
  const Eigen::MatrixXd& R() const { return R_; }
  double gamma() const { return gamma_; }
  std::size_t feature_dim() const { return static_cast<std::size_t>(R_.rows()); }

  Eigen::VectorXd logits(const Eigen::VectorXd& phi) const { return W_ * phi; }

 private:
  friend void rls_update(AnalyticHead& head, const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y);
  friend AnalyticHead restore_head(ClassIndex classes, Eigen::MatrixXd W, Eigen::MatrixXd R, double gamma);

  ClassIndex classes_;
  Eigen::MatrixXd W_;
  Eigen::MatrixXd R_;
  double gamma_ = 1.0;
};

/// One recursive least-squares step on a batch: Phi is d0 x b, Y is C x b.
/// A zero-column batch leaves the head unchanged.
void rls_update(AnalyticHead& head, const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y);

AnalyticHead restore_head(ClassIndex classes, Eigen::MatrixXd W, Eigen::MatrixXd R, double gamma);

class AnalyticHeadBank {
 public:
  AnalyticHeadBank() = default;
  AnalyticHeadBank(std::size_t feature_dim, double gamma) : dim_(feature_dim), gamma_(gamma) {}

  void expand(int level, const std::vector<std::string>& ids);
  /// Appends a restored head as the next level.
  void push_level(AnalyticHead head);
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const AnalyticHead& head(int level) const { return levels_.at(static_cast<std::size_t>(level)); }
  AnalyticHead& head(int level) { return levels_.at(static_cast<std::size_t>(level)); }
  std::size_t feature_dim() const { return dim_; }
  double gamma() const { return gamma_; }

  /// Updates every level with the items whose label is defined there.
  void update(const std::vector<Eigen::VectorXd>& phis, const std::vector<CompletedLabel>& labels);

 private:
  std::size_t dim_ = 0;
  double gamma_ = 1.0;
  std::vector<AnalyticHead> levels_;
};

/// Binary checkpoint: magic "DHHD", u32 version, u32 level count, then per
/// level: u32 class count, (u32 length + bytes) per class id, u32 d0,
/// f64 gamma, W (C x d0) and R (d0 x d0) as row-major f64. Little-endian.
std::vector<std::uint8_t> encode_heads(const AnalyticHeadBank& bank);
AnalyticHeadBank decode_heads(std::span<const std::uint8_t> bytes);
void write_heads(const AnalyticHeadBank& bank, const std::filesystem::path& path);
AnalyticHeadBank read_heads(const std::filesystem::path& path);

}  // namespace halo::heads
