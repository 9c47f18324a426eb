#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace halo::taxonomy {

/// Parent token for level-0 classes in taxonomy files; the root itself is
/// virtual and never a class.
inline constexpr std::string_view kRootId = "<root>";
/// Parent token for unanchored declarations in taxonomy files.
inline constexpr std::string_view kUnanchoredToken = "*";
inline constexpr int kRootLevel = -1;

struct ClassNode {
  std::string id;
  std::string display_name;
  int level = 0;
  /// Set iff the node is anchored; holds kRootId for nodes hanging off the root.
  std::optional<std::string> parent;
  /// Original class for padding placeholders, the node's own id otherwise.
  std::string canonical;
  std::int64_t registered_at = 0;

  bool anchored() const { return parent.has_value(); }
};

struct Edge {
  std::string parent;
  std::string child;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// The evolving label tree. Nodes are kept in registration order and every
/// class id lives in exactly one level set. Mutations bump `version()`.
class DynamicLabelTree {
 public:
  /// Inserts an unanchored node. Throws TaxonomyError on a duplicate id or a
  /// negative level.
  const ClassNode& register_class(std::string_view id, int level, std::int64_t iteration = 0,
                                  std::string_view display_name = {});

  /// Anchors `child` under `parent` (kRootId for the root). The parent must be
  /// one level above the child unless it is the root; cycles are rejected.
  void attach(std::string_view child, std::string_view parent);

  bool contains(std::string_view id) const;
  const ClassNode& node(std::string_view id) const;
  const std::vector<std::string>& level_classes(int level) const;
  /// Number of levels that currently exist (max level + 1, 0 when empty).
  int num_levels() const { return static_cast<int>(levels_.size()); }
  int max_level() const { return num_levels() - 1; }
  /// Worst-case severity: number of levels below the root.
  int depth() const { return num_levels(); }
  std::uint64_t version() const { return version_; }
  std::size_t size() const { return order_.size(); }

  /// Node ids in registration order.
  const std::vector<std::string>& ids() const { return order_; }
  std::vector<std::string> children(std::string_view id) const;
  std::vector<std::string> unanchored() const;
  /// Anchored nodes without children.
  std::vector<std::string> leaves() const;
  bool is_leaf(std::string_view id) const;

  /// Ancestor chain from the node's level up to level 0. Stops early at an
  /// unanchored node or at a node attached directly to the root.
  std::map<int, std::string> ancestor_path(std::string_view id) const;

  /// True when the parent chain of `id` reaches the root.
  bool rooted(std::string_view id) const;
  bool is_ancestor(std::string_view ancestor, std::string_view descendant) const;

  /// Lowest common ancestor; nullopt means the virtual root.
  std::optional<std::string> lca(std::string_view a, std::string_view b) const;

  /// Edges from the finest level up to the lowest common ancestor (root sits
  /// at level -1). Operands that are not rooted score depth().
  int lca_severity(std::string_view predicted, std::string_view truth) const;

  /// Edge set (parent -> child) in registration order of the children.
  std::vector<Edge> edges() const;

 private:
  friend DynamicLabelTree pad_uniform_depth(const DynamicLabelTree& tree);

  ClassNode& mutable_node(std::string_view id);

  std::unordered_map<std::string, ClassNode> nodes_;
  std::unordered_map<std::string, std::vector<std::string>> children_;
  std::vector<std::vector<std::string>> levels_;
  std::vector<std::string> order_;
  std::uint64_t version_ = 0;
};

/// Pads leaves that sit above the deepest leaf by chaining placeholder copies
/// `<orig>@L<level>` below them until every anchored leaf reaches the maximum
/// depth. Placeholders keep the original as `canonical`.
DynamicLabelTree pad_uniform_depth(const DynamicLabelTree& tree);

std::string placeholder_id(std::string_view original, int level);

enum class LinkKind { kTrue, kVacant, kNoisy };

struct LinkAnswer {
  LinkKind kind = LinkKind::kTrue;
  /// Parent to attach under (kRootId for vacant links); nullopt when the link
  /// cannot be answered against the current vocabulary yet.
  std::optional<std::string> parent;
};

/// Local ground-truth knowledge source with optional delay and corruption.
/// Corruption is decided per class from (seed, class id), so it does not
/// depend on query order.
class KnowledgeOracle {
 public:
  KnowledgeOracle() = default;
  explicit KnowledgeOracle(DynamicLabelTree ground_truth, std::int64_t delay_iterations = 0,
                           double noise_rate = 0.0, double vacancy_rate = 0.0,
                           std::uint64_t seed = 0);

  const DynamicLabelTree& ground_truth() const { return truth_; }
  std::int64_t delay_iterations() const { return delay_; }
  double noise_rate() const { return noise_; }
  double vacancy_rate() const { return vacancy_; }
  std::uint64_t seed() const { return seed_; }

  LinkKind decision(std::string_view class_id) const;
  /// Answers the parent link of `class_id` against the vocabulary of `current`.
  LinkAnswer query(std::string_view class_id, const DynamicLabelTree& current) const;

 private:
  DynamicLabelTree truth_;
  std::int64_t delay_ = 0;
  double noise_ = 0.0;
  double vacancy_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Copy of `oracle` with new corruption rates. Throws DomainError for rates
/// outside [0, 1].
KnowledgeOracle corrupt_oracle(const KnowledgeOracle& oracle, double noise_rate,
                               double vacancy_rate, std::uint64_t seed);

/// Queries the oracle for every unanchored node whose registration age has
/// reached the oracle delay; returns the edges added, coarse levels first.
std::vector<Edge> resolve_pending(DynamicLabelTree& tree, const KnowledgeOracle& oracle,
                                  std::int64_t current_iteration);

// ---- file format ----------------------------------------------------------

DynamicLabelTree parse_taxonomy(std::string_view text);
DynamicLabelTree read_taxonomy_file(const std::filesystem::path& path);
std::string format_taxonomy(const DynamicLabelTree& tree);
void write_taxonomy_file(const DynamicLabelTree& tree, const std::filesystem::path& path);

/// Fully anchored balanced tree; branching[h] children per level-(h-1) node.
/// Ids look like `n2`, `n2.0`, `n2.0.3`.
DynamicLabelTree make_balanced_taxonomy(const std::vector<int>& branching);

/// Fine classes (anchored leaves) in lexicographic order; a class's position
/// is its numeric fine_class_id in feature files.
std::vector<std::string> fine_class_manifest(const DynamicLabelTree& tree);
std::string format_class_manifest(const std::vector<std::string>& fine_classes);

}  // namespace halo::taxonomy
