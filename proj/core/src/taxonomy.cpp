#include "halo/taxonomy.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "halo/errors.hpp"
#include "halo/rng.hpp"

namespace halo::taxonomy {

namespace {

const std::vector<std::string> kNoClasses;

std::string str(std::string_view s) { return std::string(s); }

}  // namespace

const ClassNode& DynamicLabelTree::register_class(std::string_view id, int level,
                                                  std::int64_t iteration,
                                                  std::string_view display_name) {
  if (id.empty() || id == kRootId || id == kUnanchoredToken) {
    throw TaxonomyError("invalid class id '" + str(id) + "'");
  }
  if (level < 0) throw TaxonomyError("class '" + str(id) + "' has negative level");
  if (contains(id)) throw TaxonomyError("duplicate class id '" + str(id) + "'");
  ClassNode node;
  node.id = str(id);
  node.display_name = display_name.empty() ? node.id : str(display_name);
  node.level = level;
  node.canonical = node.id;
  node.registered_at = iteration;
  if (static_cast<int>(levels_.size()) <= level) levels_.resize(level + 1);
  levels_[level].push_back(node.id);
  order_.push_back(node.id);
  ++version_;
  return nodes_.emplace(node.id, std::move(node)).first->second;
}

void DynamicLabelTree::attach(std::string_view child, std::string_view parent) {
  ClassNode& c = mutable_node(child);
  if (c.anchored()) throw TaxonomyError("class '" + c.id + "' is already anchored");
  if (parent != kRootId) {
    const ClassNode& p = node(parent);
    if (p.level != c.level - 1) {
      throw TaxonomyError("parent '" + p.id + "' is not one level above '" + c.id + "'");
    }
    if (p.id == c.id || is_ancestor(c.id, p.id)) {
      throw TaxonomyError("attaching '" + c.id + "' under '" + p.id + "' creates a cycle");
    }
  }
  c.parent = str(parent);
  children_[str(parent)].push_back(c.id);
  ++version_;
}

bool DynamicLabelTree::contains(std::string_view id) const { return nodes_.count(str(id)) > 0; }

const ClassNode& DynamicLabelTree::node(std::string_view id) const {
  auto it = nodes_.find(str(id));
  if (it == nodes_.end()) throw TaxonomyError("unknown class id '" + str(id) + "'");
  return it->second;
}

ClassNode& DynamicLabelTree::mutable_node(std::string_view id) {
  auto it = nodes_.find(str(id));
  if (it == nodes_.end()) throw TaxonomyError("unknown class id '" + str(id) + "'");
  return it->second;
}

const std::vector<std::string>& DynamicLabelTree::level_classes(int level) const {
  if (level < 0 || level >= num_levels()) return kNoClasses;
  return levels_[level];
}

std::vector<std::string> DynamicLabelTree::children(std::string_view id) const {
  auto it = children_.find(str(id));
  return it == children_.end() ? std::vector<std::string>{} : it->second;
}

std::vector<std::string> DynamicLabelTree::unanchored() const {
  std::vector<std::string> out;
  for (const auto& id : order_) {
    if (!nodes_.at(id).anchored()) out.push_back(id);
  }
  return out;
}

bool DynamicLabelTree::is_leaf(std::string_view id) const {
  const auto& n = node(id);
  auto it = children_.find(n.id);
  return n.anchored() && (it == children_.end() || it->second.empty());
}

std::vector<std::string> DynamicLabelTree::leaves() const {
  std::vector<std::string> out;
  for (const auto& id : order_) {
    if (is_leaf(id)) out.push_back(id);
  }
  return out;
}

std::map<int, std::string> DynamicLabelTree::ancestor_path(std::string_view id) const {
  std::map<int, std::string> path;
  const ClassNode* cur = &node(id);
  while (true) {
    path.emplace(cur->level, cur->id);
    if (!cur->anchored() || *cur->parent == kRootId) break;
    cur = &node(*cur->parent);
  }
  return path;
}

bool DynamicLabelTree::rooted(std::string_view id) const {
  const ClassNode* cur = &node(id);
  while (cur->anchored()) {
    if (*cur->parent == kRootId) return true;
    cur = &node(*cur->parent);
  }
  return false;
}

bool DynamicLabelTree::is_ancestor(std::string_view ancestor, std::string_view descendant) const {
  const ClassNode* cur = &node(descendant);
  while (cur->anchored() && *cur->parent != kRootId) {
    if (*cur->parent == ancestor) return true;
    cur = &node(*cur->parent);
  }
  return false;
}

std::optional<std::string> DynamicLabelTree::lca(std::string_view a, std::string_view b) const {
  std::set<std::string> seen;
  for (const ClassNode* cur = &node(a);;) {
    seen.insert(cur->id);
    if (!cur->anchored() || *cur->parent == kRootId) break;
    cur = &node(*cur->parent);
  }
  for (const ClassNode* cur = &node(b);;) {
    if (seen.count(cur->id)) return cur->id;
    if (!cur->anchored() || *cur->parent == kRootId) break;
    cur = &node(*cur->parent);
  }
  return std::nullopt;
}

int DynamicLabelTree::lca_severity(std::string_view predicted, std::string_view truth) const {
  const ClassNode& p = node(predicted);
  const ClassNode& t = node(truth);
  if (p.id == t.id) return 0;
  if (!rooted(p.id) || !rooted(t.id)) return depth();
  const auto common = lca(p.id, t.id);
  const int common_level = common ? node(*common).level : kRootLevel;
  return max_level() - common_level;
}

std::vector<Edge> DynamicLabelTree::edges() const {
  std::vector<Edge> out;
  for (const auto& id : order_) {
    const auto& n = nodes_.at(id);
    if (n.anchored()) out.push_back({*n.parent, n.id});
  }
  return out;
}

// ---- padding --------------------------------------------------------------

std::string placeholder_id(std::string_view original, int level) {
  return str(original) + "@L" + std::to_string(level);
}

DynamicLabelTree pad_uniform_depth(const DynamicLabelTree& tree) {
  const auto leaves = tree.leaves();
  int deepest = -1;
  for (const auto& id : leaves) deepest = std::max(deepest, tree.node(id).level);
  const bool uniform = std::all_of(leaves.begin(), leaves.end(), [&](const std::string& id) {
    return tree.node(id).level == deepest;
  });
  if (uniform) return tree;

  DynamicLabelTree out = tree;
  for (const auto& leaf : leaves) {
    const ClassNode& original = tree.node(leaf);
    std::string parent = original.id;
    for (int level = original.level + 1; level <= deepest; ++level) {
      const std::string id = placeholder_id(original.canonical, level);
      out.register_class(id, level, original.registered_at, original.display_name);
      out.attach(id, parent);
      out.mutable_node(id).canonical = original.canonical;
      parent = id;
    }
  }
  return out;
}

// ---- oracle ---------------------------------------------------------------

KnowledgeOracle::KnowledgeOracle(DynamicLabelTree ground_truth, std::int64_t delay_iterations,
                                 double noise_rate, double vacancy_rate, std::uint64_t seed)
    : truth_(std::move(ground_truth)),
      delay_(delay_iterations),
      noise_(noise_rate),
      vacancy_(vacancy_rate),
      seed_(seed) {
  if (delay_ < 0) throw DomainError("oracle delay must be nonnegative");
  if (noise_ < 0.0 || noise_ > 1.0 || vacancy_ < 0.0 || vacancy_ > 1.0) {
    throw DomainError("oracle corruption rates must lie in [0, 1]");
  }
}

LinkKind KnowledgeOracle::decision(std::string_view class_id) const {
  Rng rng(mix_seed(seed_, class_id));
  const double u = uniform01(rng);
  if (u < vacancy_) return LinkKind::kVacant;
  if (u < vacancy_ + noise_) return LinkKind::kNoisy;
  return LinkKind::kTrue;
}

LinkAnswer KnowledgeOracle::query(std::string_view class_id, const DynamicLabelTree& current) const {
  LinkAnswer answer;
  if (!truth_.contains(class_id)) return answer;
  const ClassNode& truth = truth_.node(class_id);
  if (!truth.anchored()) return answer;
  const std::string& true_parent = *truth.parent;
  if (true_parent == kRootId) {
    answer.parent = str(kRootId);
    return answer;
  }
  answer.kind = decision(class_id);
  switch (answer.kind) {
    case LinkKind::kVacant:
      answer.parent = str(kRootId);
      return answer;
    case LinkKind::kNoisy: {
      std::vector<std::string> candidates;
      for (const auto& id : current.level_classes(truth.level - 1)) {
        if (id != true_parent && current.node(id).anchored()) candidates.push_back(id);
      }
      if (!candidates.empty()) {
        Rng rng(mix_seed(seed_ ^ 0x6e6f697365ULL, class_id));
        answer.parent = candidates[uniform_index(rng, candidates.size())];
      }
      return answer;
    }
    case LinkKind::kTrue:
      if (current.contains(true_parent) && current.node(true_parent).anchored()) {
        answer.parent = true_parent;
      }
      return answer;
  }
  return answer;
}

KnowledgeOracle corrupt_oracle(const KnowledgeOracle& oracle, double noise_rate,
                               double vacancy_rate, std::uint64_t seed) {
  return KnowledgeOracle(oracle.ground_truth(), oracle.delay_iterations(), noise_rate, vacancy_rate,
                         seed);
}

std::vector<Edge> resolve_pending(DynamicLabelTree& tree, const KnowledgeOracle& oracle,
                                  std::int64_t current_iteration) {
  std::vector<Edge> added;
  // Coarse levels first so a whole chain can resolve in one call.
  for (int level = 0; level < tree.num_levels(); ++level) {
    for (const auto& id : tree.level_classes(level)) {
      const ClassNode& n = tree.node(id);
      if (n.anchored()) continue;
      if (current_iteration - n.registered_at < oracle.delay_iterations()) continue;
      const LinkAnswer answer = oracle.query(id, tree);
      if (!answer.parent) continue;
      tree.attach(id, *answer.parent);
      added.push_back({*answer.parent, id});
    }
  }
  return added;
}

// ---- file format ----------------------------------------------------------

DynamicLabelTree parse_taxonomy(std::string_view text) {
  struct Line {
    std::string parent, child;
    int level;
    std::size_t number;
  };
  std::vector<Line> lines;
  std::size_t number = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++number;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = raw.find('\t', start);
      fields.push_back(raw.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw FormatError("taxonomy line " + std::to_string(number) + ": expected 3 tab-separated fields");
    }
    int level = 0;
    const auto& lv = fields[2];
    auto [ptr, ec] = std::from_chars(lv.data(), lv.data() + lv.size(), level);
    if (ec != std::errc{} || ptr != lv.data() + lv.size() || level < 0) {
      throw FormatError("taxonomy line " + std::to_string(number) + ": bad level '" + lv + "'");
    }
    lines.push_back({fields[0], fields[1], level, number});
  }

  DynamicLabelTree tree;
  for (const auto& l : lines) tree.register_class(l.child, l.level);
  for (const auto& l : lines) {
    if (l.parent == kUnanchoredToken) continue;
    if (l.parent != kRootId && !tree.contains(l.parent)) {
      throw FormatError("taxonomy line " + std::to_string(l.number) + ": undeclared parent '" +
                        l.parent + "'");
    }
    tree.attach(l.child, l.parent);
  }
  return tree;
}

DynamicLabelTree read_taxonomy_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open taxonomy file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_taxonomy(buf.str());
}

std::string format_taxonomy(const DynamicLabelTree& tree) {
  std::string out = "# parent\tchild\tchild_level\n";
  for (const auto& id : tree.ids()) {
    const ClassNode& n = tree.node(id);
    out += n.anchored() ? *n.parent : str(kUnanchoredToken);
    out += '\t';
    out += n.id;
    out += '\t';
    out += std::to_string(n.level);
    out += '\n';
  }
  return out;
}

void write_taxonomy_file(const DynamicLabelTree& tree, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write taxonomy file " + path.string());
  out << format_taxonomy(tree);
}

DynamicLabelTree make_balanced_taxonomy(const std::vector<int>& branching) {
  if (branching.empty()) throw DomainError("balanced taxonomy needs at least one level");
  DynamicLabelTree tree;
  std::vector<std::string> frontier;
  for (int i = 0; i < branching[0]; ++i) {
    const std::string id = "n" + std::to_string(i);
    tree.register_class(id, 0);
    tree.attach(id, kRootId);
    frontier.push_back(id);
  }
  for (std::size_t level = 1; level < branching.size(); ++level) {
    std::vector<std::string> next;
    for (const auto& parent : frontier) {
      for (int i = 0; i < branching[level]; ++i) {
        const std::string id = parent + "." + std::to_string(i);
        tree.register_class(id, static_cast<int>(level));
        tree.attach(id, parent);
        next.push_back(id);
      }
    }
    frontier = std::move(next);
  }
  return tree;
}

std::vector<std::string> fine_class_manifest(const DynamicLabelTree& tree) {
  auto leaves = tree.leaves();
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

std::string format_class_manifest(const std::vector<std::string>& fine_classes) {
  std::string out = "class_name,fine_class_id\n";
  for (std::size_t i = 0; i < fine_classes.size(); ++i) {
    out += fine_classes[i] + "," + std::to_string(i) + "\n";
  }
  return out;
}

}  // namespace halo::taxonomy
