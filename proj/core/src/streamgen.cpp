#include "halo/streamgen.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "halo/errors.hpp"

namespace halo::stream {

void StreamConfig::validate() const {
  if (num_groups == 0) throw ConfigError("stream.num_groups must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 0.5)) {
    throw ConfigError("stream.overlap_fraction must lie in [0, 0.5)");
  }
  if (duplication_factor == 0) throw ConfigError("stream.duplication_factor must be positive");
  if (!granularity_weights.empty()) {
    double total = 0.0;
    for (double w : granularity_weights) {
      if (w < 0.0) throw ConfigError("stream.granularity_weights must be nonnegative");
      total += w;
    }
    if (total <= 0.0) throw ConfigError("stream.granularity_weights are all zero");
  }
}

std::vector<std::vector<std::string>> partition_classes(const std::vector<std::string>& fine_classes,
                                                        std::size_t num_groups, std::uint64_t seed) {
  if (num_groups == 0 || num_groups > fine_classes.size()) {
    throw DomainError("num_groups must lie in [1, number of fine classes]");
  }
  std::vector<std::string> order = fine_classes;
  Rng rng(mix_seed(seed, "partition"));
  shuffle(order.begin(), order.end(), rng);
  const std::size_t base = order.size() / num_groups;
  const std::size_t extra = order.size() % num_groups;
  std::vector<std::vector<std::string>> groups(num_groups);
  std::size_t pos = 0;
  for (std::size_t g = 0; g < num_groups; ++g) {
    const std::size_t n = base + (g < extra ? 1 : 0);
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  return groups;
}

std::vector<std::vector<std::string>> partition_by_ancestor(const taxonomy::DynamicLabelTree& truth,
                                                            const std::vector<std::string>& fine_classes,
                                                            int ancestor_level, std::size_t num_groups,
                                                            std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> by_ancestor;
  std::vector<std::string> keys;
  for (const auto& fine : fine_classes) {
    const auto path = truth.ancestor_path(fine);
    auto it = path.find(ancestor_level);
    const std::string key = it == path.end() ? fine : it->second;
    auto& bucket = by_ancestor[key];
    if (bucket.empty()) keys.push_back(key);
    bucket.push_back(fine);
  }
  const auto key_groups = partition_classes(keys, num_groups, seed);
  std::vector<std::vector<std::string>> groups;
  for (const auto& kg : key_groups) {
    std::vector<std::string> g;
    for (const auto& key : kg) {
      const auto& members = by_ancestor.at(key);
      g.insert(g.end(), members.begin(), members.end());
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

Annotation sample_granularity(const std::string& fine_class, const taxonomy::DynamicLabelTree& truth,
                              std::span<const double> weights, Rng& rng) {
  const auto path = truth.ancestor_path(fine_class);
  std::vector<std::pair<int, double>> options;
  double total = 0.0;
  for (const auto& [level, id] : path) {
    const double w = weights.empty() ? 1.0
                     : static_cast<std::size_t>(level) < weights.size()
                         ? weights[static_cast<std::size_t>(level)]
                         : 0.0;
    if (w > 0.0) {
      options.emplace_back(level, w);
      total += w;
    }
  }
  const int leaf_level = truth.node(fine_class).level;
  if (options.empty()) return {fine_class, leaf_level};
  double u = uniform01(rng) * total;
  for (const auto& [level, w] : options) {
    if (u < w) return {path.at(level), level};
    u -= w;
  }
  const int last = options.back().first;
  return {path.at(last), last};
}

std::vector<StreamSample> build_stream(const std::vector<std::vector<std::string>>& groups,
                                       const features::DatasetIndex& index,
                                       const features::FeatureStore& store,
                                       const taxonomy::DynamicLabelTree& truth,
                                       const StreamConfig& config) {
  config.validate();
  std::map<std::string, std::size_t> class_pos;
  for (std::size_t i = 0; i < index.fine_classes.size(); ++i) class_pos[index.fine_classes[i]] = i;

  std::vector<double> weights = config.granularity_weights;
  if (weights.empty()) weights.assign(static_cast<std::size_t>(std::max(truth.num_levels(), 1)), 1.0);

  struct Occurrence {
    std::size_t record;
    std::uint32_t tag;
    std::size_t cls;
  };
  std::vector<std::vector<Occurrence>> spans;
  Rng order_rng(mix_seed(config.seed, "stream-order"));
  for (const auto& group : groups) {
    std::vector<Occurrence> pool;
    for (const auto& cls : group) {
      auto it = class_pos.find(cls);
      if (it == class_pos.end() || index.train[it->second].empty()) {
        throw DomainError("fine class '" + cls + "' has no training samples");
      }
      for (std::size_t rec : index.train[it->second]) {
        for (std::uint32_t k = 0; k < config.duplication_factor; ++k) pool.push_back({rec, k, it->second});
      }
    }
    shuffle(pool.begin(), pool.end(), order_rng);
    spans.push_back(std::move(pool));
  }

  std::vector<Occurrence> flat;
  std::vector<std::size_t> boundaries;
  for (const auto& s : spans) {
    flat.insert(flat.end(), s.begin(), s.end());
    boundaries.push_back(flat.size());
  }

  // Blur each boundary by mirrored swaps: the slot at distance k from the
  // boundary trades places with its mirror with probability 0.5 (1 - k / w),
  // giving linear 0 -> 0.5 mixing ramps on both sides.
  Rng blur_rng(mix_seed(config.seed, "stream-blur"));
  for (std::size_t g = 0; g + 1 < spans.size(); ++g) {
    const std::size_t boundary = boundaries[g];
    const std::size_t shorter = std::min(spans[g].size(), spans[g + 1].size());
    const auto window = static_cast<std::size_t>(config.overlap_fraction * static_cast<double>(shorter));
    for (std::size_t k = 0; k < window; ++k) {
      const double p = 0.5 * (1.0 - static_cast<double>(k) / static_cast<double>(window));
      if (uniform01(blur_rng) < p) std::swap(flat[boundary - 1 - k], flat[boundary + k]);
    }
  }

  Rng label_rng(mix_seed(config.seed, "stream-granularity"));
  std::vector<StreamSample> stream;
  stream.reserve(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const auto& occ = flat[i];
    StreamSample s;
    s.sample_id = store.records.at(occ.record).sample_id;
    s.feature_ref = occ.record;
    s.true_fine_class = index.fine_classes[occ.cls];
    s.annotation = sample_granularity(s.true_fine_class, truth, weights, label_rng);
    s.arrival_index = i;
    s.jitter_tag = occ.tag;
    stream.push_back(std::move(s));
  }
  return stream;
}

std::vector<HierarchyEvent> schedule_hierarchy_events(const std::vector<StreamSample>& stream) {
  std::vector<HierarchyEvent> events;
  std::unordered_set<std::string> seen;
  for (const auto& s : stream) {
    if (seen.insert(s.annotation.class_id).second) {
      events.push_back({s.arrival_index, s.annotation.class_id, s.annotation.level});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.arrival_index < b.arrival_index; });
  return events;
}

std::string format_manifest(const std::vector<StreamSample>& stream) {
  std::string out = "arrival_index,sample_id,true_fine,annot_class,annot_level,jitter_tag\n";
  for (const auto& s : stream) {
    out += std::to_string(s.arrival_index) + ',' + std::to_string(s.sample_id) + ',' +
           s.true_fine_class + ',' + s.annotation.class_id + ',' + std::to_string(s.annotation.level) +
           ',' + std::to_string(s.jitter_tag) + '\n';
  }
  return out;
}

}  // namespace halo::stream
