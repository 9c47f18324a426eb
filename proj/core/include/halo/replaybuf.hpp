#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "halo/rng.hpp"
#include "halo/streamgen.hpp"

namespace halo::replay {

/// A stored stream occurrence. Annotations keep their original granularity;
/// completion against the live tree happens when a batch is drawn.
struct BufferItem {
  std::size_t feature_ref = 0;
  std::uint64_t sample_id = 0;
  std::uint32_t jitter_tag = 0;
  std::string true_fine_class;
  stream::Annotation annotation;
  std::size_t insertion_index = 0;
  friend bool operator==(const BufferItem&, const BufferItem&) = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000, std::uint64_t seed = 0);

  /// Reservoir step: the first `capacity` offers are kept, later offer t is
  /// kept with probability capacity / t and replaces a uniform victim.
  bool offer(const stream::StreamSample& sample);

  /// `k` items, drawn with replacement only when the buffer holds fewer than k.
  std::vector<BufferItem> sample_batch(std::size_t k, Rng& rng) const;

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t seen_count() const { return seen_; }
  const std::vector<BufferItem>& items() const { return items_; }

  /// CSV `slot,sample_id,true_fine,annot_class,annot_level,insertion_index`.
  std::string dump_csv() const;

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<BufferItem> items_;
  Rng rng_;
};

}  // namespace halo::replay
