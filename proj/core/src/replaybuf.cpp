#include "halo/replaybuf.hpp"

#include <numeric>

#include "halo/errors.hpp"

namespace halo::replay {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(mix_seed(seed, "reservoir")) {
  items_.reserve(capacity);
}

bool ReplayBuffer::offer(const stream::StreamSample& sample) {
  ++seen_;
  if (capacity_ == 0) return false;
  BufferItem item{sample.feature_ref, sample.sample_id, sample.jitter_tag, sample.true_fine_class,
                  sample.annotation,  sample.arrival_index};
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
    return true;
  }
  const std::uint64_t slot = uniform_index(rng_, seen_);
  if (slot >= capacity_) return false;
  items_[slot] = std::move(item);
  return true;
}

std::vector<BufferItem> ReplayBuffer::sample_batch(std::size_t k, Rng& rng) const {
  if (items_.empty()) throw DomainError("cannot sample from an empty replay buffer");
  std::vector<BufferItem> out;
  out.reserve(k);
  if (items_.size() < k) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(items_[uniform_index(rng, items_.size())]);
    return out;
  }
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(items_[idx[i]]);
  }
  return out;
}

std::string ReplayBuffer::dump_csv() const {
  std::string out = "slot,sample_id,true_fine,annot_class,annot_level,insertion_index\n";
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    out += std::to_string(i) + ',' + std::to_string(it.sample_id) + ',' + it.true_fine_class + ',' +
           it.annotation.class_id + ',' + std::to_string(it.annotation.level) + ',' +
           std::to_string(it.insertion_index) + '\n';
  }
  return out;
}

}  // namespace halo::replay
