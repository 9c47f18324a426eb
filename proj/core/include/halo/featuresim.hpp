#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "halo/taxonomy.hpp"

namespace halo::features {

/// d x H x W activations stored channel-major: values[(c * H + u) * W + v].
struct FeatureMap {
  std::uint32_t d = 0;
  std::uint32_t H = 0;
  std::uint32_t W = 0;
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(std::uint32_t d, std::uint32_t H, std::uint32_t W)
      : d(d), H(H), W(W), values(static_cast<std::size_t>(d) * H * W, 0.0f) {}

  std::size_t patches() const { return static_cast<std::size_t>(H) * W; }
  float& at(std::size_t channel, std::size_t patch) { return values[channel * patches() + patch]; }
  float at(std::size_t channel, std::size_t patch) const { return values[channel * patches() + patch]; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

enum class Split : std::uint32_t { kTrain = 0, kTest = 1 };

struct FeatureRecord {
  std::uint64_t sample_id = 0;
  std::uint32_t fine_class_id = 0;
  Split split = Split::kTrain;
  FeatureMap map;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Immutable-after-construction collection of feature records sharing d/H/W.
struct FeatureStore {
  std::uint32_t d = 0;
  std::uint32_t H = 0;
  std::uint32_t W = 0;
  std::vector<FeatureRecord> records;

  friend bool operator==(const FeatureStore&, const FeatureStore&) = default;
};

struct SynthConfig {
  std::uint32_t d = 32;
  std::uint32_t H = 4;
  std::uint32_t W = 4;
  /// Noise scale attached to each level's mean component, coarse first.
  std::vector<double> sigma_per_level{1.0, 1.0, 1.0};
  std::uint32_t samples_per_class = 60;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Record indices grouped by fine class (position in `fine_classes`).
struct DatasetIndex {
  std::vector<std::string> fine_classes;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> test;
};

struct SyntheticDataset {
  FeatureStore store;
  DatasetIndex index;
};

/// Deterministic unit-norm mean direction for a taxonomy node.
std::vector<double> node_mean(std::string_view node_id, std::uint32_t d, std::uint64_t seed);

/// Per-level weights 2^-level along a root path, renormalized to sum to 1.
std::vector<double> level_weights(int fine_level);

/// Generates `samples_per_class` maps per leaf of a uniform-depth taxonomy.
/// Throws DomainError when leaf depths differ or the config is invalid.
SyntheticDataset generate_dataset(const taxonomy::DynamicLabelTree& taxonomy,
                                  const SynthConfig& config);

/// Groups the records of `store` by fine_class_id using the class manifest.
DatasetIndex index_store(const FeatureStore& store, std::vector<std::string> fine_classes);

/// Adds Gaussian noise of the given scale seeded by (sample_id, jitter_tag).
/// Scale 0 returns the input unchanged.
FeatureMap jitter(const FeatureMap& feature, std::uint64_t sample_id, std::uint32_t jitter_tag,
                  double scale);

// ---- DHFS binary format ---------------------------------------------------
//
// Little-endian. Header: magic "DHFS", version u32 = 1, record_count u64,
// d u32, H u32, W u32 (28 bytes). Each record: sample_id u64,
// fine_class_id u32, split_tag u32, then d*H*W f32 in channel-major order.

inline constexpr std::size_t kFeatureHeaderBytes = 28;
inline constexpr std::size_t kFeatureRecordHeaderBytes = 16;

std::size_t feature_file_size(std::uint64_t record_count, std::uint32_t d, std::uint32_t H,
                              std::uint32_t W);

std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store);
FeatureStore decode_feature_store(std::span<const std::uint8_t> bytes);

void write_feature_file(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore read_feature_file(const std::filesystem::path& path);

}  // namespace halo::features
