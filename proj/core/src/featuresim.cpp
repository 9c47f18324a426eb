#include "halo/featuresim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "halo/errors.hpp"
#include "halo/rng.hpp"

namespace halo::features {

namespace {

constexpr char kMagic[4] = {'D', 'H', 'F', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("feature file truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> path_levels_check(const taxonomy::DynamicLabelTree& tree,
                                           const std::vector<std::string>& leaves) {
  std::vector<std::size_t> levels;
  for (const auto& leaf : leaves) levels.push_back(static_cast<std::size_t>(tree.node(leaf).level));
  return levels;
}

}  // namespace

std::vector<double> node_mean(std::string_view node_id, std::uint32_t d, std::uint64_t seed) {
  Rng rng(mix_seed(seed, node_id));
  std::vector<double> mu(d);
  double n2 = 0.0;
  for (auto& v : mu) {
    v = standard_normal(rng);
    n2 += v * v;
  }
  const double n = std::sqrt(n2);
  for (auto& v : mu) v /= n;
  return mu;
}

std::vector<double> level_weights(int fine_level) {
  std::vector<double> w(static_cast<std::size_t>(fine_level) + 1);
  double total = 0.0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    w[l] = std::ldexp(1.0, -static_cast<int>(l));
    total += w[l];
  }
  for (auto& v : w) v /= total;
  return w;
}

SyntheticDataset generate_dataset(const taxonomy::DynamicLabelTree& tree, const SynthConfig& config) {
  if (config.d == 0 || config.H == 0 || config.W == 0) {
    throw DomainError("synthetic feature dimensions must be positive");
  }
  if (config.samples_per_class == 0) throw DomainError("samples_per_class must be positive");
  if (config.test_fraction < 0.0 || config.test_fraction >= 1.0) {
    throw DomainError("test_fraction must lie in [0, 1)");
  }
  const auto fine = taxonomy::fine_class_manifest(tree);
  if (fine.empty()) throw DomainError("taxonomy has no anchored leaves");
  const auto levels = path_levels_check(tree, fine);
  if (std::adjacent_find(levels.begin(), levels.end(), std::not_equal_to<>()) != levels.end()) {
    throw DomainError("taxonomy leaves are at unequal depths; pad it first");
  }
  for (const auto& leaf : fine) {
    if (!tree.rooted(leaf)) throw DomainError("leaf '" + leaf + "' is not connected to the root");
  }
  const int fine_level = static_cast<int>(levels.front());
  if (config.sigma_per_level.size() < static_cast<std::size_t>(fine_level) + 1) {
    throw DomainError("sigma_per_level needs one entry per taxonomy level");
  }
  for (double s : config.sigma_per_level) {
    if (!(s > 0.0)) throw DomainError("sigma_per_level entries must be positive");
  }

  const auto weights = level_weights(fine_level);
  const std::size_t patches = static_cast<std::size_t>(config.H) * config.W;

  SyntheticDataset out;
  out.store.d = config.d;
  out.store.H = config.H;
  out.store.W = config.W;
  std::uint64_t next_id = 0;
  for (std::size_t cls = 0; cls < fine.size(); ++cls) {
    const auto path = tree.ancestor_path(fine[cls]);
    // Signal (noise-free) component shared by every patch, plus the combined
    // noise scale sqrt(sum_l (w_l sigma_l)^2) of the per-level perturbations.
    std::vector<double> signal(config.d, 0.0);
    double noise_var = 0.0;
    for (const auto& [level, id] : path) {
      const auto mu = node_mean(tree.node(id).canonical, config.d, config.seed);
      const double w = weights[static_cast<std::size_t>(level)];
      for (std::size_t c = 0; c < config.d; ++c) signal[c] += w * mu[c];
      const double s = w * config.sigma_per_level[static_cast<std::size_t>(level)];
      noise_var += s * s;
    }
    const double noise = std::sqrt(noise_var);

    Rng rng(mix_seed(config.seed ^ 0x73616d706c65ULL, fine[cls]));
    const auto n_test = static_cast<std::uint32_t>(
        std::llround(config.test_fraction * static_cast<double>(config.samples_per_class)));
    std::vector<std::uint32_t> order(config.samples_per_class);
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_test(config.samples_per_class, false);
    for (std::uint32_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    for (std::uint32_t s = 0; s < config.samples_per_class; ++s) {
      FeatureRecord rec;
      rec.sample_id = next_id++;
      rec.fine_class_id = static_cast<std::uint32_t>(cls);
      rec.split = is_test[s] ? Split::kTest : Split::kTrain;
      rec.map = FeatureMap(config.d, config.H, config.W);
      for (std::size_t c = 0; c < config.d; ++c) {
        for (std::size_t p = 0; p < patches; ++p) {
          rec.map.at(c, p) = static_cast<float>(signal[c] + noise * standard_normal(rng));
        }
      }
      out.store.records.push_back(std::move(rec));
    }
  }
  out.index = index_store(out.store, fine);
  return out;
}

DatasetIndex index_store(const FeatureStore& store, std::vector<std::string> fine_classes) {
  DatasetIndex index;
  index.fine_classes = std::move(fine_classes);
  index.train.resize(index.fine_classes.size());
  index.test.resize(index.fine_classes.size());
  for (std::size_t i = 0; i < store.records.size(); ++i) {
    const auto& r = store.records[i];
    if (r.fine_class_id >= index.fine_classes.size()) {
      throw FormatError("feature record " + std::to_string(r.sample_id) +
                        " has fine_class_id outside the class manifest");
    }
    (r.split == Split::kTest ? index.test : index.train)[r.fine_class_id].push_back(i);
  }
  return index;
}

FeatureMap jitter(const FeatureMap& feature, std::uint64_t sample_id, std::uint32_t jitter_tag,
                  double scale) {
  if (scale < 0.0) throw DomainError("jitter scale must be nonnegative");
  if (scale == 0.0) return feature;
  Rng rng(splitmix64(sample_id ^ (static_cast<std::uint64_t>(jitter_tag) << 40)));
  FeatureMap out = feature;
  for (auto& v : out.values) v = static_cast<float>(v + scale * standard_normal(rng));
  return out;
}

std::size_t feature_file_size(std::uint64_t record_count, std::uint32_t d, std::uint32_t H,
                              std::uint32_t W) {
  const std::size_t per = kFeatureRecordHeaderBytes + 4ULL * d * H * W;
  return kFeatureHeaderBytes + record_count * per;
}

std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store) {
  if (store.records.empty()) throw DomainError("refusing to write an empty feature store");
  std::vector<std::uint8_t> out;
  out.reserve(feature_file_size(store.records.size(), store.d, store.H, store.W));
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u64(out, store.records.size());
  put_u32(out, store.d);
  put_u32(out, store.H);
  put_u32(out, store.W);
  const std::size_t values = static_cast<std::size_t>(store.d) * store.H * store.W;
  for (const auto& r : store.records) {
    if (r.map.values.size() != values || r.map.d != store.d || r.map.H != store.H ||
        r.map.W != store.W) {
      throw ShapeError("feature record " + std::to_string(r.sample_id) + " has the wrong shape");
    }
    put_u64(out, r.sample_id);
    put_u32(out, r.fine_class_id);
    put_u32(out, static_cast<std::uint32_t>(r.split));
    for (float v : r.map.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

FeatureStore decode_feature_store(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFeatureHeaderBytes) throw FormatError("feature file truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("feature file magic mismatch");
  Reader in(bytes.subspan(4));
  const std::uint32_t version = in.u32();
  if (version != kVersion) throw FormatError("unsupported feature file version " + std::to_string(version));
  FeatureStore store;
  const std::uint64_t count = in.u64();
  store.d = in.u32();
  store.H = in.u32();
  store.W = in.u32();
  if (store.d == 0 || store.H == 0 || store.W == 0) throw FormatError("feature file has a zero dimension");
  // Validate sizes before touching the payload.
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t dh = static_cast<std::uint64_t>(store.d) * store.H;
  if (dh > kMax / store.W || dh * store.W > (kMax - kFeatureRecordHeaderBytes) / 4) {
    throw FormatError("feature file dimension overflow");
  }
  const std::uint64_t values = dh * store.W;
  const std::uint64_t per = kFeatureRecordHeaderBytes + 4 * values;
  if (count > (kMax - kFeatureHeaderBytes) / per) throw FormatError("feature file dimension overflow");
  const std::uint64_t payload = count * per;
  if (in.remaining() < payload) throw FormatError("feature file truncated payload");
  if (in.remaining() > payload) throw FormatError("feature file has trailing bytes");

  store.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.sample_id = in.u64();
    r.fine_class_id = in.u32();
    const std::uint32_t split = in.u32();
    if (split > 1) throw FormatError("feature record has invalid split tag");
    r.split = static_cast<Split>(split);
    r.map = FeatureMap(store.d, store.H, store.W);
    for (auto& v : r.map.values) {
      v = in.f32();
      if (!std::isfinite(v)) throw FormatError("feature record holds a non-finite value");
    }
    store.records.push_back(std::move(r));
  }
  return store;
}

void write_feature_file(const FeatureStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_feature_store(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write feature file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing feature file " + path.string());
}

FeatureStore read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_store(bytes);
}

}  // namespace halo::features
