#include <gtest/gtest.h>

#include <set>

#include "halo/errors.hpp"
#include "halo/replaybuf.hpp"

using namespace halo;
using namespace halo::replay;

namespace {

stream::StreamSample sample(std::uint64_t i) {
  stream::StreamSample s;
  s.sample_id = i;
  s.feature_ref = i;
  s.true_fine_class = "c" + std::to_string(i % 7);
  s.annotation = {"c" + std::to_string(i % 7), 2};
  s.arrival_index = i;
  return s;
}

}  // namespace

TEST(ReplayBuffer, FillsThenStaysAtCapacity) {
  ReplayBuffer buf(10, 1);
  for (std::uint64_t i = 0; i < 10; ++i) EXPECT_TRUE(buf.offer(sample(i)));
  EXPECT_EQ(buf.size(), 10u);
  for (std::uint64_t i = 10; i < 500; ++i) buf.offer(sample(i));
  EXPECT_EQ(buf.size(), 10u);
  EXPECT_EQ(buf.seen_count(), 500u);
  std::set<std::uint64_t> ids;
  for (const auto& item : buf.items()) ids.insert(item.sample_id);
  EXPECT_EQ(ids.size(), 10u);
}

TEST(ReplayBuffer, KeepsOriginalAnnotation) {
  ReplayBuffer buf(3, 1);
  buf.offer(sample(4));
  EXPECT_EQ(buf.items()[0].annotation, (stream::Annotation{"c4", 2}));
  EXPECT_EQ(buf.items()[0].true_fine_class, "c4");
}

TEST(ReplayBuffer, DeterministicForSeed) {
  ReplayBuffer a(5, 9), b(5, 9), c(5, 10);
  for (std::uint64_t i = 0; i < 200; ++i) {
    a.offer(sample(i));
    b.offer(sample(i));
    c.offer(sample(i));
  }
  EXPECT_EQ(a.items(), b.items());
  EXPECT_NE(a.items(), c.items());
}

TEST(ReplayBuffer, SampleBatchSizes) {
  ReplayBuffer buf(50, 1);
  Rng rng(1);
  EXPECT_THROW(buf.sample_batch(4, rng), DomainError);
  for (std::uint64_t i = 0; i < 3; ++i) buf.offer(sample(i));
  EXPECT_EQ(buf.sample_batch(8, rng).size(), 8u);
  for (std::uint64_t i = 3; i < 40; ++i) buf.offer(sample(i));
  const auto batch = buf.sample_batch(16, rng);
  std::set<std::uint64_t> ids;
  for (const auto& item : batch) ids.insert(item.sample_id);
  EXPECT_EQ(ids.size(), 16u);
}

TEST(ReplayBuffer, LateOffersAcceptedAtReservoirRate) {
  // Acceptance probability of offer t is capacity / t.
  const std::size_t cap = 20, trials = 400;
  std::size_t accepted = 0;
  for (std::size_t seed = 0; seed < trials; ++seed) {
    ReplayBuffer buf(cap, seed);
    for (std::uint64_t i = 0; i < 99; ++i) buf.offer(sample(i));
    accepted += buf.offer(sample(99));
  }
  const double p = 20.0 / 100.0, n = static_cast<double>(trials);
  EXPECT_NEAR(static_cast<double>(accepted) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(ReplayBuffer, CsvDump) {
  ReplayBuffer buf(2, 1);
  buf.offer(sample(1));
  const auto csv = buf.dump_csv();
  EXPECT_EQ(csv.rfind("slot,sample_id,true_fine,annot_class,annot_level,insertion_index\n", 0), 0u);
  EXPECT_NE(csv.find("0,1,c1,c1,2,"), std::string::npos);
}
