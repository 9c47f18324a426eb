#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "halo/heads.hpp"
#include "halo/hpr.hpp"
#include "halo/taxonomy.hpp"

using namespace halo;
using namespace halo::hpr;

namespace {

PatchMatrix random_patches(std::size_t P, std::size_t d, Rng& rng) {
  PatchMatrix m(P, d);
  for (auto& x : m.flat()) x = standard_normal(rng);
  return m;
}

double row_norm(const num::Matrix& m, std::size_t r) { return num::norm(m.row(r)); }

}  // namespace

TEST(Hpr, AdapterOutputsInUnitInterval) {
  Adapter a(6, 4, 3);
  Rng rng(1);
  const auto out = a.forward(random_patches(5, 6, rng));
  ASSERT_EQ(out.rows(), 5u);
  ASSERT_EQ(out.cols(), 4u);
  for (double x : out.flat()) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(Hpr, PrototypesFromPatchesAreDistinctUnitRows) {
  PrototypeBank bank(4, 3);
  Rng rng(2), pick(5);
  const auto patches = random_patches(6, 4, rng);
  expand_prototypes(bank, 1, "x", &patches, pick);
  const auto& v = bank.entry(0).vectors.value;
  std::set<std::vector<double>> rows;
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(row_norm(v, j), 1.0, 1e-12);
    rows.insert({v.row(j).begin(), v.row(j).end()});
  }
  EXPECT_EQ(rows.size(), 3u);
  expand_prototypes(bank, 1, "y", nullptr, pick);
  EXPECT_NEAR(row_norm(bank.entry(1).vectors.value, 0), 1.0, 1e-12);
  EXPECT_EQ(bank.level_entries(1), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(bank.find(1, "y"), std::optional<std::size_t>(1));
}

TEST(Hpr, CacheFollowsPeriod) {
  PrototypeBank bank(3, 2);
  Rng rng(1);
  expand_prototypes(bank, 0, "a", nullptr, rng);
  EXPECT_FALSE(bank.has_cache());
  cache_prototypes(bank, 3, 2);
  EXPECT_FALSE(bank.has_cache());
  cache_prototypes(bank, 4, 2);
  ASSERT_TRUE(bank.has_cache());
  EXPECT_EQ(bank.cache_iteration(), 4);
  const auto cached = *bank.cached(0);
  bank.entry(0).vectors.value(0, 0) += 1.0;
  EXPECT_EQ(*bank.cached(0), cached);
  expand_prototypes(bank, 0, "b", nullptr, rng);
  EXPECT_EQ(bank.cached(1), nullptr);
}

TEST(Hpr, LogitsSumOwnScores) {
  PrototypeBank bank(3, 2);
  Rng rng(4);
  expand_prototypes(bank, 0, "a", nullptr, rng);
  expand_prototypes(bank, 0, "b", nullptr, rng);
  const auto M = random_patches(4, 3, rng);
  const auto scores = prototype_scores(M, bank, 0);
  const auto logits = prototype_logits(scores);
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_NEAR(logits[1], scores.score(1, 0) + scores.score(1, 1), 1e-15);
  for (double s : scores.score.flat()) EXPECT_LE(std::abs(s), 1.0 + 1e-12);
}

TEST(Hpr, BankSimilarityPicksMaxPair) {
  num::Matrix a(2, 2), b(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 1.0;
  b(0, 0) = -1.0;
  b(1, 0) = 1.0;
  b(1, 1) = 1.0;
  const auto m = bank_similarity(a, b);
  EXPECT_NEAR(m.value, 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(m.a, 0u);
  EXPECT_EQ(m.b, 1u);
}

TEST(Hpr, ZeroLambdaTouchesNothing) {
  const auto t = taxonomy::make_balanced_taxonomy({2, 2});
  PrototypeBank bank(3, 2);
  Rng init(1);
  for (const auto& id : t.ids()) expand_prototypes(bank, t.node(id).level, id, nullptr, init);
  Rng rng(7), untouched(7);
  RegularizerConfig cfg;
  cfg.lambda = 0.0;
  std::vector<PatchMatrix> Ms{random_patches(4, 3, init)};
  std::vector<PatchMatrix> dMs{PatchMatrix(4, 3)};
  EXPECT_EQ(hpr_regularizer(t, bank, Ms, cfg, rng, &dMs), 0.0);
  EXPECT_EQ(rng(), untouched());
  for (const auto& e : bank.entries()) {
    for (double g : e.vectors.grad.flat()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Hpr, RankingLossIsZeroWhenAncestorsAreClose) {
  const auto t = taxonomy::make_balanced_taxonomy({1, 2});
  PrototypeBank bank(2, 1);
  num::Matrix parent(1, 2), near(1, 2), far(1, 2);
  parent(0, 0) = 1.0;
  near(0, 0) = 1.0;
  far(0, 0) = 0.9;
  far(0, 1) = 0.1;
  bank.add(0, "n0", parent);
  bank.add(1, "n0.0", near);
  bank.add(1, "n0.1", far);
  Rng rng(1);
  EXPECT_GE(ranking_loss(t, bank, 0.1, 32, rng), 0.0);
}

TEST(Hpr, DumpRoundTrip) {
  PrototypeBank bank(3, 2);
  Rng rng(1);
  expand_prototypes(bank, 0, "a", nullptr, rng);
  expand_prototypes(bank, 1, "a.b", nullptr, rng);
  const auto dir = std::filesystem::temp_directory_path();
  write_prototype_dump(bank, dir / "halo_protos.json", dir / "halo_protos.bin");
  const auto back = read_prototype_dump(dir / "halo_protos.json", dir / "halo_protos.bin");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.entry(1).class_id, "a.b");
  EXPECT_EQ(back.entry(1).vectors.value, bank.entry(1).vectors.value);
  std::filesystem::remove(dir / "halo_protos.json");
  std::filesystem::remove(dir / "halo_protos.bin");
}

TEST(Hpr, DistanceMatrixIsSymmetricWithZeroDiagonal) {
  PrototypeBank bank(4, 3);
  Rng rng(3);
  for (const char* id : {"a", "b", "c"}) expand_prototypes(bank, 0, id, nullptr, rng);
  const auto D = prototype_distance_matrix(bank, bank.level_entries(0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(D(i, i), 0.0, 1e-12);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(D(i, j), D(j, i));
  }
  const auto csv = format_distance_csv(bank, 0);
  EXPECT_EQ(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')), 4);
}
