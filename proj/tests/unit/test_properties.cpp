// Randomized properties checked against the independent reference code.

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "halo/heads.hpp"
#include "halo/replaybuf.hpp"
#include "halo/taxonomy.hpp"
#include "halo_oracles.hpp"

using namespace halo;

TEST(Properties, EveryGradientPassesOnFewSeeds) {
  for (const auto& check : oracle::gradient_suite(3)) {
    EXPECT_TRUE(check.passed()) << check.name << " worst " << check.worst << " > " << check.tolerance;
  }
}

TEST(Properties, TreeQueriesMatchBruteForce) {
  const auto r = oracle::tree_suite(20, 120, 77);
  EXPECT_EQ(r.severity_mismatches, 0u);
  EXPECT_EQ(r.ancestor_mismatches, 0u);
  EXPECT_EQ(r.padding_violations, 0u);
  EXPECT_GT(r.pairs, 0u);
}

TEST(Properties, SeverityIsBoundedAndZeroOnlyOnDiagonal) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = oracle::random_tree(rng, 80);
    for (const auto& a : t.ids()) {
      for (const auto& b : t.ids()) {
        const int s = t.lca_severity(a, b);
        EXPECT_GE(s, 0);
        EXPECT_LE(s, t.depth());
        if (t.rooted(a) && t.rooted(b)) {
          EXPECT_EQ(s == 0, a == b) << a << " " << b;
        }
      }
    }
  }
}

TEST(Properties, RlsKeepsRSymmetricPositiveDefinite) {
  Rng rng(3);
  heads::AnalyticHead head(10, 0.3);
  head.expand({"a", "b", "c"});
  for (int batch = 0; batch < 100; ++batch) {
    Eigen::MatrixXd phi(10, 8), y = Eigen::MatrixXd::Zero(3, 8);
    for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = standard_normal(rng);
    for (int j = 0; j < 8; ++j) y(static_cast<Eigen::Index>(uniform_index(rng, 3)), j) = 1.0;
    heads::rls_update(head, phi, y);
  }
  EXPECT_EQ(head.R(), head.R().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(head.R());
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Properties, RlsIsOrderIndependentUpToRoundoff) {
  // Ridge depends only on the data, so two batch orders must agree.
  EXPECT_LE(oracle::rls_versus_ridge(21, 40, 12, 6, 8).relative_error, 1e-9);
  EXPECT_LE(oracle::rls_versus_ridge(22, 40, 12, 6, 8).relative_error, 1e-9);
}

TEST(Properties, ReservoirIsUniformOverPositions) {
  const std::size_t cap = 10, n = 100, seeds = 1000;
  std::vector<double> kept(n, 0.0);
  for (std::size_t s = 0; s < seeds; ++s) {
    replay::ReplayBuffer buf(cap, s);
    for (std::uint64_t i = 0; i < n; ++i) {
      stream::StreamSample x;
      x.sample_id = i;
      buf.offer(x);
    }
    for (const auto& item : buf.items()) kept[item.sample_id] += 1.0;
  }
  const double p = static_cast<double>(cap) / n;
  const double sd = std::sqrt(p * (1 - p) / seeds);
  // Early and late halves get the same share.
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) early += kept[i] / seeds;
  for (std::size_t i = n / 2; i < n; ++i) late += kept[i] / seeds;
  EXPECT_NEAR(early, late, 8.0 * sd * std::sqrt(n / 2.0));
  for (double k : kept) EXPECT_NEAR(k / seeds, p, 5.0 * sd);
}
