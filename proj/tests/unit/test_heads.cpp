#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "halo/errors.hpp"
#include "halo/heads.hpp"
#include "halo/taxonomy.hpp"
#include "halo_oracles.hpp"

using namespace halo;
using namespace halo::heads;

namespace {

taxonomy::DynamicLabelTree small_tree() {
  return taxonomy::parse_taxonomy(
      "<root>\tanimal\t0\n<root>\tplant\t0\n"
      "animal\tmammal\t1\nanimal\tbird\t1\nplant\ttree\t1\n"
      "mammal\tcat\t2\nmammal\tdog\t2\nbird\towl\t2\ntree\toak\t2\n");
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  }
  return m;
}

}  // namespace

TEST(Heads, ClassIndexIsAppendOnly) {
  ClassIndex idx;
  EXPECT_EQ(idx.add("a"), 0u);
  EXPECT_EQ(idx.add("b"), 1u);
  EXPECT_THROW(idx.add("a"), TaxonomyError);
  EXPECT_EQ(idx.at("b"), 1u);
  EXPECT_FALSE(idx.find("z").has_value());
}

TEST(Heads, CompleteLabelWalksAncestors) {
  const auto t = small_tree();
  const auto full = complete_label(t, {"cat", 2});
  EXPECT_EQ(full.classes, (std::map<int, std::string>{{0, "animal"}, {1, "mammal"}, {2, "cat"}}));
  const auto coarse = complete_label(t, {"bird", 1});
  EXPECT_TRUE(coarse.defined(0));
  EXPECT_FALSE(coarse.defined(2));
  auto loose = t;
  loose.register_class("newt", 2);
  EXPECT_EQ(complete_label(loose, {"newt", 2}).classes.size(), 1u);
}

TEST(Heads, LinearExpansionKeepsRows) {
  LinearHeadBank bank(3);
  bank.expand(1, {"x", "y"});
  EXPECT_EQ(bank.num_levels(), 2);
  bank.weights(1).value(0, 2) = 0.5;
  bank.expand(1, {"z"});
  EXPECT_EQ(bank.weights(1).value.rows(), 3u);
  EXPECT_EQ(bank.weights(1).value(0, 2), 0.5);
  EXPECT_EQ(bank.weights(1).value(2, 0), 0.0);
}

TEST(Heads, MultiCeNeedsADefinedLevel) {
  LinearHeadBank bank(2);
  bank.expand(0, {"a"});
  std::vector<double> f{1.0, 2.0}, df(2, 0.0);
  CompletedLabel empty;
  EXPECT_THROW(multi_ce_stream_loss(bank, f, empty, df), DomainError);
}

TEST(Heads, MultiCeSumsLevels) {
  LinearHeadBank bank(2);
  bank.expand(0, {"animal", "plant"});
  bank.expand(1, {"mammal", "bird", "tree"});
  std::vector<double> f{1.0, -1.0}, df(2, 0.0);
  const auto label = complete_label(small_tree(), {"mammal", 1});
  // Zero weights: each level contributes log(C).
  EXPECT_NEAR(multi_ce_stream_loss(bank, f, label, df), std::log(2.0) + std::log(3.0), 1e-12);
}

TEST(Heads, AggregateUpMatchesGroupBy) {
  const auto t = small_tree();
  const std::vector<std::string> children{"cat", "dog", "owl", "oak"};
  const std::vector<std::string> parents{"mammal", "bird", "tree"};
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(aggregate_up(t, children, p, parents), oracle::group_by_parent(t, children, p, parents));
  const auto up = aggregate_up(t, children, p, parents);
  EXPECT_NEAR(up[0], 0.3, 1e-15);
  EXPECT_THROW(aggregate_up(t, children, p, {"mammal", "bird"}), TaxonomyError);
}

TEST(Heads, RlsMatchesRidgeAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_LE(oracle::rls_versus_ridge(seed, 50, 8, 4, 16).relative_error, 1e-9);
  }
}

TEST(Heads, RlsWithLateClassMatchesRidge) {
  // A class added mid-stream has implicit zero targets for earlier batches.
  Rng rng(8);
  const int d = 6;
  AnalyticHead head(d, 0.5);
  head.expand({"a", "b"});
  Eigen::MatrixXd all_phi(d, 0), all_y(3, 0);
  for (int batch = 0; batch < 20; ++batch) {
    if (batch == 10) head.expand({"c"});
    const int C = batch < 10 ? 2 : 3;
    const auto phi = random_matrix(d, 8, rng);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(C, 8);
    for (int j = 0; j < 8; ++j) y(static_cast<Eigen::Index>(uniform_index(rng, C)), j) = 1.0;
    rls_update(head, phi, y);
    Eigen::MatrixXd y3 = Eigen::MatrixXd::Zero(3, 8);
    y3.topRows(C) = y;
    all_phi.conservativeResize(d, all_phi.cols() + 8);
    all_phi.rightCols(8) = phi;
    all_y.conservativeResize(3, all_y.cols() + 8);
    all_y.rightCols(8) = y3;
  }
  const auto ridge = oracle::ridge_closed_form(all_phi, all_y, 0.5);
  EXPECT_LE((head.W() - ridge).norm() / ridge.norm(), 1e-9);
}

TEST(Heads, EmptyBatchIsNoOp) {
  AnalyticHead head(4, 1.0);
  head.expand({"a"});
  const auto R = head.R();
  rls_update(head, Eigen::MatrixXd(4, 0), Eigen::MatrixXd(1, 0));
  EXPECT_EQ(head.R(), R);
  EXPECT_THROW(rls_update(head, Eigen::MatrixXd::Ones(3, 2), Eigen::MatrixXd::Ones(1, 2)), ShapeError);
}

TEST(Heads, BankUpdatesOnlyDefinedLevels) {
  AnalyticHeadBank bank(3, 1.0);
  bank.expand(0, {"animal", "plant"});
  bank.expand(1, {"mammal", "bird", "tree"});
  const auto t = small_tree();
  bank.update({Eigen::VectorXd::Ones(3)}, {complete_label(t, {"animal", 0})});
  EXPECT_GT(bank.head(0).W().norm(), 0.0);
  EXPECT_EQ(bank.head(1).W().norm(), 0.0);
}

TEST(Heads, BinaryRoundTrip) {
  AnalyticHeadBank bank(3, 0.7);
  bank.expand(0, {"animal", "plant"});
  bank.expand(1, {"mammal"});
  const auto t = small_tree();
  bank.update({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(-1, 0, 1)},
              {complete_label(t, {"mammal", 1}), complete_label(t, {"plant", 0})});
  const auto bytes = encode_heads(bank);
  const auto back = decode_heads(bytes);
  ASSERT_EQ(back.num_levels(), 2);
  for (int h = 0; h < 2; ++h) {
    EXPECT_EQ(back.head(h).W(), bank.head(h).W());
    EXPECT_EQ(back.head(h).R(), bank.head(h).R());
    EXPECT_EQ(back.head(h).classes().ids(), bank.head(h).classes().ids());
  }
  auto broken = bytes;
  broken.resize(broken.size() - 3);
  EXPECT_THROW(decode_heads(broken), FormatError);
}

TEST(Heads, ReplayConsistencyGradient) {
  const auto t = small_tree();
  Rng rng(4);
  LinearHeadBank bank(4);
  bank.expand(0, {"animal", "plant"});
  bank.expand(1, {"mammal", "bird", "tree"});
  bank.expand(2, {"cat", "dog", "owl", "oak"});
  bank.for_each_slot([&](num::GradSlot& s) {
    for (auto& x : s.value.flat()) x = 0.5 * standard_normal(rng);
  });
  std::vector<double> f{0.3, -0.2, 0.9, 0.1};
  const auto label = complete_label(t, {"dog", 2});
  std::vector<double> df(4, 0.0);
  bank.zero_grad();
  replay_consistency_loss(bank, t, f, label, df);
  const auto loss = [&] {
    std::vector<double> scratch(4, 0.0);
    LinearHeadBank copy = bank;
    return replay_consistency_loss(copy, t, f, label, scratch);
  };
  EXPECT_LE(oracle::central_difference_error(loss, f, df), 1e-5);
  const std::vector<double> gw(bank.weights(1).grad.flat().begin(), bank.weights(1).grad.flat().end());
  EXPECT_LE(oracle::central_difference_error(loss, bank.weights(1).value.flat(), gw), 1e-5);
}
