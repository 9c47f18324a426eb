#include <gtest/gtest.h>

#include "halo/errors.hpp"
#include "halo/evalkit.hpp"
#include "halo/taxonomy.hpp"

using namespace halo;
using namespace halo::eval;

namespace {

taxonomy::DynamicLabelTree small_tree() {
  return taxonomy::parse_taxonomy(
      "<root>\tanimal\t0\n<root>\tplant\t0\n"
      "animal\tmammal\t1\nanimal\tbird\t1\nplant\ttree\t1\n"
      "mammal\tcat\t2\nmammal\tdog\t2\nbird\towl\t2\ntree\toak\t2\n");
}

// Each test item predicts a fixed fine class; coarser levels predict the truth.
struct Confusion {
  taxonomy::DynamicLabelTree tree = small_tree();
  EvalContext ctx;
  std::vector<TestItem> test;
  std::vector<std::string> predicted;
  Confusion() {
    ctx.truth = &tree;
    ctx.live = &tree;
    ctx.level_classes = {{"animal", "plant"}, {"mammal", "bird", "tree"}, {"cat", "dog", "owl", "oak"}};
  }
  void add(const std::string& truth, const std::string& pred) {
    test.push_back({test.size(), truth});
    predicted.push_back(pred);
  }
  PredictFn fn() const {
    return [this](std::size_t ref) {
      std::vector<num::Vec> out;
      const auto path = tree.ancestor_path(test[ref].fine_class);
      for (int h = 0; h < 3; ++h) {
        const auto& ids = ctx.level_classes[static_cast<std::size_t>(h)];
        const std::string want = h == 2 ? predicted[ref] : path.at(h);
        num::Vec p(ids.size(), 0.0);
        for (std::size_t i = 0; i < ids.size(); ++i) p[i] = ids[i] == want ? 1.0 : 0.0;
        out.push_back(p);
      }
      return out;
    };
  }
};

CheckpointRecord rec(std::size_t pos, double mean_acc, std::optional<double> fine, double ms, bool none) {
  CheckpointRecord r;
  r.stream_position = pos;
  r.level_accuracy[0] = mean_acc;
  r.fine_accuracy = fine;
  r.mistake_severity = ms;
  r.no_mistakes = none;
  return r;
}

}  // namespace

TEST(EvalKit, AucFixtures) {
  EXPECT_DOUBLE_EQ(auc({{0, 1}, {1, 0.5}}), 0.75);
  EXPECT_DOUBLE_EQ(auc({{0, 0}, {1, 1}, {2, 0}}), 0.5);
  EXPECT_DOUBLE_EQ(auc({{5, 0.3}}), 0.3);
  EXPECT_THROW(auc({}), DomainError);
  EXPECT_THROW(auc({{1, 0}, {1, 1}}), DomainError);
}

TEST(EvalKit, ArgmaxTiesGoLow) {
  EXPECT_EQ(argmax({0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax({1.0}), 0u);
}

TEST(EvalKit, HandEnumeratedSeverity) {
  Confusion c;
  c.add("cat", "cat");  // correct
  c.add("dog", "cat");  // sibling: 1
  c.add("cat", "owl");  // same level-0: 2
  c.add("owl", "oak");  // different level-0: 3
  const auto r = evaluate_checkpoint(c.fn(), c.test, c.ctx, {"cat", "dog", "owl"}, 10);
  EXPECT_DOUBLE_EQ(r.mistake_severity, 2.0);
  EXPECT_FALSE(r.no_mistakes);
  EXPECT_DOUBLE_EQ(*r.fine_accuracy, 0.25);
  EXPECT_DOUBLE_EQ(r.level_accuracy.at(0), 1.0);
  EXPECT_EQ(r.eligible, 4u);
  EXPECT_DOUBLE_EQ(summarize({r}).ms, 2.0);
}

TEST(EvalKit, UnseenClassesAreSkipped) {
  Confusion c;
  c.add("cat", "cat");
  c.add("oak", "cat");
  const auto r = evaluate_checkpoint(c.fn(), c.test, c.ctx, {"cat"}, 0);
  EXPECT_EQ(r.eligible, 1u);
  EXPECT_TRUE(r.no_mistakes);
  EXPECT_THROW(evaluate_checkpoint(c.fn(), c.test, c.ctx, {}, 0), DomainError);
}

TEST(EvalKit, LevelsWithoutRowsAreNotScored) {
  Confusion c;
  c.ctx.level_classes[1] = {"bird"};
  c.add("cat", "cat");
  const auto r = evaluate_checkpoint(c.fn(), c.test, c.ctx, {"cat"}, 0);
  EXPECT_FALSE(r.level_accuracy.count(1));
  EXPECT_DOUBLE_EQ(r.mean_accuracy(), 1.0);
}

TEST(EvalKit, SummarizeCurves) {
  const auto s = summarize({rec(0, 1.0, 0.0, 0.0, true), rec(1, 0.5, 1.0, 2.0, false), rec(2, 0.5, std::nullopt, 4.0, false)});
  EXPECT_DOUBLE_EQ(s.aauc, (0.75 + 0.5) / 2.0);
  EXPECT_DOUBLE_EQ(s.fauc, (0.5 + 0.5) / 2.0);
  EXPECT_TRUE(s.ms_defined);
  EXPECT_DOUBLE_EQ(s.ms, 3.0);
  EXPECT_DOUBLE_EQ(s.ffacc, 0.0);
  EXPECT_DOUBLE_EQ(s.faacc, 0.5);
  EXPECT_FALSE(summarize({rec(0, 1.0, 1.0, 0.0, true)}).ms_defined);
}

TEST(EvalKit, SpearmanWithTies) {
  EXPECT_DOUBLE_EQ(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman({1, 2, 3}, {3, 2, 1}), -1.0);
  EXPECT_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
  EXPECT_NEAR(*spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
}
