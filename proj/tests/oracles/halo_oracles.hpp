#pragma once

// Independent reference implementations used by the test suites and by
// `halo verify`. Nothing here reuses the code path it checks.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "halo/rng.hpp"
#include "halo/taxonomy.hpp"

namespace halo::oracle {

/// One-shot ridge solution W (C x d0) minimising ||Y - W Phi||^2 + gamma ||W||^2,
/// solved as an augmented least-squares problem with column-pivoting QR.
Eigen::MatrixXd ridge_closed_form(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y, double gamma);

struct RlsComparison {
  double relative_error = 0.0;
  double seconds = 0.0;
};
/// Streams `batches` random mini-batches through the recursive head and
/// compares against the closed form over all data.
RlsComparison rls_versus_ridge(std::uint64_t seed, int batches = 200, int d0 = 16, int classes = 5,
                               int batch_size = 32);

/// Random tree: up to `max_nodes` nodes over 1..5 levels, a few nodes left
/// unanchored, some attached straight to the root.
taxonomy::DynamicLabelTree random_tree(Rng& rng, std::size_t max_nodes, double unanchored_rate = 0.05);

/// Brute-force view built only from the tree's edge list and levels.
class BruteTree {
 public:
  explicit BruteTree(const taxonomy::DynamicLabelTree& tree);
  /// Every node on the parent chain of `id`, including itself, in order.
  std::vector<std::string> chain(const std::string& id) const;
  bool reaches_root(const std::string& id) const;
  int severity(const std::string& predicted, const std::string& truth) const;
  std::map<int, std::string> ancestors(const std::string& id) const;

 private:
  std::map<std::string, std::string> parent_;
  std::map<std::string, int> level_;
  int depth_ = 0;
};

/// Upward aggregation by explicit group-by on parent ids.
std::vector<double> group_by_parent(const taxonomy::DynamicLabelTree& tree, const std::vector<std::string>& child_ids,
                                    const std::vector<double>& p_child, const std::vector<std::string>& parent_ids);

/// Five-point central differences of `loss` in each entry of `params`,
/// compared with `analytic`. Returns the worst |a - n| / max(|a|, |n|, floor).
double central_difference_error(const std::function<double()>& loss, std::span<double> params,
                                std::span<const double> analytic, double epsilon = 1e-4, double floor = 1e-6);

struct CheckResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst <= tolerance; }
};

/// One check per differentiable operation, worst error over `seeds` seeds.
std::vector<CheckResult> gradient_suite(int seeds = 20);

struct TreeSuiteResult {
  std::size_t trees = 0;
  std::size_t pairs = 0;
  std::size_t severity_mismatches = 0;
  std::size_t ancestor_mismatches = 0;
  std::size_t padding_violations = 0;
  bool passed() const { return severity_mismatches == 0 && ancestor_mismatches == 0 && padding_violations == 0; }
};
TreeSuiteResult tree_suite(std::size_t trees = 100, std::size_t max_nodes = 200, std::uint64_t seed = 1);

/// Runs the RLS, gradient and tree suites, printing one line per check.
bool run_verify(std::ostream& out, int gradient_seeds = 20);

}  // namespace halo::oracle
