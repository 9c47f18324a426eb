// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 6-9 run the default synthetic benchmark over five seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "halo/config.hpp"
#include "halo/evalkit.hpp"
#include "halo/heads.hpp"
#include "halo/predla.hpp"
#include "halo/replaybuf.hpp"
#include "halo/runner.hpp"
#include "halo/taxonomy.hpp"
#include "halo_oracles.hpp"

using namespace halo;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<eval::MetricSummary> summaries(ExperimentConfig c, std::vector<runner::RunResult>* keep = nullptr) {
  std::vector<eval::MetricSummary> out;
  for (int s = 0; s < kSeeds; ++s) {
    c.seed = static_cast<std::uint64_t>(s);
    auto r = runner::run_in_memory(c);
    out.push_back(r.summary);
    if (keep) keep->push_back(std::move(r));
  }
  return out;
}

double mean_of(const std::vector<eval::MetricSummary>& v, double eval::MetricSummary::*field) {
  double s = 0.0;
  for (const auto& x : v) s += x.*field;
  return s / static_cast<double>(v.size());
}

std::string deltas(const std::vector<eval::MetricSummary>& a, const std::vector<eval::MetricSummary>& b,
                   double eval::MetricSummary::*field) {
  std::string out = "[";
  for (std::size_t i = 0; i < a.size(); ++i) out += (i ? " " : "") + fmt("%+.4f", a[i].*field - b[i].*field);
  return out + "]";
}

void criterion_rls() {
  const auto r = oracle::rls_versus_ridge(1, 200, 16, 5, 32);
  report(1, "RLS-ridge equivalence", r.relative_error <= 1e-6 && r.seconds < 1.0,
         "rel_err=" + fmt("%.3e", r.relative_error) + " time=" + fmt("%.3fs", r.seconds));
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = oracle::gradient_suite(20);
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  std::string detail;
  for (const auto& c : checks) {
    ok = ok && c.passed();
    detail += c.name + "=" + fmt("%.1e", c.worst) + (c.passed() ? "" : "(!)") + " ";
  }
  report(2, "gradient verification (20 seeds)", ok, detail + "time=" + fmt("%.2fs", secs));
}

void criterion_trees() {
  const auto r = oracle::tree_suite(100, 200, 1);
  report(3, "LCA severity oracle", r.passed(),
         std::to_string(r.trees) + " trees, " + std::to_string(r.pairs) + " pairs, severity mismatches " +
             std::to_string(r.severity_mismatches) + ", ancestor mismatches " +
             std::to_string(r.ancestor_mismatches) + ", padding violations " + std::to_string(r.padding_violations));
}

void criterion_metrics() {
  const double a2 = eval::auc({{0, 1}, {1, 0.5}});
  const double a3 = eval::auc({{0, 0}, {1, 1}, {2, 0}});

  const auto tree = taxonomy::parse_taxonomy(
      "<root>\tanimal\t0\n<root>\tplant\t0\n"
      "animal\tmammal\t1\nanimal\tbird\t1\nplant\ttree\t1\n"
      "mammal\tcat\t2\nmammal\tdog\t2\nbird\towl\t2\ntree\toak\t2\n");
  eval::EvalContext ctx;
  ctx.truth = &tree;
  ctx.live = &tree;
  ctx.level_classes = {{"animal", "plant"}, {"mammal", "bird", "tree"}, {"cat", "dog", "owl", "oak"}};
  // (truth, predicted fine class): severities 0, 1, 2, 3 -> mean over mistakes 2.
  const std::vector<std::pair<std::string, std::string>> confusion{
      {"cat", "cat"}, {"dog", "cat"}, {"cat", "owl"}, {"owl", "oak"}};
  std::vector<eval::TestItem> test;
  for (std::size_t i = 0; i < confusion.size(); ++i) test.push_back({i, confusion[i].first});
  const eval::PredictFn predict = [&](std::size_t ref) {
    std::vector<num::Vec> out;
    for (const auto& ids : ctx.level_classes) {
      num::Vec p(ids.size(), 0.0);
      for (std::size_t i = 0; i < ids.size(); ++i) p[i] = ids[i] == confusion[ref].second ? 1.0 : 0.0;
      if (std::all_of(p.begin(), p.end(), [](double x) { return x == 0.0; })) p[0] = 1.0;
      out.push_back(p);
    }
    return out;
  };
  const auto rec = eval::evaluate_checkpoint(predict, test, ctx, {"cat", "dog", "owl"}, 0);
  const double ms = eval::summarize({rec}).ms;
  report(4, "metric fixtures", a2 == 0.75 && a3 == 0.5 && ms == 2.0,
         "auc2=" + fmt("%.17g", a2) + " auc3=" + fmt("%.17g", a3) + " ms=" + fmt("%.17g", ms));
}

void criterion_determinism() {
  ExperimentConfig c;
  c.seed = 7;
  c.validate();
  const auto root = fs::temp_directory_path() / "halo_acceptance_determinism";
  fs::remove_all(root);
  double worst = 0.0;
  std::vector<fs::path> dirs;
  for (const char* sub : {"a", "b"}) {
    const auto t0 = std::chrono::steady_clock::now();
    dirs.push_back(runner::run_experiment(c, root / sub));
    worst = std::max(worst, seconds_since(t0));
  }
  const bool same = slurp(dirs[0] / "metrics.csv") == slurp(dirs[1] / "metrics.csv") &&
                    slurp(dirs[0] / "summary.json") == slurp(dirs[1] / "summary.json") &&
                    !slurp(dirs[0] / "metrics.csv").empty();
  fs::remove_all(root);
  report(5, "determinism", same && worst < 120.0,
         std::string(same ? "byte-identical" : "outputs differ") + ", slowest run " + fmt("%.2fs", worst));
}

void criterion_ablation(const std::vector<eval::MetricSummary>& lin, const std::vector<eval::MetricSummary>& ana,
                        const std::vector<eval::MetricSummary>& pla, const std::vector<eval::MetricSummary>& hpr) {
  using S = eval::MetricSummary;
  const double m_lin = mean_of(lin, &S::aauc), m_ana = mean_of(ana, &S::aauc), m_pla = mean_of(pla, &S::aauc);
  const double f_pla = mean_of(pla, &S::ffacc), f_hpr = mean_of(hpr, &S::ffacc);
  const bool ok = m_pla - m_lin >= 0.0 && m_pla - m_ana >= 0.0 && f_hpr - f_pla >= 0.0;
  report(6, "ablation trend", ok,
         "AAUC linear " + fmt("%.4f", m_lin) + " analytic " + fmt("%.4f", m_ana) + " predla " + fmt("%.4f", m_pla) +
             "; predla-linear " + fmt("%+.4f", m_pla - m_lin) + " " + deltas(pla, lin, &S::aauc) +
             "; predla-analytic " + fmt("%+.5f", m_pla - m_ana) + " " + deltas(pla, ana, &S::aauc) +
             "; FFAcc hpr-predla " + fmt("%+.5f", f_hpr - f_pla) + " " + deltas(hpr, pla, &S::ffacc));
}

double mean_final_alignment(const std::vector<runner::RunResult>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.alignment.back().value_or(0.0);
  return s / static_cast<double>(runs.size());
}

void criterion_alignment(const std::vector<runner::RunResult>& with_hpr) {
  ExperimentConfig c;
  c.lambda = 0.0;
  std::vector<runner::RunResult> without;
  summaries(c, &without);
  const double a = mean_final_alignment(with_hpr), b = mean_final_alignment(without);
  report(7, "prototype alignment trend", a - b >= 0.1,
         "lambda=0.1 " + fmt("%.4f", a) + " lambda=0 " + fmt("%.4f", b) + " diff " + fmt("%+.4f", a - b));
}

void criterion_robustness(const std::vector<eval::MetricSummary>& clean) {
  using S = eval::MetricSummary;
  ExperimentConfig noisy, vacant;
  noisy.noise_rate = 0.4;
  vacant.vacancy_rate = 0.4;
  const double base = mean_of(clean, &S::aauc);
  const double dn = base - mean_of(summaries(noisy), &S::aauc);
  const double dv = base - mean_of(summaries(vacant), &S::aauc);
  report(8, "robustness ordering", dn >= dv,
         "clean " + fmt("%.4f", base) + " noise drop " + fmt("%.4f", dn) + " vacancy drop " + fmt("%.4f", dv));
}

void criterion_delay(const std::vector<eval::MetricSummary>& delay1) {
  using S = eval::MetricSummary;
  std::vector<double> ms{mean_of(delay1, &S::ms)};
  for (std::int64_t d : {10, 50}) {
    ExperimentConfig c;
    c.oracle_delay = d;
    ms.push_back(mean_of(summaries(c), &S::ms));
  }
  const bool ok = ms[0] <= ms[1] && ms[1] <= ms[2];
  report(9, "delay ordering", ok,
         "MS delay1 " + fmt("%.4f", ms[0]) + " delay10 " + fmt("%.4f", ms[1]) + " delay50 " + fmt("%.4f", ms[2]));
}

// Mean over levels of |H(p_lin) - H(p_acil)| for fixed logits.
double mean_abs_gap(const std::vector<std::vector<num::Vec>>& zl, const std::vector<std::vector<num::Vec>>& za,
                    const predla::PredLAState& state, double delta) {
  double s = 0.0;
  for (std::size_t h = 0; h < zl.size(); ++h) {
    s += std::abs(predla::entropy_gap(zl[h], za[h], state.level(static_cast<int>(h)), delta).gap);
  }
  return s / static_cast<double>(zl.size());
}

void criterion_entropy_gap() {
  ExperimentConfig c;
  c.variant = Variant::kPredLA;
  const auto env = runner::build_environment(c);
  runner::Trainer trainer(c, env);
  trainer.run();
  Rng rng(mix_seed(1, "fixed-replay"));
  const auto batch = trainer.buffer().sample_batch(c.memory_batch, rng);
  const auto& model = trainer.model();

  std::vector<std::vector<num::Vec>> zl(static_cast<std::size_t>(model.linear.num_levels()));
  auto za = zl;
  for (const auto& item : batch) {
    const auto x = runner::to_patches(env.store.records[item.feature_ref].map);
    const auto pooled = model.trainable_forward(x).pooled;
    const auto phi = model.frozen_features(x);
    for (int h = 0; h < model.linear.num_levels(); ++h) {
      zl[static_cast<std::size_t>(h)].push_back(model.linear.logits(h, pooled));
      const Eigen::VectorXd z = model.analytic.head(h).logits(phi);
      za[static_cast<std::size_t>(h)].emplace_back(z.data(), z.data() + z.size());
    }
  }

  // The trained temperatures, then a deliberately mismatched start.
  std::string detail;
  bool ok = true;
  for (int scenario = 0; scenario < 2; ++scenario) {
    auto state = model.predla;
    if (scenario == 1) {
      for (int h = 0; h < state.num_levels(); ++h) {
        state.level(h).tau_lin = 4.0;
        state.level(h).tau_acil = 0.25;
      }
    }
    const double before = mean_abs_gap(zl, za, state, c.delta);
    for (int step = 0; step < 200; ++step) {
      for (int h = 0; h < state.num_levels(); ++h) {
        const auto g = predla::entropy_gap(zl[static_cast<std::size_t>(h)], za[static_cast<std::size_t>(h)],
                                           state.level(h), c.delta);
        if (g.loss > 0.0) state.tau_step(h, g.d_tau_lin, g.d_tau_acil);
      }
    }
    const double after = mean_abs_gap(zl, za, state, c.delta);
    ok = ok && after <= before + 1e-6;
    detail += std::string(scenario ? "mismatched start " : "trained state ") + fmt("%.5f", before) + " -> " +
              fmt("%.5f", after) + (scenario ? "" : "; ");
  }
  report(10, "entropy-gap control (200 tau steps)", ok, detail);
}

// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(int n, double p, int k) {
  double term = std::pow(1.0 - p, n), cdf = 0.0;
  for (int i = 0; i < k; ++i) {
    cdf += term;
    term *= static_cast<double>(n - i) / (i + 1) * p / (1.0 - p);
  }
  return 1.0 - cdf;
}

void criterion_reservoir() {
  constexpr std::size_t kCap = 100, kStream = 10000, kRuns = 200, kBucket = 100;
  std::vector<int> kept(kStream, 0);
  for (std::size_t s = 0; s < kRuns; ++s) {
    replay::ReplayBuffer buf(kCap, mix_seed(s, "reservoir"));
    for (std::uint64_t i = 0; i < kStream; ++i) {
      stream::StreamSample x;
      x.sample_id = i;
      buf.offer(x);
    }
    for (const auto& item : buf.items()) ++kept[item.sample_id];
  }
  const double p = static_cast<double>(kCap) / kStream;
  const double sd = std::sqrt(p * (1.0 - p) / kRuns);

  // Per item: each frequency is an independent-looking binomial draw, so a
  // handful of 3-sigma excursions are expected; their count must match chance.
  int violations = 0;
  const int hi = static_cast<int>(std::floor((p + 3.0 * sd) * kRuns));  // largest count inside the band
  const int lo = static_cast<int>(std::ceil((p - 3.0 * sd) * kRuns));
  for (int k : kept) violations += (k > hi || k < lo);
  const double expected = kStream * (binomial_upper_tail(kRuns, p, hi + 1) +
                                     (lo > 0 ? 1.0 - binomial_upper_tail(kRuns, p, lo) : 0.0));
  const bool chance_ok = violations <= expected + 4.0 * std::sqrt(expected) + 1.0;

  // Per bucket of consecutive positions: strict 3-sigma band.
  int bucket_bad = 0;
  const double bucket_sd = sd / std::sqrt(static_cast<double>(kBucket));
  for (std::size_t b = 0; b < kStream; b += kBucket) {
    double f = 0.0;
    for (std::size_t i = b; i < b + kBucket; ++i) f += static_cast<double>(kept[i]) / kRuns;
    f /= kBucket;
    bucket_bad += std::abs(f - p) > 3.0 * bucket_sd;
  }
  report(11, "reservoir statistics", chance_ok && bucket_bad == 0,
         "items outside 3 sigma " + std::to_string(violations) + " (chance expectation " + fmt("%.1f", expected) +
             "), buckets of " + std::to_string(kBucket) + " outside 3 sigma " + std::to_string(bucket_bad));
}

}  // namespace

int main() {
  criterion_rls();
  criterion_gradients();
  criterion_trees();
  criterion_metrics();
  criterion_determinism();

  ExperimentConfig base;
  std::vector<runner::RunResult> hpr_runs;
  auto variant = [&](Variant v) {
    auto c = base;
    c.variant = v;
    return c;
  };
  const auto lin = summaries(variant(Variant::kLinearOnly));
  const auto ana = summaries(variant(Variant::kAnalyticOnly));
  const auto pla = summaries(variant(Variant::kPredLA));
  const auto hpr = summaries(variant(Variant::kPredLAHpr), &hpr_runs);
  criterion_ablation(lin, ana, pla, hpr);
  criterion_alignment(hpr_runs);
  criterion_robustness(hpr);
  criterion_delay(hpr);
  criterion_entropy_gap();
  criterion_reservoir();

  std::printf("%s: %d criterion(s) failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
