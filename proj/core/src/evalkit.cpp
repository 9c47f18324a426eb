#include "halo/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "halo/errors.hpp"

namespace halo::eval {

double CheckpointRecord::mean_accuracy() const {
  if (level_accuracy.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [level, acc] : level_accuracy) s += acc;
  return s / static_cast<double>(level_accuracy.size());
}

std::size_t argmax(const num::Vec& values) {
  if (values.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

CheckpointRecord evaluate_checkpoint(const PredictFn& predict, const std::vector<TestItem>& test,
                                     const EvalContext& context, const std::vector<std::string>& seen,
                                     std::size_t stream_position) {
  const auto& truth = *context.truth;
  const auto& live = *context.live;
  const std::unordered_set<std::string> seen_set(seen.begin(), seen.end());
  const int levels = static_cast<int>(context.level_classes.size());
  const int fine_level = truth.max_level();

  std::vector<std::unordered_map<std::string, std::size_t>> rows(static_cast<std::size_t>(levels));
  for (int h = 0; h < levels; ++h) {
    const auto& ids = context.level_classes[static_cast<std::size_t>(h)];
    for (std::size_t r = 0; r < ids.size(); ++r) rows[static_cast<std::size_t>(h)].emplace(ids[r], r);
  }

  std::vector<std::size_t> hits(static_cast<std::size_t>(levels), 0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(levels), 0);
  double severity_sum = 0.0;
  std::size_t mistakes = 0;
  CheckpointRecord rec;
  rec.stream_position = stream_position;
  rec.tree_version = live.version();

  for (const auto& item : test) {
    if (!seen_set.count(item.fine_class)) continue;
    ++rec.eligible;
    const auto path = truth.ancestor_path(item.fine_class);
    const auto probs = predict(item.feature_ref);
    for (int h = 0; h < levels; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      auto t = path.find(h);
      if (t == path.end() || !rows[hs].count(t->second) || probs.size() <= hs || probs[hs].empty()) continue;
      ++counts[hs];
      const std::size_t pred = argmax(probs[hs]);
      const auto& pred_id = context.level_classes[hs][pred];
      if (pred_id == t->second) {
        ++hits[hs];
      } else if (h == fine_level) {
        ++mistakes;
        severity_sum += live.lca_severity(pred_id, t->second);
      }
    }
  }
  if (rec.eligible == 0) throw DomainError("no eligible test samples for this checkpoint");
  for (int h = 0; h < levels; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    if (counts[hs] > 0) {
      rec.level_accuracy[h] = static_cast<double>(hits[hs]) / static_cast<double>(counts[hs]);
    }
  }
  if (auto it = rec.level_accuracy.find(fine_level); it != rec.level_accuracy.end()) rec.fine_accuracy = it->second;
  rec.no_mistakes = mistakes == 0;
  rec.mistake_severity = mistakes ? severity_sum / static_cast<double>(mistakes) : 0.0;
  return rec;
}

double auc(const std::vector<std::pair<double, double>>& curve) {
  if (curve.empty()) throw DomainError("auc of an empty curve");
  if (curve.size() == 1) return curve.front().second;
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double dx = curve[i].first - curve[i - 1].first;
    if (!(dx > 0.0)) throw DomainError("auc positions must strictly increase");
    area += 0.5 * dx * (curve[i].second + curve[i - 1].second);
  }
  return area / (curve.back().first - curve.front().first);
}

MetricSummary summarize(const std::vector<CheckpointRecord>& records) {
  if (records.empty()) throw DomainError("summarize needs at least one checkpoint");
  std::vector<std::pair<double, double>> mean_curve, fine_curve, severity_curve;
  for (const auto& r : records) {
    const auto x = static_cast<double>(r.stream_position);
    mean_curve.emplace_back(x, r.mean_accuracy());
    fine_curve.emplace_back(x, r.fine_accuracy.value_or(0.0));
    if (!r.no_mistakes) severity_curve.emplace_back(x, r.mistake_severity);
  }
  MetricSummary s;
  s.aauc = auc(mean_curve);
  s.fauc = auc(fine_curve);
  s.ms_defined = !severity_curve.empty();
  s.ms = s.ms_defined ? auc(severity_curve) : 0.0;
  s.ffacc = records.back().fine_accuracy.value_or(0.0);
  s.faacc = records.back().mean_accuracy();
  return s;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: size mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> prototype_alignment(const hpr::PrototypeBank& bank, const taxonomy::DynamicLabelTree& truth,
                                          int level) {
  std::vector<std::size_t> entries;
  for (std::size_t e : bank.level_entries(level)) {
    if (truth.contains(bank.entry(e).class_id)) entries.push_back(e);
  }
  if (entries.size() < 3) return std::nullopt;
  const auto d = hpr::prototype_distance_matrix(bank, entries);
  const double depth = std::max(1, truth.depth());
  std::vector<double> proto, lca;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      proto.push_back(d(i, j));
      lca.push_back(truth.lca_severity(bank.entry(entries[i]).class_id, bank.entry(entries[j]).class_id) / depth);
    }
  }
  return spearman(proto, lca);
}

}  // namespace halo::eval
