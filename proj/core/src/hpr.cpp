#include "halo/hpr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "byteio.hpp"
#include "halo/errors.hpp"
#include <nlohmann/json.hpp>

namespace halo::hpr {

namespace {

num::Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  num::Matrix m(rows, cols);
  for (auto& v : m.flat()) v = sd * standard_normal(rng);
  return m;
}

void normalize_rows(num::Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = num::norm(row);
    if (!(n > 0.0)) throw DomainError("cannot normalize a zero prototype");
    for (auto& v : row) v /= n;
  }
}

std::vector<double> row_norms(const num::Matrix& m) {
  std::vector<double> n(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    n[r] = num::norm(m.row(r));
    if (!(n[r] > 0.0)) throw DomainError("zero-norm patch or prototype");
  }
  return n;
}

// Cosine between every patch of M and every row of P: patches x J.
num::Matrix cosine_table(const PatchMatrix& M, const std::vector<double>& m_norms, const num::Matrix& P) {
  const auto p_norms = row_norms(P);
  num::Matrix out(M.rows(), P.rows());
  for (std::size_t i = 0; i < M.rows(); ++i) {
    for (std::size_t j = 0; j < P.rows(); ++j) {
      out(i, j) = num::dot(M.row(i), P.row(j)) / (m_norms[i] * p_norms[j]);
    }
  }
  return out;
}

struct MinDistance {
  double value = 0.0;
  std::size_t entry = 0;
  std::size_t proto = 0;
  std::size_t patch = 0;
};

}  // namespace

// ---- adapter ----------------------------------------------------------------

Adapter::Adapter(std::size_t in_dim, std::size_t proto_dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "adapter"));
  first = num::GradSlot(gaussian_matrix(proto_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng));
  first_bias = num::GradSlot(1, proto_dim);
  second = num::GradSlot(gaussian_matrix(proto_dim, proto_dim, 1.0 / std::sqrt(static_cast<double>(proto_dim)), rng));
  second_bias = num::GradSlot(1, proto_dim);
}

PatchMatrix Adapter::forward(const PatchMatrix& x, Cache* cache) const {
  if (x.cols() != in_dim()) throw ShapeError("adapter input channel mismatch");
  const std::size_t dp = proto_dim();
  PatchMatrix hidden(x.rows(), dp);
  PatchMatrix out(x.rows(), dp);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto h = hidden.row(i);
    num::linear(first.value, first_bias.value.row(0), x.row(i), h);
    for (auto& v : h) v = std::max(v, 0.0);
    auto o = out.row(i);
    num::linear(second.value, second_bias.value.row(0), h, o);
    for (auto& v : o) v = num::sigmoid(v);
  }
  if (cache) {
    cache->input = x;
    cache->hidden = hidden;
    cache->output = out;
  }
  return out;
}

void Adapter::backward(const Cache& cache, const PatchMatrix& d_out, PatchMatrix* dx) {
  const std::size_t dp = proto_dim();
  num::Vec d_pre(dp);
  num::Vec d_hidden(dp);
  for (std::size_t i = 0; i < cache.input.rows(); ++i) {
    const auto o = cache.output.row(i);
    const auto g = d_out.row(i);
    for (std::size_t k = 0; k < dp; ++k) d_pre[k] = g[k] * o[k] * (1.0 - o[k]);
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    num::linear_backward(second.value, cache.hidden.row(i), d_pre, &second.grad, second_bias.grad.row(0), d_hidden);
    const auto h = cache.hidden.row(i);
    for (std::size_t k = 0; k < dp; ++k) {
      if (!(h[k] > 0.0)) d_hidden[k] = 0.0;
    }
    num::linear_backward(first.value, cache.input.row(i), d_hidden, &first.grad, first_bias.grad.row(0),
                         dx ? dx->row(i) : std::span<double>{});
  }
}

void Adapter::zero_grad() {
  first.zero_grad();
  first_bias.zero_grad();
  second.zero_grad();
  second_bias.zero_grad();
}

// ---- prototype bank -----------------------------------------------------------

std::optional<std::size_t> PrototypeBank::find(int level, const std::string& class_id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].level == level && entries_[i].class_id == class_id) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> PrototypeBank::level_entries(int level) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].level == level) out.push_back(i);
  }
  return out;
}

std::size_t PrototypeBank::add(int level, const std::string& class_id, num::Matrix vectors) {
  if (find(level, class_id)) {
    throw TaxonomyError("class '" + class_id + "' already has prototypes at level " + std::to_string(level));
  }
  if (vectors.rows() != per_class_ || vectors.cols() != dim_) throw ShapeError("prototype block has the wrong shape");
  entries_.push_back({level, class_id, num::GradSlot(std::move(vectors))});
  return entries_.size() - 1;
}

std::vector<num::Matrix> PrototypeBank::snapshot() const {
  std::vector<num::Matrix> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.vectors.value);
  return out;
}

void PrototypeBank::install_cache(std::vector<num::Matrix> snapshot, std::int64_t iteration) {
  if (snapshot.size() > entries_.size()) throw ShapeError("prototype snapshot has more entries than the bank");
  cache_ = std::move(snapshot);
  cache_iteration_ = iteration;
}

const num::Matrix* PrototypeBank::cached(std::size_t entry) const {
  return entry < cache_.size() ? &cache_[entry] : nullptr;
}

void PrototypeBank::zero_grad() {
  for (auto& e : entries_) e.vectors.zero_grad();
}

void expand_prototypes(PrototypeBank& bank, int level, const std::string& class_id, const PatchMatrix* init_patches,
                       Rng& rng) {
  if (bank.find(level, class_id)) {
    throw TaxonomyError("class '" + class_id + "' already has prototypes at level " + std::to_string(level));
  }
  const std::size_t J = bank.per_class();
  num::Matrix vectors(J, bank.proto_dim());
  if (init_patches && init_patches->rows() > 0) {
    if (init_patches->cols() != bank.proto_dim()) throw ShapeError("prototype init patches have the wrong width");
    std::vector<std::size_t> order(init_patches->rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < J; ++j) {
      const auto src = init_patches->row(order[j % order.size()]);
      std::copy(src.begin(), src.end(), vectors.row(j).begin());
    }
  } else {
    for (auto& v : vectors.flat()) v = standard_normal(rng);
  }
  normalize_rows(vectors);
  bank.add(level, class_id, std::move(vectors));
}

void cache_prototypes(PrototypeBank& bank, std::int64_t iteration, std::int64_t period) {
  if (period <= 0) throw DomainError("cache period must be positive");
  if (iteration % period == 0) bank.install_cache(bank.snapshot(), iteration);
}

// ---- scores and losses ------------------------------------------------------

LevelScores prototype_scores(const PatchMatrix& M, const PrototypeBank& bank, int level) {
  LevelScores out;
  out.entries = bank.level_entries(level);
  if (out.entries.empty()) throw DomainError("no prototypes at level " + std::to_string(level));
  const auto m_norms = row_norms(M);
  const std::size_t J = bank.per_class();
  out.score = num::Matrix(out.entries.size(), J);
  out.argmax.assign(out.entries.size(), std::vector<std::size_t>(J, 0));
  num::Vec column(M.rows());
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    const auto table = cosine_table(M, m_norms, bank.entry(out.entries[e]).vectors.value);
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t i = 0; i < M.rows(); ++i) column[i] = table(i, j);
      const auto best = num::spatial_max(column);
      out.score(e, j) = best.value;
      out.argmax[e][j] = best.index;
    }
  }
  return out;
}

num::Vec prototype_logits(const LevelScores& scores) {
  num::Vec z(scores.score.rows(), 0.0);
  for (std::size_t e = 0; e < z.size(); ++e) {
    for (double s : scores.score.row(e)) z[e] += s;
  }
  return z;
}

double proto_loss(const PatchMatrix& M, PrototypeBank& bank, const heads::CompletedLabel& label,
                  const ProtoLossWeights& weights, PatchMatrix* d_M, double scale) {
  if (label.classes.empty()) throw DomainError("label is undefined at every level");
  const std::size_t J = bank.per_class();
  double total = 0.0;
  for (const auto& [level, class_id] : label.classes) {
    const auto scores = prototype_scores(M, bank, level);
    const auto own = bank.find(level, class_id);
    if (!own) throw TaxonomyError("class '" + class_id + "' has no prototypes");
    const auto target = static_cast<std::size_t>(
        std::find(scores.entries.begin(), scores.entries.end(), *own) - scores.entries.begin());

    // Cross-entropy on the summed-score logits.
    const auto z = prototype_logits(scores);
    const auto ce = num::softmax_ce(z, target);
    total += weights.cross_entropy * ce.loss;
    for (std::size_t e = 0; e < scores.entries.size(); ++e) {
      const double dz = scale * weights.cross_entropy * ce.grad_logits[e];
      if (dz == 0.0) continue;
      auto& slot = bank.entry(scores.entries[e]).vectors;
      for (std::size_t j = 0; j < J; ++j) {
        const std::size_t i = scores.argmax[e][j];
        num::Vec dm(M.cols(), 0.0);
        num::cosine_backward(M.row(i), slot.value.row(j), dz, dm, slot.grad.row(j));
        if (d_M) {
          auto row = d_M->row(i);
          for (std::size_t k = 0; k < dm.size(); ++k) row[k] += dm[k];
        }
      }
    }

    // Cluster (own class) and separation (other classes) distance minima.
    auto nearest = [&](bool own_class) {
      std::optional<MinDistance> best;
      for (std::size_t e : scores.entries) {
        if ((e == *own) != own_class) continue;
        const auto& P = bank.entry(e).vectors.value;
        for (std::size_t j = 0; j < J; ++j) {
          for (std::size_t i = 0; i < M.rows(); ++i) {
            const double d = num::squared_distance(M.row(i), P.row(j));
            if (!best || d < best->value) best = MinDistance{d, e, j, i};
          }
        }
      }
      return best;
    };
    auto route = [&](const MinDistance& m, double coeff) {
      auto& slot = bank.entry(m.entry).vectors;
      const auto mi = M.row(m.patch);
      const auto pj = slot.value.row(m.proto);
      auto gp = slot.grad.row(m.proto);
      for (std::size_t k = 0; k < mi.size(); ++k) {
        const double g = 2.0 * (mi[k] - pj[k]) * coeff;
        gp[k] -= g;
        if (d_M) (*d_M)(m.patch, k) += g;
      }
    };
    if (auto c = nearest(true)) {
      total += weights.cluster * c->value;
      route(*c, scale * weights.cluster);
    }
    if (scores.entries.size() > 1) {
      if (auto s = nearest(false)) {
        total -= weights.separation * s->value;
        route(*s, -scale * weights.separation);
      }
    }
  }
  return total * scale;
}

PairMax bank_similarity(const num::Matrix& a, const num::Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw DomainError("bank_similarity needs nonempty banks");
  PairMax best{-2.0, 0, 0};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double c = num::cosine(a.row(i), b.row(j));
      if (c > best.value) best = {c, i, j};
    }
  }
  return best;
}

double ranking_loss(const taxonomy::DynamicLabelTree& tree, PrototypeBank& bank, double margin,
                    std::size_t max_pairs, Rng& rng, double scale) {
  // Every anchored (ancestor, descendant) pair where both own prototypes.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t d = 0; d < bank.size(); ++d) {
    const auto& de = bank.entry(d);
    if (!tree.contains(de.class_id)) continue;
    for (const auto& [level, ancestor] : tree.ancestor_path(de.class_id)) {
      if (level == de.level) continue;
      if (auto a = bank.find(level, ancestor)) pairs.emplace_back(*a, d);
    }
  }
  if (pairs.empty()) return 0.0;
  const std::size_t take = std::min(max_pairs, pairs.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + uniform_index(rng, pairs.size() - i);
    std::swap(pairs[i], pairs[j]);
  }

  auto push = [&](std::size_t ea, std::size_t eb, const PairMax& pm, double d_out) {
    auto& A = bank.entry(ea).vectors;
    auto& B = bank.entry(eb).vectors;
    num::cosine_backward(A.value.row(pm.a), B.value.row(pm.b), d_out, A.grad.row(pm.a), B.grad.row(pm.b));
  };

  double total = 0.0;
  for (std::size_t p = 0; p < take; ++p) {
    const auto [a, d] = pairs[p];
    const auto& ae = bank.entry(a);
    const auto& de = bank.entry(d);
    std::vector<std::size_t> negatives;
    for (std::size_t n : bank.level_entries(de.level)) {
      if (n == d) continue;
      const auto& id = bank.entry(n).class_id;
      if (tree.contains(id) && tree.is_ancestor(ae.class_id, id)) continue;
      negatives.push_back(n);
    }
    if (negatives.empty()) continue;
    const std::size_t neg = negatives[uniform_index(rng, negatives.size())];
    const auto pos_pair = bank_similarity(ae.vectors.value, de.vectors.value);
    const auto neg_pair = bank_similarity(ae.vectors.value, bank.entry(neg).vectors.value);
    const double hinge = margin - pos_pair.value + neg_pair.value;
    if (hinge <= 0.0) continue;
    total += hinge;
    push(a, d, pos_pair, -scale);
    push(a, neg, neg_pair, scale);
  }
  return total * scale;
}

double saliency_loss(const PatchMatrix& M, PrototypeBank& bank, double topk_fraction, PatchMatrix* d_M,
                     double scale) {
  if (!bank.has_cache()) return 0.0;
  const std::size_t P = M.rows();
  const auto K = static_cast<std::size_t>(
      std::clamp<double>(std::ceil(topk_fraction * static_cast<double>(P) - 1e-9), 1.0, static_cast<double>(P)));
  const auto m_norms = row_norms(M);
  std::vector<std::size_t> order(P);
  double total = 0.0;
  for (std::size_t e = 0; e < bank.size(); ++e) {
    const num::Matrix* old = bank.cached(e);
    if (!old) continue;
    auto& slot = bank.entry(e).vectors;
    if (old->rows() != slot.value.rows()) continue;
    const auto now_table = cosine_table(M, m_norms, slot.value);
    const auto old_table = cosine_table(M, m_norms, *old);
    for (std::size_t j = 0; j < slot.value.rows(); ++j) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K), order.end(),
                        [&](std::size_t x, std::size_t y) {
                          const double a = now_table(x, j);
                          const double b = now_table(y, j);
                          return a > b || (a == b && x < y);
                        });
      for (std::size_t r = 0; r < K; ++r) {
        const std::size_t i = order[r];
        const double delta = now_table(i, j) - old_table(i, j);
        if (delta == 0.0) continue;
        total += delta * delta / static_cast<double>(K);
        const double g = scale * 2.0 * delta / static_cast<double>(K);
        num::Vec dm(M.cols(), 0.0);
        num::Vec unused(M.cols(), 0.0);
        num::cosine_backward(M.row(i), slot.value.row(j), g, dm, slot.grad.row(j));
        num::cosine_backward(M.row(i), old->row(j), -g, dm, unused);
        if (d_M) {
          auto row = d_M->row(i);
          for (std::size_t k = 0; k < dm.size(); ++k) row[k] += dm[k];
        }
      }
    }
  }
  return total * scale;
}

double hpr_regularizer(const taxonomy::DynamicLabelTree& tree, PrototypeBank& bank,
                       const std::vector<PatchMatrix>& Ms, const RegularizerConfig& config, Rng& rng,
                       std::vector<PatchMatrix>* d_Ms) {
  if (config.lambda == 0.0) return 0.0;
  if (d_Ms && d_Ms->size() != Ms.size()) throw ShapeError("hpr_regularizer: gradient buffer count mismatch");
  double total = ranking_loss(tree, bank, config.margin, config.max_pairs, rng, config.lambda);
  if (!Ms.empty()) {
    const double per = config.lambda / static_cast<double>(Ms.size());
    for (std::size_t s = 0; s < Ms.size(); ++s) {
      total += saliency_loss(Ms[s], bank, config.topk_fraction, d_Ms ? &(*d_Ms)[s] : nullptr, per);
    }
  }
  return total;
}

// ---- analysis and dumps -----------------------------------------------------

num::Matrix prototype_distance_matrix(const PrototypeBank& bank, const std::vector<std::size_t>& entries) {
  num::Matrix d(entries.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const double v =
          1.0 - bank_similarity(bank.entry(entries[i]).vectors.value, bank.entry(entries[j]).vectors.value).value;
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::string format_distance_csv(const PrototypeBank& bank, int level) {
  const auto entries = bank.level_entries(level);
  const auto d = prototype_distance_matrix(bank, entries);
  std::string out = "class";
  for (std::size_t e : entries) out += ',' + bank.entry(e).class_id;
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out += bank.entry(entries[i]).class_id;
    for (std::size_t j = 0; j < entries.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", d(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_prototype_dump(const PrototypeBank& bank, const std::filesystem::path& json_path,
                          const std::filesystem::path& bin_path) {
  nlohmann::json index;
  index["proto_dim"] = bank.proto_dim();
  index["per_class"] = bank.per_class();
  index["payload"] = bin_path.filename().string();
  auto& list = index["entries"] = nlohmann::json::array();
  detail::ByteWriter payload;
  std::size_t offset = 0;
  for (const auto& e : bank.entries()) {
    list.push_back({{"level", e.level}, {"class", e.class_id}, {"J", e.vectors.value.rows()}, {"offset", offset}});
    for (double v : e.vectors.value.flat()) payload.f64(v);
    offset += e.vectors.value.size();
  }
  std::ofstream out(json_path);
  if (!out) throw FormatError("cannot write prototype index " + json_path.string());
  out << index.dump(2) << '\n';
  const auto bytes = payload.take();
  detail::write_binary_file(bin_path.string(), bytes, "prototype payload");
}

PrototypeBank read_prototype_dump(const std::filesystem::path& json_path, const std::filesystem::path& bin_path) {
  std::ifstream in(json_path);
  if (!in) throw FormatError("cannot open prototype index " + json_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prototype index: ") + e.what());
  }
  const auto bytes = detail::read_binary_file(bin_path.string(), "prototype payload");
  try {
    const auto dim = index.at("proto_dim").get<std::size_t>();
    const auto J = index.at("per_class").get<std::size_t>();
    PrototypeBank bank(dim, J);
    std::size_t total = 0;
    for (const auto& e : index.at("entries")) {
      if (e.at("J").get<std::size_t>() != J) throw FormatError("prototype index entry has the wrong J");
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset != total) throw FormatError("prototype index offsets are not contiguous");
      total += J * dim;
    }
    if (bytes.size() != total * 8) throw FormatError("prototype payload size does not match the index");
    detail::ByteReader r(bytes, "prototype payload");
    for (const auto& e : index.at("entries")) {
      num::Matrix v(J, dim);
      for (auto& x : v.flat()) x = r.f64();
      bank.add(e.at("level").get<int>(), e.at("class").get<std::string>(), std::move(v));
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prototype index: ") + e.what());
  }
}

}  // namespace halo::hpr
