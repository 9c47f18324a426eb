#include "halo/heads.hpp"

#include <cmath>

#include "byteio.hpp"
#include "halo/errors.hpp"

namespace halo::heads {

std::size_t ClassIndex::add(const std::string& id) {
  if (rows_.count(id)) throw TaxonomyError("class '" + id + "' already has an output row");
  rows_.emplace(id, ids_.size());
  ids_.push_back(id);
  return ids_.size() - 1;
}

std::optional<std::size_t> ClassIndex::find(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

std::size_t ClassIndex::at(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) throw TaxonomyError("class '" + id + "' has no output row");
  return it->second;
}

CompletedLabel complete_label(const taxonomy::DynamicLabelTree& tree, const stream::Annotation& annotation) {
  if (!tree.contains(annotation.class_id)) {
    throw TaxonomyError("annotation class '" + annotation.class_id + "' is not registered");
  }
  return {tree.ancestor_path(annotation.class_id), annotation};
}

// ---- linear heads ---------------------------------------------------------

void LinearHeadBank::expand(int level, const std::vector<std::string>& ids) {
  if (level < 0) throw DomainError("negative head level");
  while (levels_.size() <= static_cast<std::size_t>(level)) {
    Level l;
    l.weights = num::GradSlot(0, dim_);
    levels_.push_back(std::move(l));
  }
  auto& l = levels_[static_cast<std::size_t>(level)];
  for (const auto& id : ids) {
    if (l.classes.find(id)) throw TaxonomyError("class '" + id + "' already present at level " + std::to_string(level));
  }
  for (const auto& id : ids) l.classes.add(id);
  l.weights.append_rows(ids.size(), 0.0);
}

num::Vec LinearHeadBank::logits(int level, std::span<const double> feature) const {
  if (feature.size() != dim_) throw ShapeError("linear head feature dimension mismatch");
  const auto& w = weights(level).value;
  num::Vec z(w.rows());
  num::linear(w, {}, feature, z);
  return z;
}

void LinearHeadBank::backward(int level, std::span<const double> feature, std::span<const double> d_logits,
                              std::span<double> d_feature) {
  auto& slot = weights(level);
  num::linear_backward(slot.value, feature, d_logits, &slot.grad, {}, d_feature);
}

void LinearHeadBank::zero_grad() {
  for (auto& l : levels_) l.weights.zero_grad();
}

double multi_ce_stream_loss(LinearHeadBank& bank, std::span<const double> feature, const CompletedLabel& label,
                            std::span<double> d_feature, double scale) {
  if (label.classes.empty()) throw DomainError("label is undefined at every level");
  double total = 0.0;
  for (const auto& [level, id] : label.classes) {
    if (level >= bank.num_levels()) throw DomainError("label level beyond the head bank");
    const std::size_t target = bank.classes(level).at(id);
    const auto z = bank.logits(level, feature);
    auto ce = num::softmax_ce(z, target);
    total += ce.loss;
    for (auto& g : ce.grad_logits) g *= scale;
    bank.backward(level, feature, ce.grad_logits, d_feature);
  }
  return total * scale;
}

namespace {

// Neumaier-compensated accumulator.
struct Accumulator {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

std::optional<std::size_t> parent_row(const taxonomy::DynamicLabelTree& tree, const std::string& child,
                                      const ClassIndex& parents) {
  if (!tree.contains(child)) return std::nullopt;
  const auto& parent = tree.node(child).parent;
  if (!parent || *parent == taxonomy::kRootId) return std::nullopt;
  return parents.find(*parent);
}

}  // namespace

num::Vec aggregate_up(const taxonomy::DynamicLabelTree& tree, const std::vector<std::string>& child_ids,
                      std::span<const double> p_child, const std::vector<std::string>& parent_ids) {
  if (child_ids.size() != p_child.size()) throw ShapeError("aggregate_up: child ids and probabilities differ in size");
  ClassIndex parents;
  for (const auto& id : parent_ids) parents.add(id);
  std::vector<Accumulator> acc(parent_ids.size());
  for (std::size_t k = 0; k < child_ids.size(); ++k) {
    const auto row = parent_row(tree, child_ids[k], parents);
    if (!row) {
      if (p_child[k] != 0.0) {
        throw TaxonomyError("class '" + child_ids[k] + "' carries probability mass but has no parent");
      }
      continue;
    }
    acc[*row].add(p_child[k]);
  }
  num::Vec out(parent_ids.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = acc[c].value();
  return out;
}

double replay_consistency_loss(LinearHeadBank& bank, const taxonomy::DynamicLabelTree& tree,
                               std::span<const double> feature, const CompletedLabel& label,
                               std::span<double> d_feature, double scale) {
  const int levels = bank.num_levels();
  std::vector<num::Vec> probs(static_cast<std::size_t>(levels));
  std::vector<num::Vec> d_probs(static_cast<std::size_t>(levels));
  std::vector<num::Vec> d_logits(static_cast<std::size_t>(levels));
  double total = 0.0;
  for (int h = 0; h < levels; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    if (bank.classes(h).empty()) continue;
    const auto z = bank.logits(h, feature);
    d_logits[hs].assign(z.size(), 0.0);
    d_probs[hs].assign(z.size(), 0.0);
    auto it = label.classes.find(h);
    if (it != label.classes.end()) {
      auto ce = num::softmax_ce(z, bank.classes(h).at(it->second));
      total += ce.loss;
      for (std::size_t c = 0; c < z.size(); ++c) d_logits[hs][c] += scale * ce.grad_logits[c];
      probs[hs] = std::move(ce.probs);
    } else {
      probs[hs] = num::softmax(z);
    }
  }

  for (int h = 0; h + 1 < levels; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    if (probs[hs].empty() || probs[hs + 1].empty()) continue;
    const auto& children = bank.classes(h + 1).ids();
    const auto& p_child = probs[hs + 1];
    std::vector<std::optional<std::size_t>> rows(children.size());
    num::Vec agg(probs[hs].size(), 0.0);
    double mass = 0.0;
    for (std::size_t k = 0; k < children.size(); ++k) {
      rows[k] = parent_row(tree, children[k], bank.classes(h));
      if (rows[k]) {
        agg[*rows[k]] += p_child[k];
        mass += p_child[k];
      }
    }
    if (!(mass > 0.0)) continue;
    for (auto& v : agg) v /= mass;
    total += 0.5 * num::js_divergence(probs[hs], agg);
    num::Vec d_agg(agg.size(), 0.0);
    num::js_divergence_backward(probs[hs], agg, 0.5 * scale, d_probs[hs], d_agg);
    double centre = 0.0;
    for (std::size_t c = 0; c < agg.size(); ++c) centre += d_agg[c] * agg[c];
    for (std::size_t k = 0; k < children.size(); ++k) {
      if (rows[k]) d_probs[hs + 1][k] += (d_agg[*rows[k]] - centre) / mass;
    }
  }

  for (int h = 0; h < levels; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    if (probs[hs].empty()) continue;
    num::softmax_backward(probs[hs], d_probs[hs], 1.0, d_logits[hs]);
    bank.backward(h, feature, d_logits[hs], d_feature);
  }
  return total * scale;
}

// ---- analytic heads -------------------------------------------------------

AnalyticHead::AnalyticHead(std::size_t feature_dim, double gamma)
    : W_(Eigen::MatrixXd::Zero(0, static_cast<Eigen::Index>(feature_dim))),
      R_(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(feature_dim),
                                   static_cast<Eigen::Index>(feature_dim)) /
         gamma),
      gamma_(gamma) {
  if (!(gamma > 0.0)) throw DomainError("ridge coefficient must be positive");
}

void AnalyticHead::expand(const std::vector<std::string>& ids) {
  for (const auto& id : ids) {
    if (classes_.find(id)) throw TaxonomyError("class '" + id + "' already present in analytic head");
  }
  for (const auto& id : ids) classes_.add(id);
  const Eigen::Index old = W_.rows();
  W_.conservativeResize(old + static_cast<Eigen::Index>(ids.size()), Eigen::NoChange);
  W_.bottomRows(static_cast<Eigen::Index>(ids.size())).setZero();
}

void rls_update(AnalyticHead& head, const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y) {
  if (Phi.cols() == 0) return;
  if (Phi.rows() != head.R_.rows()) throw ShapeError("rls_update: feature dimension mismatch");
  if (Y.rows() != head.W_.rows() || Y.cols() != Phi.cols()) throw ShapeError("rls_update: target shape mismatch");
  const Eigen::MatrixXd RPhi = head.R_ * Phi;
  Eigen::MatrixXd S = Phi.transpose() * RPhi;
  S.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw DomainError("rls_update: I + Phi^T R Phi is numerically singular");
  }
  // Kt = (I + Phi^T R Phi)^-1 Phi^T R, the transposed gain.
  const Eigen::MatrixXd Kt = llt.solve(RPhi.transpose());
  head.W_ += (Y - head.W_ * Phi) * Kt;
  head.R_ -= RPhi * Kt;
  head.R_ = 0.5 * (head.R_ + head.R_.transpose()).eval();
}

AnalyticHead restore_head(ClassIndex classes, Eigen::MatrixXd W, Eigen::MatrixXd R, double gamma) {
  if (R.rows() != R.cols() || W.cols() != R.rows() || W.rows() != static_cast<Eigen::Index>(classes.size())) {
    throw ShapeError("restore_head: inconsistent shapes");
  }
  AnalyticHead h;
  h.classes_ = std::move(classes);
  h.W_ = std::move(W);
  h.R_ = std::move(R);
  h.gamma_ = gamma;
  return h;
}

void AnalyticHeadBank::expand(int level, const std::vector<std::string>& ids) {
  if (level < 0) throw DomainError("negative head level");
  while (levels_.size() <= static_cast<std::size_t>(level)) levels_.emplace_back(dim_, gamma_);
  levels_[static_cast<std::size_t>(level)].expand(ids);
}

void AnalyticHeadBank::push_level(AnalyticHead head) {
  if (levels_.empty()) {
    dim_ = head.feature_dim();
    gamma_ = head.gamma();
  } else if (head.feature_dim() != dim_) {
    throw ShapeError("analytic head feature dimension mismatch");
  }
  levels_.push_back(std::move(head));
}

void AnalyticHeadBank::update(const std::vector<Eigen::VectorXd>& phis, const std::vector<CompletedLabel>& labels) {
  if (phis.size() != labels.size()) throw ShapeError("analytic update: feature and label counts differ");
  for (int h = 0; h < num_levels(); ++h) {
    auto& head = levels_[static_cast<std::size_t>(h)];
    if (head.classes().empty()) continue;
    std::vector<std::pair<std::size_t, std::size_t>> cols;  // (item, class row)
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto it = labels[i].classes.find(h);
      if (it != labels[i].classes.end()) cols.emplace_back(i, head.classes().at(it->second));
    }
    if (cols.empty()) continue;
    const auto b = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd Phi(static_cast<Eigen::Index>(dim_), b);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(head.classes().size()), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      Phi.col(j) = phis[cols[static_cast<std::size_t>(j)].first];
      Y(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(j)].second), j) = 1.0;
    }
    rls_update(head, Phi, Y);
  }
}

// ---- checkpoint I/O -------------------------------------------------------

namespace {
constexpr char kHeadMagic[5] = "DHHD";
constexpr std::uint32_t kHeadVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_heads(const AnalyticHeadBank& bank) {
  detail::ByteWriter out;
  out.raw(kHeadMagic, 4);
  out.u32(kHeadVersion);
  out.u32(static_cast<std::uint32_t>(bank.num_levels()));
  for (int h = 0; h < bank.num_levels(); ++h) {
    const auto& head = bank.head(h);
    out.u32(static_cast<std::uint32_t>(head.classes().size()));
    for (const auto& id : head.classes().ids()) out.str(id);
    out.u32(static_cast<std::uint32_t>(head.feature_dim()));
    out.f64(head.gamma());
    for (Eigen::Index r = 0; r < head.W().rows(); ++r)
      for (Eigen::Index c = 0; c < head.W().cols(); ++c) out.f64(head.W()(r, c));
    for (Eigen::Index r = 0; r < head.R().rows(); ++r)
      for (Eigen::Index c = 0; c < head.R().cols(); ++c) out.f64(head.R()(r, c));
  }
  return out.take();
}

AnalyticHeadBank decode_heads(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes, "head checkpoint");
  in.expect_magic(kHeadMagic);
  const std::uint32_t version = in.u32();
  if (version != kHeadVersion) throw FormatError("unsupported head checkpoint version " + std::to_string(version));
  const std::uint32_t levels = in.u32();
  AnalyticHeadBank bank;
  for (std::uint32_t h = 0; h < levels; ++h) {
    const std::uint32_t count = in.u32();
    ClassIndex classes;
    for (std::uint32_t i = 0; i < count; ++i) classes.add(in.str());
    const std::uint32_t d0 = in.u32();
    const double gamma = in.f64();
    if (!(gamma > 0.0)) throw FormatError("head checkpoint has a nonpositive ridge coefficient");
    in.need((static_cast<std::size_t>(count) * d0 + static_cast<std::size_t>(d0) * d0) * 8);
    Eigen::MatrixXd W(count, d0);
    Eigen::MatrixXd R(d0, d0);
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = in.f64();
    for (Eigen::Index r = 0; r < R.rows(); ++r)
      for (Eigen::Index c = 0; c < R.cols(); ++c) R(r, c) = in.f64();
    bank.push_level(restore_head(std::move(classes), std::move(W), std::move(R), gamma));
  }
  in.expect_end();
  return bank;
}

void write_heads(const AnalyticHeadBank& bank, const std::filesystem::path& path) {
  detail::write_binary_file(path.string(), encode_heads(bank), "head checkpoint");
}

AnalyticHeadBank read_heads(const std::filesystem::path& path) {
  return decode_heads(detail::read_binary_file(path.string(), "head checkpoint"));
}

}  // namespace halo::heads
