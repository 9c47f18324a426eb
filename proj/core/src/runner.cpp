#include "halo/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "halo/errors.hpp"
#include <nlohmann/json.hpp>

namespace halo::runner {

namespace {

num::Matrix gaussian(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  num::Matrix m(rows, cols);
  for (auto& v : m.flat()) v = sd * standard_normal(rng);
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

std::string opt_number(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

// ---- environment ------------------------------------------------------------

Environment build_environment(const ExperimentConfig& config) {
  config.validate();
  Environment env;
  auto tree = config.taxonomy_path.empty() ? taxonomy::make_balanced_taxonomy(config.branching)
                                           : taxonomy::read_taxonomy_file(config.taxonomy_path);
  env.truth = taxonomy::pad_uniform_depth(tree);
  const auto fine = taxonomy::fine_class_manifest(env.truth);
  if (fine.empty()) throw ConfigError("taxonomy has no anchored leaf classes");

  if (config.feature_path.empty()) {
    features::SynthConfig synth;
    synth.d = config.feature_dim;
    synth.H = config.feature_height;
    synth.W = config.feature_width;
    synth.samples_per_class = config.samples_per_class;
    synth.test_fraction = config.test_fraction;
    synth.seed = mix_seed(config.seed, "features");
    // Short sigma lists repeat their last entry for deeper levels.
    synth.sigma_per_level = config.sigma_per_level;
    if (synth.sigma_per_level.empty()) throw ConfigError("features.sigma must list at least one value");
    while (synth.sigma_per_level.size() < static_cast<std::size_t>(env.truth.num_levels())) {
      synth.sigma_per_level.push_back(synth.sigma_per_level.back());
    }
    auto data = features::generate_dataset(env.truth, synth);
    env.store = std::move(data.store);
    env.index = std::move(data.index);
  } else {
    env.store = features::read_feature_file(config.feature_path);
    env.index = features::index_store(env.store, fine);
  }

  if (config.num_groups > fine.size()) {
    throw ConfigError("stream.num_groups exceeds the number of fine classes (" + std::to_string(fine.size()) + ")");
  }
  const auto partition_seed = mix_seed(config.seed, "groups");
  env.groups = config.split_mode == stream::SplitMode::kFine
                   ? stream::partition_classes(fine, config.num_groups, partition_seed)
                   : stream::partition_by_ancestor(env.truth, fine, std::min(1, env.truth.max_level()),
                                                   config.num_groups, partition_seed);
  stream::StreamConfig sc;
  sc.num_groups = config.num_groups;
  sc.overlap_fraction = config.overlap_fraction;
  sc.granularity_weights = config.granularity_weights;
  sc.duplication_factor = config.duplication_factor;
  sc.split_mode = config.split_mode;
  sc.seed = mix_seed(config.seed, "stream");
  env.stream = stream::build_stream(env.groups, env.index, env.store, env.truth, sc);
  env.events = stream::schedule_hierarchy_events(env.stream);
  for (std::size_t c = 0; c < env.index.fine_classes.size(); ++c) {
    for (std::size_t ref : env.index.test[c]) env.test.push_back({ref, env.index.fine_classes[c]});
  }
  return env;
}

hpr::PatchMatrix to_patches(const features::FeatureMap& map) {
  hpr::PatchMatrix x(map.patches(), map.d);
  for (std::size_t c = 0; c < map.d; ++c) {
    for (std::size_t p = 0; p < map.patches(); ++p) x(p, c) = map.at(c, p);
  }
  return x;
}

// ---- model --------------------------------------------------------------------

Model::Model(const ExperimentConfig& config, std::size_t feature_dim)
    : linear(feature_dim),
      analytic(feature_dim, config.gamma),
      adapter(feature_dim, config.proto_dim, mix_seed(config.seed, "adapter")),
      prototypes(config.proto_dim, config.prototypes_per_class),
      predla(predla::PredLAConfig{config.alpha_lr, config.tau_lr, config.delta, config.tau_min, 1.0}),
      config_(config) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  Rng rng(mix_seed(config.seed, "trainable"));
  f_first = num::GradSlot(gaussian(feature_dim, feature_dim, sd, rng));
  f_first_bias = num::GradSlot(1, feature_dim);
  f_second = num::GradSlot(gaussian(feature_dim, feature_dim, sd, rng));
  f_second_bias = num::GradSlot(1, feature_dim);
  Rng frozen(mix_seed(config.seed, "frozen"));
  projection = gaussian(feature_dim, feature_dim, sd, frozen);
  optimizer_.kind = config.optimizer;
  optimizer_.learning_rate = config.learning_rate;
  optimizer_.weight_decay = config.weight_decay;
  hpr_optimizer_ = optimizer_;
  hpr_optimizer_.learning_rate = config.hpr_learning_rate;
}

Model::TrainableCache Model::trainable_forward(const hpr::PatchMatrix& x) const {
  const std::size_t d = f_first.value.cols();
  if (x.cols() != d) throw ShapeError("feature channel count does not match the model");
  TrainableCache c;
  c.input = x;
  c.hidden = hpr::PatchMatrix(x.rows(), d);
  c.output = hpr::PatchMatrix(x.rows(), d);
  c.pooled.assign(d, 0.0);
  num::Vec tmp(d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto h = c.hidden.row(i);
    num::linear(f_first.value, f_first_bias.value.row(0), x.row(i), h);
    for (auto& v : h) v = std::max(v, 0.0);
    num::linear(f_second.value, f_second_bias.value.row(0), h, tmp);
    auto y = c.output.row(i);
    const auto xi = x.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      y[k] = xi[k] + tmp[k];
      c.pooled[k] += y[k];
    }
  }
  for (auto& v : c.pooled) v /= static_cast<double>(x.rows());
  return c;
}

void Model::trainable_backward(const TrainableCache& cache, const hpr::PatchMatrix& d_output) {
  const std::size_t d = f_first.value.cols();
  num::Vec dh(d);
  for (std::size_t i = 0; i < cache.input.rows(); ++i) {
    std::fill(dh.begin(), dh.end(), 0.0);
    num::linear_backward(f_second.value, cache.hidden.row(i), d_output.row(i), &f_second.grad,
                         f_second_bias.grad.row(0), dh);
    const auto h = cache.hidden.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      if (!(h[k] > 0.0)) dh[k] = 0.0;
    }
    num::linear_backward(f_first.value, cache.input.row(i), dh, &f_first.grad, f_first_bias.grad.row(0), {});
  }
}

Eigen::VectorXd Model::frozen_features(const hpr::PatchMatrix& x) const {
  num::Vec pooled(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += r[k];
  }
  for (auto& v : pooled) v /= static_cast<double>(x.rows());
  Eigen::VectorXd phi(static_cast<Eigen::Index>(projection.rows()));
  num::linear(projection, {}, pooled, std::span<double>(phi.data(), static_cast<std::size_t>(phi.size())));
  return phi;
}

void Model::expand_class(int level, const std::string& id, const hpr::PatchMatrix* init_patches, Rng& rng) {
  linear.expand(level, {id});
  analytic.expand(level, {id});
  predla.ensure_levels(linear.num_levels());
  if (hpr_enabled()) hpr::expand_prototypes(prototypes, level, id, init_patches, rng);
}

std::vector<num::Vec> Model::predict(const hpr::PatchMatrix& x, const Eigen::VectorXd& phi) const {
  std::vector<num::Vec> out(static_cast<std::size_t>(linear.num_levels()));
  const bool need_linear = config_.variant != Variant::kAnalyticOnly;
  const bool need_analytic = config_.variant != Variant::kLinearOnly;
  num::Vec pooled;
  if (need_linear) pooled = trainable_forward(x).pooled;
  for (int h = 0; h < linear.num_levels(); ++h) {
    if (linear.classes(h).empty()) continue;
    num::Vec z_lin, z_acil;
    if (need_linear) z_lin = linear.logits(h, pooled);
    if (need_analytic) {
      const Eigen::VectorXd z = analytic.head(h).logits(phi);
      z_acil.assign(z.data(), z.data() + z.size());
    }
    auto& p = out[static_cast<std::size_t>(h)];
    switch (config_.variant) {
      case Variant::kLinearOnly: p = num::softmax(z_lin); break;
      case Variant::kAnalyticOnly: p = num::softmax(z_acil); break;
      default: p = predla::predict(z_lin, z_acil, predla.level(h), config_.tau_min); break;
    }
  }
  return out;
}

void Model::zero_grad() {
  f_first.zero_grad();
  f_first_bias.zero_grad();
  f_second.zero_grad();
  f_second_bias.zero_grad();
  linear.zero_grad();
  adapter.zero_grad();
  prototypes.zero_grad();
}

void Model::step(bool with_hpr) {
  for (auto* slot : {&f_first, &f_first_bias, &f_second, &f_second_bias}) optimizer_.step(*slot);
  linear.for_each_slot([&](num::GradSlot& s) { optimizer_.step(s); });
  if (with_hpr) {
    for (auto* slot : {&adapter.first, &adapter.first_bias, &adapter.second, &adapter.second_bias}) {
      hpr_optimizer_.step(*slot);
    }
    prototypes.for_each_slot([&](num::GradSlot& s) { hpr_optimizer_.step(s); });
  }
}

std::uint64_t Model::theta_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const num::Matrix& m) {
    for (double v : m.flat()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (const auto* slot : {&f_first, &f_first_bias, &f_second, &f_second_bias}) mix(slot->value);
  for (int l = 0; l < linear.num_levels(); ++l) mix(linear.weights(l).value);
  return h;
}

// ---- trainer --------------------------------------------------------------------

Trainer::Trainer(const ExperimentConfig& config, const Environment& env)
    : config_(config),
      env_(env),
      oracle_(env.truth, config.oracle_delay, config.noise_rate, config.vacancy_rate, mix_seed(config.seed, "oracle")),
      model_(config, env.store.d),
      buffer_(config.buffer_capacity, mix_seed(config.seed, "buffer")),
      replay_rng_(mix_seed(config.seed, "replay")),
      hpr_rng_(mix_seed(config.seed, "hpr")),
      proto_rng_(mix_seed(config.seed, "prototypes")),
      phi_cache_(env.store.records.size()) {}

hpr::PatchMatrix Trainer::sample_patches(std::size_t feature_ref, std::uint64_t sample_id, std::uint32_t tag) const {
  const auto& map = env_.store.records.at(feature_ref).map;
  if (tag == 0 || config_.jitter_scale == 0.0) return to_patches(map);
  return to_patches(features::jitter(map, sample_id, tag, config_.jitter_scale));
}

const Eigen::VectorXd& Trainer::cached_phi(std::size_t feature_ref) const {
  auto& slot = phi_cache_.at(feature_ref);
  if (!slot) slot = model_.frozen_features(to_patches(env_.store.records[feature_ref].map));
  return *slot;
}

void Trainer::fire_events(std::span<const stream::StreamSample> batch) {
  if (batch.empty()) return;
  const std::size_t end = batch.back().arrival_index + 1;
  while (next_event_ < env_.events.size() && env_.events[next_event_].arrival_index < end) {
    const auto& ev = env_.events[next_event_++];
    live_.register_class(ev.class_id, ev.level, iteration_);
    std::optional<hpr::PatchMatrix> init;
    if (model_.hpr_enabled()) {
      for (const auto& s : batch) {
        if (s.arrival_index != ev.arrival_index) continue;
        const auto tc = model_.trainable_forward(sample_patches(s.feature_ref, s.sample_id, s.jitter_tag));
        init = model_.adapter.forward(tc.output);
        break;
      }
    }
    model_.expand_class(ev.level, ev.class_id, init ? &*init : nullptr, proto_rng_);
  }
  taxonomy::resolve_pending(live_, oracle_, iteration_);
}

void Trainer::train_iteration(std::span<const stream::StreamSample> batch,
                              const std::vector<replay::BufferItem>& replay) {
  // (1) hierarchy events and pending link resolution.
  fire_events(batch);
  std::vector<num::Matrix> snapshot;
  const bool hpr_on = model_.hpr_enabled();
  if (hpr_on) snapshot = model_.prototypes.snapshot();

  // (2) label completion under the current tree.
  std::vector<heads::CompletedLabel> labels;
  std::vector<hpr::PatchMatrix> xs;
  labels.reserve(batch.size());
  xs.reserve(batch.size());
  for (const auto& s : batch) {
    labels.push_back(heads::complete_label(live_, s.annotation));
    xs.push_back(sample_patches(s.feature_ref, s.sample_id, s.jitter_tag));
  }

  // (3) analytic heads on frozen features.
  if (config_.variant != Variant::kLinearOnly) {
    std::vector<Eigen::VectorXd> phis;
    phis.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      phis.push_back(batch[i].jitter_tag == 0 ? cached_phi(batch[i].feature_ref) : model_.frozen_features(xs[i]));
    }
    model_.analytic.update(phis, labels);
  }

  // (4) stream losses and (5) replay step.
  if (config_.variant != Variant::kAnalyticOnly) {
    stream_step(batch, labels, xs);
    if (!replay.empty()) replay_step(replay);
  }

  // (6) reservoir offers.
  for (const auto& s : batch) {
    buffer_.offer(s);
    if (seen_set_.insert(s.true_fine_class).second) seen_.push_back(s.true_fine_class);
  }

  // (7) prototype cache: the start-of-iteration copy becomes the reference
  // for the next iteration's saliency term.
  if (hpr_on && iteration_ % config_.cache_period == 0) model_.prototypes.install_cache(std::move(snapshot), iteration_);
  ++iteration_;
}

void Trainer::stream_step(std::span<const stream::StreamSample> batch, const std::vector<heads::CompletedLabel>& labels,
                          const std::vector<hpr::PatchMatrix>& xs) {
  const std::size_t B = batch.size();
  const double scale = 1.0 / static_cast<double>(B);
  const bool hpr_on = model_.hpr_enabled();
  model_.zero_grad();

  std::vector<Model::TrainableCache> tc(B);
  std::vector<hpr::Adapter::Cache> ac(hpr_on ? B : 0);
  std::vector<hpr::PatchMatrix> Ms, dMs, dYs(B);
  const hpr::ProtoLossWeights weights{config_.w_ce, config_.w_cluster, config_.w_separation};
  for (std::size_t i = 0; i < B; ++i) {
    tc[i] = model_.trainable_forward(xs[i]);
    const std::size_t P = xs[i].rows();
    const std::size_t d = xs[i].cols();
    num::Vec d_pooled(d, 0.0);
    heads::multi_ce_stream_loss(model_.linear, tc[i].pooled, labels[i], d_pooled, scale);
    dYs[i] = hpr::PatchMatrix(P, d);
    for (std::size_t p = 0; p < P; ++p) {
      auto row = dYs[i].row(p);
      for (std::size_t k = 0; k < d; ++k) row[k] = d_pooled[k] / static_cast<double>(P);
    }
    if (hpr_on) {
      Ms.push_back(model_.adapter.forward(tc[i].output, &ac[i]));
      dMs.emplace_back(Ms.back().rows(), Ms.back().cols());
      hpr::proto_loss(Ms.back(), model_.prototypes, labels[i], weights, &dMs.back(), scale);
    }
  }
  if (hpr_on) {
    const hpr::RegularizerConfig reg{config_.lambda, config_.margin, config_.topk_fraction, config_.max_pairs};
    hpr::hpr_regularizer(live_, model_.prototypes, Ms, reg, hpr_rng_, &dMs);
    for (std::size_t i = 0; i < B; ++i) {
      hpr::PatchMatrix dX(xs[i].rows(), xs[i].cols());
      model_.adapter.backward(ac[i], dMs[i], &dX);
      auto dst = dYs[i].flat();
      const auto src = dX.flat();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  for (std::size_t i = 0; i < B; ++i) model_.trainable_backward(tc[i], dYs[i]);
  model_.step(hpr_on);
}

void Trainer::replay_step(const std::vector<replay::BufferItem>& replay) {
  const std::size_t m = replay.size();
  const double scale = 1.0 / static_cast<double>(m);
  const bool aggregate = config_.variant != Variant::kLinearOnly;
  model_.zero_grad();

  std::vector<heads::CompletedLabel> labels;
  std::vector<hpr::PatchMatrix> xs;
  std::vector<Eigen::VectorXd> phis;
  for (const auto& item : replay) {
    labels.push_back(heads::complete_label(live_, item.annotation));
    xs.push_back(sample_patches(item.feature_ref, item.sample_id, item.jitter_tag));
    if (aggregate) {
      phis.push_back(item.jitter_tag == 0 ? cached_phi(item.feature_ref) : model_.frozen_features(xs.back()));
    }
  }

  const int levels = model_.linear.num_levels();
  std::vector<std::array<double, 2>> alpha_grad(static_cast<std::size_t>(levels), {0.0, 0.0});
  for (std::size_t i = 0; i < m; ++i) {
    const auto tc = model_.trainable_forward(xs[i]);
    const std::size_t P = xs[i].rows();
    const std::size_t d = xs[i].cols();
    num::Vec d_pooled(d, 0.0);
    if (!aggregate) {
      heads::multi_ce_stream_loss(model_.linear, tc.pooled, labels[i], d_pooled, scale);
    } else {
      heads::replay_consistency_loss(model_.linear, live_, tc.pooled, labels[i], d_pooled, scale);
      for (const auto& [h, id] : labels[i].classes) {
        if (h >= levels || model_.linear.classes(h).empty()) continue;
        const auto z_lin = model_.linear.logits(h, tc.pooled);
        const Eigen::VectorXd za = model_.analytic.head(h).logits(phis[i]);
        const num::Vec z_acil(za.data(), za.data() + za.size());
        auto ce = predla::aggregated_ce(z_lin, z_acil, model_.predla.level(h), model_.linear.classes(h).at(id),
                                        config_.tau_min);
        for (auto& g : ce.d_z_lin) g *= scale;
        model_.linear.backward(h, tc.pooled, ce.d_z_lin, d_pooled);
        alpha_grad[static_cast<std::size_t>(h)][0] += scale * ce.d_alpha_logits[0];
        alpha_grad[static_cast<std::size_t>(h)][1] += scale * ce.d_alpha_logits[1];
      }
    }
    hpr::PatchMatrix dY(P, d);
    for (std::size_t p = 0; p < P; ++p) {
      auto row = dY.row(p);
      for (std::size_t k = 0; k < d; ++k) row[k] = d_pooled[k] / static_cast<double>(P);
    }
    model_.trainable_backward(tc, dY);
  }
  model_.step(false);
  if (!aggregate) return;

  for (int h = 0; h < levels; ++h) model_.predla.alpha_step(h, alpha_grad[static_cast<std::size_t>(h)]);

  // Inner step: temperatures only, on the updated linear logits.
  std::vector<num::Vec> pooled;
  for (const auto& x : xs) pooled.push_back(model_.trainable_forward(x).pooled);
  for (int h = 0; h < levels; ++h) {
    if (model_.linear.classes(h).empty()) continue;
    std::vector<num::Vec> z_lin, z_acil;
    for (std::size_t i = 0; i < m; ++i) {
      z_lin.push_back(model_.linear.logits(h, pooled[i]));
      const Eigen::VectorXd za = model_.analytic.head(h).logits(phis[i]);
      z_acil.emplace_back(za.data(), za.data() + za.size());
    }
    const auto gap = predla::entropy_gap(z_lin, z_acil, model_.predla.level(h), config_.delta);
    if (gap.loss > 0.0) model_.predla.tau_step(h, gap.d_tau_lin, gap.d_tau_acil);
  }
}

int Trainer::alignment_level() const {
  return config_.alignment_level >= 0 ? config_.alignment_level : env_.truth.max_level();
}

eval::CheckpointRecord Trainer::evaluate(std::size_t position) const {
  eval::EvalContext ctx;
  ctx.truth = &env_.truth;
  ctx.live = &live_;
  ctx.level_classes.resize(static_cast<std::size_t>(env_.truth.num_levels()));
  for (int h = 0; h < std::min(env_.truth.num_levels(), model_.linear.num_levels()); ++h) {
    ctx.level_classes[static_cast<std::size_t>(h)] = model_.linear.classes(h).ids();
  }
  const auto predict = [&](std::size_t ref) {
    return model_.predict(to_patches(env_.store.records[ref].map), cached_phi(ref));
  };
  return eval::evaluate_checkpoint(predict, env_.test, ctx, seen_, position);
}

std::optional<double> Trainer::alignment() const {
  if (!model_.hpr_enabled()) return std::nullopt;
  return eval::prototype_alignment(model_.prototypes, env_.truth, alignment_level());
}

RunResult Trainer::run(const std::function<void(const Trainer&, std::size_t)>& on_checkpoint) {
  RunResult result;
  const auto& stream = env_.stream;
  const std::size_t B = config_.batch_size;
  std::size_t next_eval = config_.eval_interval;
  std::size_t last_eval = 0;
  auto checkpoint = [&](std::size_t position) {
    result.records.push_back(evaluate(position));
    result.alignment.push_back(alignment());
    std::vector<std::array<double, 3>> trace;
    for (int h = 0; h < model_.predla.num_levels(); ++h) {
      const auto& s = model_.predla.level(h);
      trace.push_back({s.alpha()[0], s.tau_lin, s.tau_acil});
    }
    result.predla_trace.push_back(std::move(trace));
    last_eval = position;
    if (on_checkpoint) on_checkpoint(*this, position);
  };
  for (std::size_t start = 0; start < stream.size(); start += B) {
    const std::size_t end = std::min(stream.size(), start + B);
    std::vector<replay::BufferItem> replay;
    if (config_.variant != Variant::kAnalyticOnly && !buffer_.empty()) {
      replay = buffer_.sample_batch(config_.memory_batch, replay_rng_);
    }
    train_iteration(std::span<const stream::StreamSample>(stream.data() + start, end - start), replay);
    ++result.iterations;
    result.consumed = end;
    if (end >= next_eval) {
      checkpoint(end);
      next_eval = (end / config_.eval_interval + 1) * config_.eval_interval;
    }
  }
  if (last_eval != result.consumed) checkpoint(result.consumed);
  result.summary = eval::summarize(result.records);
  return result;
}

RunResult run_in_memory(const ExperimentConfig& config) {
  const auto env = build_environment(config);
  Trainer trainer(config, env);
  return trainer.run();
}

// ---- outputs --------------------------------------------------------------------

std::string format_metrics_csv(const RunResult& result, int levels) {
  std::string out = "position";
  for (int h = 0; h < levels; ++h) out += ",acc_L" + std::to_string(h);
  out += ",mean_acc,fine_acc,severity,no_mistakes,tree_version";
  for (int h = 0; h < levels; ++h) {
    const auto l = std::to_string(h);
    out += ",alpha_lin_L" + l + ",tau_lin_L" + l + ",tau_acil_L" + l;
  }
  out += '\n';
  for (std::size_t r = 0; r < result.records.size(); ++r) {
    const auto& rec = result.records[r];
    out += std::to_string(rec.stream_position);
    for (int h = 0; h < levels; ++h) {
      auto it = rec.level_accuracy.find(h);
      out += ',' + (it == rec.level_accuracy.end() ? std::string() : format_double(it->second));
    }
    out += ',' + format_double(rec.mean_accuracy()) + ',' + opt_number(rec.fine_accuracy) + ',' +
           format_double(rec.mistake_severity) + ',' + (rec.no_mistakes ? "1" : "0") + ',' +
           std::to_string(rec.tree_version);
    const auto& trace = result.predla_trace[r];
    for (int h = 0; h < levels; ++h) {
      if (static_cast<std::size_t>(h) < trace.size()) {
        for (double v : trace[static_cast<std::size_t>(h)]) out += ',' + format_double(v);
      } else {
        out += ",,,";
      }
    }
    out += '\n';
  }
  return out;
}

std::string format_alignment_csv(const RunResult& result) {
  std::string out = "position,alignment\n";
  for (std::size_t r = 0; r < result.records.size(); ++r) {
    out += std::to_string(result.records[r].stream_position) + ',' + opt_number(result.alignment[r]) + '\n';
  }
  return out;
}

std::string format_summary_json(const RunResult& result, const ExperimentConfig& config) {
  nlohmann::ordered_json j;
  const auto& s = result.summary;
  j["aauc"] = s.aauc;
  j["fauc"] = s.fauc;
  j["ms"] = s.ms;
  j["ms_defined"] = s.ms_defined;
  j["ms_statistic"] = "area under the per-checkpoint mean fine-level LCA height, checkpoints without mistakes skipped";
  j["ffacc"] = s.ffacc;
  j["faacc"] = s.faacc;
  if (!result.alignment.empty() && result.alignment.back()) {
    j["final_alignment"] = *result.alignment.back();
  } else {
    j["final_alignment"] = nullptr;
  }
  j["checkpoints"] = result.records.size();
  j["iterations"] = result.iterations;
  j["samples_consumed"] = result.consumed;
  j["variant"] = std::string(variant_name(config.variant));
  j["optimizer"] = config.optimizer == num::OptimizerKind::kSgd ? "sgd" : "adamw";
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  return j.dump(2) + "\n";
}

std::filesystem::path run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_root,
                                     RunResult* result_out) {
  const auto env = build_environment(config);
  const auto dir = out_root / (config_hash(config) + "-" + std::to_string(config.seed));
  std::filesystem::create_directories(dir / "buffer");
  write_text(dir / "config.ini", echo_config(config));
  write_text(dir / "stream.csv", stream::format_manifest(env.stream));

  Trainer trainer(config, env);
  auto result = trainer.run([&](const Trainer& t, std::size_t position) {
    write_text(dir / "buffer" / ("buffer_" + std::to_string(position) + ".csv"), t.buffer().dump_csv());
  });

  write_text(dir / "metrics.csv", format_metrics_csv(result, env.truth.num_levels()));
  write_text(dir / "alignment.csv", format_alignment_csv(result));
  write_text(dir / "summary.json", format_summary_json(result, config));
  heads::write_heads(trainer.model().analytic, dir / "heads.bin");
  if (trainer.model().hpr_enabled()) {
    hpr::write_prototype_dump(trainer.model().prototypes, dir / "prototypes.json", dir / "prototypes.bin");
    write_text(dir / "prototype_distance.csv",
               hpr::format_distance_csv(trainer.model().prototypes, trainer.alignment_level()));
  }
  if (result_out) *result_out = std::move(result);
  return dir;
}

}  // namespace halo::runner
