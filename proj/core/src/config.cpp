#include "halo/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "halo/errors.hpp"
#include "halo/rng.hpp"

namespace halo {

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kLinearOnly: return "linear_only";
    case Variant::kAnalyticOnly: return "analytic_only";
    case Variant::kPredLA: return "predla";
    case Variant::kPredLAHpr: return "predla_hpr";
  }
  return "predla_hpr";
}

Variant parse_variant(std::string_view text) {
  for (auto v : {Variant::kLinearOnly, Variant::kAnalyticOnly, Variant::kPredLA, Variant::kPredLAHpr}) {
    if (variant_name(v) == text) return v;
  }
  throw ConfigError("variant must be one of linear_only, analytic_only, predla, predla_hpr (got '" +
                    std::string(text) + "')");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) { return format_double(v); }

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ConfigError("config key '" + std::string(key) + "' must be finite");
  }
  return v;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  text = trim(text);
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    out.push_back(parse_number<T>(key, item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename T>
Field list_field(std::string key, std::vector<T> ExperimentConfig::*member) {
  return {key, [key, member](ExperimentConfig& c, std::string_view v) { c.*member = parse_list<T>(key, v); },
          [member](const ExperimentConfig& c) { return fmt_list(c.*member); }};
}

Field string_field(std::string key, std::string ExperimentConfig::*member) {
  return {key, [member](ExperimentConfig& c, std::string_view v) { c.*member = std::string(trim(v)); },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"variant", [](C& c, std::string_view v) { c.variant = parse_variant(trim(v)); },
                 [](const C& c) { return std::string(variant_name(c.variant)); }});
    f.push_back(string_field("taxonomy.path", &C::taxonomy_path));
    f.push_back(list_field("taxonomy.branching", &C::branching));
    f.push_back(string_field("features.path", &C::feature_path));
    f.push_back(number_field("features.d", &C::feature_dim));
    f.push_back(number_field("features.H", &C::feature_height));
    f.push_back(number_field("features.W", &C::feature_width));
    f.push_back(number_field("features.samples_per_class", &C::samples_per_class));
    f.push_back(number_field("features.test_fraction", &C::test_fraction));
    f.push_back(list_field("features.sigma", &C::sigma_per_level));
    f.push_back(number_field("features.jitter", &C::jitter_scale));
    f.push_back(number_field("stream.num_groups", &C::num_groups));
    f.push_back(number_field("stream.overlap_fraction", &C::overlap_fraction));
    f.push_back(list_field("stream.granularity_weights", &C::granularity_weights));
    f.push_back(number_field("stream.duplication_factor", &C::duplication_factor));
    f.push_back({"stream.split_mode",
                 [](C& c, std::string_view v) {
                   v = trim(v);
                   if (v == "fine") {
                     c.split_mode = stream::SplitMode::kFine;
                   } else if (v == "coarse") {
                     c.split_mode = stream::SplitMode::kCoarse;
                   } else {
                     throw ConfigError("stream.split_mode must be 'fine' or 'coarse'");
                   }
                 },
                 [](const C& c) { return std::string(c.split_mode == stream::SplitMode::kFine ? "fine" : "coarse"); }});
    f.push_back(number_field("stream.batch_size", &C::batch_size));
    f.push_back(number_field("model.proto_dim", &C::proto_dim));
    f.push_back(number_field("model.prototypes_per_class", &C::prototypes_per_class));
    f.push_back(number_field("model.gamma", &C::gamma));
    f.push_back({"optim.kind",
                 [](C& c, std::string_view v) {
                   v = trim(v);
                   if (v == "sgd") {
                     c.optimizer = num::OptimizerKind::kSgd;
                   } else if (v == "adamw") {
                     c.optimizer = num::OptimizerKind::kAdamW;
                   } else {
                     throw ConfigError("optim.kind must be 'sgd' or 'adamw'");
                   }
                 },
                 [](const C& c) { return std::string(c.optimizer == num::OptimizerKind::kSgd ? "sgd" : "adamw"); }});
    f.push_back(number_field("optim.lr", &C::learning_rate));
    f.push_back(number_field("optim.weight_decay", &C::weight_decay));
    f.push_back(number_field("hpr.lambda", &C::lambda));
    f.push_back(number_field("hpr.lr", &C::hpr_learning_rate));
    f.push_back(number_field("hpr.margin", &C::margin));
    f.push_back(number_field("hpr.topk_fraction", &C::topk_fraction));
    f.push_back(number_field("hpr.max_pairs", &C::max_pairs));
    f.push_back(number_field("hpr.cache_period", &C::cache_period));
    f.push_back(number_field("hpr.w_ce", &C::w_ce));
    f.push_back(number_field("hpr.w_cluster", &C::w_cluster));
    f.push_back(number_field("hpr.w_separation", &C::w_separation));
    f.push_back(number_field("predla.alpha_lr", &C::alpha_lr));
    f.push_back(number_field("predla.tau_lr", &C::tau_lr));
    f.push_back(number_field("predla.delta", &C::delta));
    f.push_back(number_field("predla.tau_min", &C::tau_min));
    f.push_back(number_field("replay.capacity", &C::buffer_capacity));
    f.push_back(number_field("replay.memory_batch", &C::memory_batch));
    f.push_back(number_field("oracle.delay", &C::oracle_delay));
    f.push_back(number_field("oracle.noise", &C::noise_rate));
    f.push_back(number_field("oracle.vacancy", &C::vacancy_rate));
    f.push_back(number_field("eval.interval", &C::eval_interval));
    f.push_back(number_field("eval.alignment_level", &C::alignment_level));
    return f;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + " " + why); };
  if (taxonomy_path.empty()) {
    if (branching.empty()) fail("taxonomy.branching", "must list at least one level");
    for (int b : branching) {
      if (b < 1) fail("taxonomy.branching", "entries must be positive");
    }
  }
  if (feature_dim == 0 || feature_height == 0 || feature_width == 0) fail("features.d/H/W", "must be positive");
  if (samples_per_class == 0) fail("features.samples_per_class", "must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("features.test_fraction", "must lie in (0, 1)");
  for (double s : sigma_per_level) {
    if (!(s > 0.0)) fail("features.sigma", "entries must be positive");
  }
  if (jitter_scale < 0.0) fail("features.jitter", "must be nonnegative");
  if (num_groups == 0) fail("stream.num_groups", "must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 0.5)) fail("stream.overlap_fraction", "must lie in [0, 0.5)");
  if (!granularity_weights.empty()) {
    double total = 0.0;
    for (double w : granularity_weights) {
      if (w < 0.0) fail("stream.granularity_weights", "must be nonnegative");
      total += w;
    }
    if (total <= 0.0) fail("stream.granularity_weights", "must not all be zero");
  }
  if (duplication_factor == 0) fail("stream.duplication_factor", "must be positive");
  if (batch_size == 0) fail("stream.batch_size", "must be positive");
  if (proto_dim == 0) fail("model.proto_dim", "must be positive");
  if (prototypes_per_class == 0) fail("model.prototypes_per_class", "must be positive");
  if (!(gamma > 0.0)) fail("model.gamma", "must be positive");
  if (!(learning_rate > 0.0)) fail("optim.lr", "must be positive");
  if (weight_decay < 0.0) fail("optim.weight_decay", "must be nonnegative");
  if (lambda < 0.0) fail("hpr.lambda", "must be nonnegative");
  if (!(hpr_learning_rate > 0.0)) fail("hpr.lr", "must be positive");
  if (margin < 0.0) fail("hpr.margin", "must be nonnegative");
  if (!(topk_fraction > 0.0 && topk_fraction <= 1.0)) fail("hpr.topk_fraction", "must lie in (0, 1]");
  if (cache_period <= 0) fail("hpr.cache_period", "must be positive");
  if (w_ce < 0.0 || w_cluster < 0.0 || w_separation < 0.0) fail("hpr.w_*", "must be nonnegative");
  if (alpha_lr < 0.0) fail("predla.alpha_lr", "must be nonnegative");
  if (tau_lr < 0.0) fail("predla.tau_lr", "must be nonnegative");
  if (delta < 0.0) fail("predla.delta", "must be nonnegative");
  if (!(tau_min > 0.0)) fail("predla.tau_min", "must be positive");
  if (memory_batch == 0) fail("replay.memory_batch", "must be positive");
  if (oracle_delay < 0) fail("oracle.delay", "must be nonnegative");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) fail("oracle.noise", "must lie in [0, 1]");
  if (!(vacancy_rate >= 0.0 && vacancy_rate <= 1.0)) fail("oracle.vacancy", "must lie in [0, 1]");
  if (noise_rate + vacancy_rate > 1.0) fail("oracle.noise + oracle.vacancy", "must not exceed 1");
  if (eval_interval == 0) fail("eval.interval", "must be positive");
}

void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  if (key == "seed") {
    config.seed = parse_number<std::uint64_t>(key, value);
    return;
  }
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    apply_setting(base, full, line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig read_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"seed"};
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string canonical_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string echo_config(const ExperimentConfig& config) {
  return "seed = " + std::to_string(config.seed) + "\n" + canonical_config(config);
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(config))));
  return buf;
}

}  // namespace halo
