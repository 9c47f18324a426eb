// halo: command-line front end for runs, sweeps, feature generation,
// self-verification and result tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "halo/config.hpp"
#include "halo/errors.hpp"
#include "halo/featuresim.hpp"
#include "halo/runner.hpp"
#include "halo/taxonomy.hpp"
#include "halo_oracles.hpp"
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 2;
constexpr int kFailure = 1;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

halo::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  halo::ExperimentConfig config = path.empty() ? halo::ExperimentConfig{} : halo::read_config_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    halo::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

void print_summary(const fs::path& dir, const halo::runner::RunResult& r) {
  const auto& s = r.summary;
  std::printf("%s\n  AAUC %.4f  FAUC %.4f  FFAcc %.4f  FAAcc %.4f  MS %s\n", dir.string().c_str(), s.aauc, s.fauc,
              s.ffacc, s.faacc, s.ms_defined ? halo::format_double(s.ms).c_str() : "n/a");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out) {
  const auto config = load_config(config_path, overrides);
  halo::runner::RunResult result;
  const auto dir = halo::runner::run_experiment(config, out, &result);
  print_summary(dir, result);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::vector<std::string>& grid, const std::string& out) {
  const auto base = load_config(config_path, overrides);
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& g : grid) {
    const auto eq = g.find('=');
    if (eq == std::string::npos) throw UsageError("--grid expects key=v1,v2,..., got '" + g + "'");
    auto values = split_list(g.substr(eq + 1));
    if (values.empty()) throw UsageError("--grid '" + g + "' lists no values");
    axes.emplace_back(g.substr(0, eq), std::move(values));
  }
  if (axes.empty()) throw UsageError("sweep needs at least one --grid");
  std::vector<std::size_t> pos(axes.size(), 0);
  while (true) {
    auto config = base;
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      halo::apply_setting(config, axes[a].first, axes[a].second[pos[a]]);
      label += (a ? " " : "") + axes[a].first + "=" + axes[a].second[pos[a]];
    }
    config.validate();
    halo::runner::RunResult result;
    const auto dir = halo::runner::run_experiment(config, out, &result);
    std::printf("[%s] ", label.c_str());
    print_summary(dir, result);
    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++pos[a] < axes[a].second.size()) break;
      pos[a] = 0;
    }
    if (a == axes.size()) break;
  }
  return 0;
}

int cmd_gen_features(const std::string& config_path, const std::vector<std::string>& overrides,
                     const std::string& out, const std::string& taxonomy_out, const std::string& manifest_out) {
  auto config = load_config(config_path, overrides);
  config.feature_path.clear();
  const auto env = halo::runner::build_environment(config);
  halo::features::write_feature_file(env.store, out);
  std::printf("%s: %zu records, d=%u H=%u W=%u\n", out.c_str(), env.store.records.size(), env.store.d, env.store.H,
              env.store.W);
  if (!taxonomy_out.empty()) halo::taxonomy::write_taxonomy_file(env.truth, taxonomy_out);
  if (!manifest_out.empty()) {
    std::ofstream m(manifest_out);
    m << halo::taxonomy::format_class_manifest(env.index.fine_classes);
    if (!m) throw halo::FormatError("cannot write " + manifest_out);
  }
  return 0;
}

int cmd_verify(int seeds) { return halo::oracle::run_verify(std::cout, seeds) ? 0 : kFailure; }

int cmd_report(const std::vector<std::string>& paths, const std::string& format) {
  if (format != "md" && format != "csv") throw UsageError("--format must be md or csv");
  struct Row {
    std::string name;
    nlohmann::json j;
  };
  std::vector<Row> rows;
  for (const auto& p : paths) {
    fs::path file = p;
    if (fs::is_directory(file)) file /= "summary.json";
    std::ifstream in(file);
    if (!in) throw halo::FormatError("cannot read " + file.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw halo::FormatError(file.string() + ": " + e.what());
    }
    rows.push_back({file.parent_path().filename().string(), std::move(j)});
  }
  const std::vector<std::string> cols{"aauc", "fauc", "ffacc", "faacc", "ms", "final_alignment"};
  auto cell = [](const nlohmann::json& j, const std::string& key) -> std::string {
    if (!j.contains(key) || j[key].is_null()) return "";
    if (key == "ms" && j.contains("ms_defined") && !j["ms_defined"].get<bool>()) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", j[key].get<double>());
    return buf;
  };
  const std::string sep = format == "csv" ? "," : " | ";
  auto emit = [&](const std::vector<std::string>& fields) {
    std::string line = format == "csv" ? "" : "| ";
    for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? sep : "") + fields[i];
    std::cout << line << (format == "csv" ? "" : " |") << '\n';
  };
  std::vector<std::string> header{"run", "variant", "seed"};
  header.insert(header.end(), cols.begin(), cols.end());
  emit(header);
  if (format == "md") emit(std::vector<std::string>(header.size(), "---"));

  // Per-run rows, then means over seeds for each configuration hash.
  std::map<std::string, std::pair<std::string, std::vector<const nlohmann::json*>>> groups;
  for (const auto& r : rows) {
    std::vector<std::string> f{r.name, r.j.value("variant", ""), std::to_string(r.j.value("seed", 0ULL))};
    for (const auto& c : cols) f.push_back(cell(r.j, c));
    emit(f);
    auto& g = groups[r.j.value("config_hash", r.name)];
    g.first = r.j.value("variant", "");
    g.second.push_back(&r.j);
  }
  for (const auto& [hash, g] : groups) {
    std::vector<std::string> f{hash + " (mean)", g.first, std::to_string(g.second.size()) + " seeds"};
    for (const auto& c : cols) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto* j : g.second) {
        const auto v = cell(*j, c);
        if (v.empty()) continue;
        sum += (*j)[c].get<double>();
        ++n;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", n ? sum / static_cast<double>(n) : 0.0);
      f.push_back(n ? buf : "");
    }
    emit(f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"halo: hierarchical online continual learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out = "runs", taxonomy_out, manifest_out, format = "md";
  std::vector<std::string> overrides, grid, paths;
  int seeds = 20;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config_path, "Config file (key = value under [section] headers)")->check(CLI::ExistingFile);
  run->add_option("--set", overrides, "Override a key, e.g. --set seed=7 --set stream.num_groups=5");
  run->add_option("--out", out, "Output root; the run directory is <hash>-<seed> below it")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of listed key values");
  sweep->add_option("config", config_path, "Base config file")->check(CLI::ExistingFile);
  sweep->add_option("--set", overrides, "Override a key on the base config");
  sweep->add_option("--grid", grid, "key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--out", out, "Output root")->capture_default_str();

  auto* gen = app.add_subcommand("gen-features", "Write synthetic feature maps as a feature file");
  gen->add_option("config", config_path, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--set", overrides, "Override a key");
  gen->add_option("--out", out, "Feature file path")->required();
  gen->add_option("--taxonomy-out", taxonomy_out, "Also write the taxonomy");
  gen->add_option("--manifest-out", manifest_out, "Also write the fine-class manifest");

  auto* verify = app.add_subcommand("verify", "Run the RLS, gradient and LCA property suites");
  verify->add_option("--seeds", seeds, "Seeds per gradient check")->capture_default_str()->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Merge run summaries into a comparison table");
  report->add_option("paths", paths, "Run directories or summary.json files")->required();
  report->add_option("--format", format, "md or csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*run) return cmd_run(config_path, overrides, out);
    if (*sweep) return cmd_sweep(config_path, overrides, grid, out);
    if (*gen) return cmd_gen_features(config_path, overrides, out, taxonomy_out, manifest_out);
    if (*verify) return cmd_verify(seeds);
    if (*report) return cmd_report(paths, format);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const halo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
