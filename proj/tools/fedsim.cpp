// fedsim: run, sweep and summarize federated backdoor experiments.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/metrics.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

std::vector<harness::Override> parse_overrides(const std::vector<std::string>& items) {
  std::vector<harness::Override> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw harness::ConfigError("--set " + item + ": expected key=value");
    }
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (const auto& v : out) {
    if (v.empty()) throw harness::ConfigError("--param: empty value in '" + s + "'");
  }
  return out;
}

void print_summary(const harness::MetricsSummary& s) {
  for (const auto& m : s.per_seed) std::cout << harness::summary_row(m, std::to_string(m.seed)) << '\n';
  std::cout << harness::summary_row(s.mean, harness::kMeanSeedLabel) << '\n';
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw harness::ConfigError(p.string() + ": no such file");
}

// `<tag>[_<key>-<value>]_seed<s>.csv` -> (tag, value).
std::pair<std::string, std::string> split_stem(const fs::path& csv) {
  std::string stem = csv.stem().string();
  const auto pos = stem.rfind("_seed");
  if (pos != std::string::npos) stem.resize(pos);
  const auto us = stem.rfind('_');
  if (us != std::string::npos) {
    const std::string tail = stem.substr(us + 1);
    const auto dash = tail.rfind('-');
    if (dash != std::string::npos && dash > 0 && dash + 1 < tail.size()) {
      return {stem.substr(0, us), tail.substr(dash + 1)};
    }
  }
  return {stem, ""};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning backdoor simulator"};
  app.require_subcommand(1);

  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Parallel seeds (0 = sequential; default FEDSIM_THREADS)");

  fs::path config;
  std::vector<std::string> sets;

  auto* run = app.add_subcommand("run", "Run every seed of one config");
  run->add_option("config", config, "JSON config file")->required();
  run->add_option("--set", sets, "Override key=value (dotted path or unique key)");

  std::string param;
  auto* sweep = app.add_subcommand("sweep", "Run a config once per value of one parameter");
  sweep->add_option("config", config, "JSON config file")->required();
  sweep->add_option("--param", param, "key=v1,v2,...")->required();
  sweep->add_option("--set", sets, "Override key=value");

  std::vector<fs::path> csvs;
  std::optional<fs::path> metrics_out;
  auto* metrics = app.add_subcommand("metrics", "Recompute summaries from per-seed CSVs");
  metrics->add_option("csv", csvs, "Per-seed CSV files")->required();
  metrics->add_option("-o,--out", metrics_out, "Write the summary CSV here as well");

  std::size_t classes = 10, dim = 36, per_class = 300;
  double separation = 3.0;
  std::uint64_t seed = 0;
  fs::path out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic Gaussian-cluster dataset as CSV");
  gen->add_option("--classes", classes)->capture_default_str();
  gen->add_option("--dim", dim)->capture_default_str();
  gen->add_option("--per-class", per_class)->capture_default_str();
  gen->add_option("--separation", separation)->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("-o,--out", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      require_file(config);
      const auto cfg = harness::parse_config(config, parse_overrides(sets));
      harness::RunOptions opt;
      opt.threads = threads;
      const auto result = harness::run_experiment(cfg, opt);
      std::cout << harness::kSummaryCsvHeader << '\n';
      print_summary(result.summary);
      std::cerr << "wrote " << result.seed_csvs.size() << " seed CSVs and " << result.summary_csv.string()
                << '\n';
    } else if (*sweep) {
      require_file(config);
      const auto eq = param.find('=');
      if (eq == std::string::npos || eq == 0) throw harness::ConfigError("--param: expected key=v1,v2,...");
      const auto result = harness::run_sweep(config, parse_overrides(sets), param.substr(0, eq),
                                             split_list(param.substr(eq + 1)), threads);
      std::cout << harness::kSummaryCsvHeader << '\n';
      for (const auto& r : result.runs) print_summary(r.summary);
      std::cerr << "wrote " << result.summary_csv.string() << '\n';
    } else if (*metrics) {
      // Group files by (tag, value) in first-seen order.
      std::vector<std::pair<std::string, std::string>> keys;
      std::map<std::pair<std::string, std::string>, std::vector<harness::SeedMetrics>> groups;
      for (const auto& path : csvs) {
        require_file(path);
        const auto csv = harness::read_round_csv(path);
        auto m = harness::compute_metrics(csv.records, harness::attack_rounds_of(csv.records));
        const auto key = split_stem(path);
        m.config_tag = key.first;
        m.param_value = key.second;
        m.seed = csv.seed;
        if (!groups.count(key)) keys.push_back(key);
        groups[key].push_back(std::move(m));
      }
      std::vector<harness::MetricsSummary> summaries;
      for (const auto& k : keys) summaries.push_back(harness::summarize(groups[k]));
      std::cout << harness::kSummaryCsvHeader << '\n';
      for (const auto& s : summaries) print_summary(s);
      if (metrics_out) harness::write_summary_csv(*metrics_out, summaries);
    } else if (*gen) {
      const auto ds = data::generate_synthetic(classes, dim, per_class, separation, seed);
      data::save_csv(ds, out);
      std::cerr << "wrote " << ds.size() << " rows to " << out.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "fedsim: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
