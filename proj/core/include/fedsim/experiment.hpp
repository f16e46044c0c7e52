#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/training.hpp"

namespace fedsim::harness {

/// Everything one seed needs: datasets, partition, initial model.
struct SeedWorld {
  Model model;
  data::Dataset train;
  data::Dataset test;
  data::Partition partition;
  attack::AttackerData attacker;
  fed::EvalSets eval;
  ParamVector initial;
};

/// Builds the datasets and model for one run seed. Synthetic datasets depend
/// only on dataset.seed; partition and initialization depend on the run seed.
SeedWorld build_world(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  std::set<std::size_t> attack_rounds;
  std::vector<fed::RoundRecord> records;  // values quantized to the CSV precision
  SeedMetrics metrics;
};

struct RunOptions {
  std::string param_name;   // sweep key, empty for a plain run
  std::string param_value;
  std::optional<std::size_t> threads;  // default: threads_from_env()
  bool write_files = true;
  /// Sees every unquantized round record; called from worker threads when seeds run in parallel.
  fed::RoundObserver observer;
};

struct RunResult {
  std::vector<SeedRun> seeds;
  MetricsSummary summary;
  std::vector<std::filesystem::path> seed_csvs;
  std::filesystem::path summary_csv;
};

/// Runs one seed end to end. Exceptions are rethrown as std::runtime_error
/// prefixed with "seed <s>: ".
SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& options = {});

/// Runs every seed (in parallel up to the thread cap), writes
/// `<tag>[_<param>-<value>]_seed<s>.csv` per seed and `<tag>[...]_summary.csv`.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

struct SweepResult {
  std::vector<RunResult> runs;
  std::filesystem::path summary_csv;  // all parameter values, `<tag>_sweep-<param>_summary.csv`
};

/// One run per value of `key`, each value applied as an override on top of `overrides`.
SweepResult run_sweep(const std::filesystem::path& config_path, const std::vector<Override>& overrides,
                      const std::string& key, const std::vector<std::string>& values,
                      std::optional<std::size_t> threads = std::nullopt);

/// FEDSIM_THREADS: unset -> hardware concurrency, 0 -> sequential.
std::size_t threads_from_env();

std::string file_stem(const std::string& tag, const std::string& param_name, const std::string& param_value);

}  // namespace fedsim::harness
