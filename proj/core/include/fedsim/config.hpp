#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/data.hpp"
#include "fedsim/defenses.hpp"
#include "fedsim/fedavg.hpp"
#include "fedsim/model.hpp"

namespace fedsim::harness {

/// Validation or parse failure; the message starts with the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  enum class Source { synthetic, csv };
  enum class Split { iid, dirichlet };

  Source source = Source::synthetic;
  // synthetic
  std::size_t num_classes = 10;
  std::size_t input_dim = 49;
  std::size_t train_per_class = 300;
  std::size_t test_per_class = 100;
  double separation = 6.0;
  std::uint64_t seed = 0;
  // csv
  std::filesystem::path path;
  std::filesystem::path test_path;  // empty -> split off test_fraction of `path`
  double test_fraction = 0.2;

  std::optional<data::Geometry> geometry;  // synthetic default: square side sqrt(input_dim)
  Split split = Split::iid;
  double alpha = 1.0;
  std::size_t attacker_size = 200;
  data::TriggerSpec trigger;  // row/col default to the bottom-right corner
};

struct ScheduleConfig {
  enum class Type { none, sequential, random, fixed };

  Type type = Type::none;
  std::size_t start = 0;
  std::size_t count = 0;
  std::size_t window = 0;  // random: draw `count` rounds from [start, start + window)
  std::vector<std::size_t> rounds;

  /// Attack rounds for one run; random schedules depend on the run seed.
  std::set<std::size_t> resolve(std::uint64_t seed, std::size_t total_rounds) const;
};

struct ExperimentConfig {
  std::string tag = "experiment";
  DatasetConfig dataset;
  ModelSpec model;
  fed::FedConfig fed;
  attack::AttackPlan attack;  // attack_rounds filled per seed from `schedule`
  ScheduleConfig schedule;
  defense::DefenseConfig defense;
  std::size_t eval_every = 1;
  // Benign FedAvg rounds run before round 0 (unrecorded); attacks then start on a trained model.
  std::size_t pretrain_rounds = 0;
  std::filesystem::path output_dir = "results";
  std::vector<std::uint64_t> seeds;
};

/// One `key=value` override applied before validation. Keys are dotted paths
/// ("attack.k") or a bare leaf name that is unique across the config blocks.
using Override = std::pair<std::string, std::string>;

ExperimentConfig parse_config(const std::filesystem::path& path,
                              const std::vector<Override>& overrides = {});
ExperimentConfig parse_config_text(std::string_view text, const std::vector<Override>& overrides = {},
                                   const std::filesystem::path& base_dir = ".");

/// Resolves a bare sweep key to its dotted path ("k" -> "attack.k").
std::string resolve_key(std::string_view key);

}  // namespace fedsim::harness
