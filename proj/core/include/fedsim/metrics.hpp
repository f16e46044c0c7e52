#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/fedavg.hpp"

namespace fedsim::harness {

struct SeedMetrics {
  std::string config_tag;
  std::string param_value;
  std::uint64_t seed = 0;
  std::optional<double> a_first;  // absent without attack rounds
  std::optional<double> a_last;
  double peak_backdoor = 0.0;
  double final_backdoor = 0.0;
  double final_main = 0.0;
};

/// a_first / a_last: mean backdoor accuracy over evaluated rounds r >= the
/// first / last attack round, i.e. including that round's post-aggregation
/// evaluation and running to the end of training.
SeedMetrics compute_metrics(std::span<const fed::RoundRecord> records,
                            const std::set<std::size_t>& attack_rounds);

struct MetricsSummary {
  std::vector<SeedMetrics> per_seed;
  SeedMetrics mean;  // seed field unused
};

/// Arithmetic means across seeds; a_first/a_last average the seeds where present.
MetricsSummary summarize(std::vector<SeedMetrics> per_seed);

/// Attack rounds recovered from the attacker_present column.
std::set<std::size_t> attack_rounds_of(std::span<const fed::RoundRecord> records);

// --- CSV schemas -----------------------------------------------------------

inline constexpr const char* kRoundCsvHeader =
    "round,main_acc,backdoor_acc,attacker_present,mean_update_norm,seed";
inline constexpr const char* kSummaryCsvHeader =
    "config_tag,param_value,seed,a_first,a_last,peak_backdoor,final_backdoor,final_main";
/// Seed column value of the per-parameter mean row in summary files.
inline constexpr const char* kMeanSeedLabel = "mean";

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed 6-decimal text form used in every emitted CSV.
std::string format_fixed6(double v);
/// Value after a round trip through format_fixed6.
double quantize6(double v);

void write_round_csv(const std::filesystem::path& path, std::span<const fed::RoundRecord> records,
                     std::uint64_t seed);

struct RoundCsv {
  std::vector<fed::RoundRecord> records;  // update_norms holds the single mean value
  std::uint64_t seed = 0;
};
RoundCsv read_round_csv(const std::filesystem::path& path);

void write_summary_csv(const std::filesystem::path& path, std::span<const MetricsSummary> groups);
std::string summary_row(const SeedMetrics& m, const std::string& seed_label);
std::vector<SeedMetrics> read_summary_csv(const std::filesystem::path& path, bool include_means = false);

}  // namespace fedsim::harness
