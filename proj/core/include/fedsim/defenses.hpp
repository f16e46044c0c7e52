#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedsim/model.hpp"

namespace fedsim::defense {

enum class Rule { norm_bound, krum, multi_krum, median, trimmed_mean };

struct DefenseConfig {
  Rule rule = Rule::norm_bound;
  std::size_t f = 1;                         // assumed byzantine count (krum family)
  std::optional<std::size_t> select_count;   // multi-krum; default n - f - 2
  std::size_t trim_count = 1;                // trimmed mean, per side
  bool stack_norm_bound = false;             // clip deltas before a robust rule

  /// Checks the rule's requirements against n updates per round.
  void validate(std::size_t n) const;
};

/// Krum score of each update: sum of squared L2 distances to its n - f - 2
/// nearest other updates.
std::vector<double> krum_scores(std::span<const ParamVector> updates, std::size_t f);

/// The lowest-score update (lowest index on ties).
ParamVector krum(std::span<const ParamVector> updates, std::size_t f);

/// Indices of the select_count lowest-score updates, ascending by (score, index).
std::vector<std::size_t> multi_krum_selection(std::span<const ParamVector> updates, std::size_t f,
                                              std::size_t select_count);
ParamVector multi_krum(std::span<const ParamVector> updates, std::size_t f, std::size_t select_count);

ParamVector coordinate_median(std::span<const ParamVector> updates);
ParamVector trimmed_mean(std::span<const ParamVector> updates, std::size_t trim_count);

struct Aggregate {
  ParamVector model;
  /// p-norm of each update delta after any clipping, in input order.
  std::vector<double> accepted_norms;
};

/// Server aggregation of full model updates. Robust rules act on deltas
/// (update - global) and replace norm-bounding unless stack_norm_bound is set.
Aggregate aggregate(const DefenseConfig& cfg, const ParamVector& global,
                    std::span<const ParamVector> updates, double clip, NormOrder p);

}  // namespace fedsim::defense
