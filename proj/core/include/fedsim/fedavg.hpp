#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::fed {

struct FedConfig {
  std::size_t num_users = 100;
  std::size_t users_per_round = 10;
  std::size_t local_steps = 5;
  double local_lr = 0.3;
  std::size_t batch_size = 32;
  double clip_value = 1.0;
  NormOrder norm_order = NormOrder::l2;
  std::size_t total_rounds = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundRecord {
  std::size_t round = 0;
  double main_acc = 0.0;
  double backdoor_acc = 0.0;
  bool attacker_present = false;
  /// p-norm of each accepted update delta, benign users first, attacker last.
  std::vector<double> update_norms;
  /// p-norm of the attacker's crafted delta as sent, when present.
  std::optional<double> crafted_norm;

  double mean_update_norm() const;
};

/// Minibatches of min(batch_size, shard size) indices drawn without
/// replacement; the shard is reshuffled once fewer than a full batch remain.
class BatchSampler {
 public:
  BatchSampler(std::span<const std::size_t> shard, std::size_t batch_size, Rng& rng);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  Rng& rng_;
};

/// m steps of local SGD from `global` on the user's shard.
ParamVector local_update(const Model& model, const ParamVector& global, const data::Dataset& train,
                         std::span<const std::size_t> shard, const FedConfig& cfg, Rng& rng);

/// One differentiable SGD step: params - lr * grad L(batch, params), with the
/// gradient kept on the graph so later losses can differentiate through it.
ad::Var sgd_step_on_graph(const Model& model, ad::Var params, const Batch& batch, double lr);

/// Projects the delta (update - global) onto the p-norm ball of radius C by
/// scaling; for p = inf the delta is clamped coordinate-wise to [-C, C].
ParamVector clip_update(const ParamVector& update, const ParamVector& global, double clip,
                        NormOrder p);

/// Same projection applied directly to a delta.
void clip_delta_in_place(std::span<double> delta, double clip, NormOrder p);

/// Unweighted mean of the clipped updates.
ParamVector fed_avg_round(const ParamVector& global, std::span<const ParamVector> updates,
                          double clip, NormOrder p);

struct RoundParticipants {
  std::vector<std::size_t> benign;  // user ids, ascending
  bool attacker_present = false;

  std::size_t size() const { return benign.size() + (attacker_present ? 1 : 0); }
};

/// n participants without replacement; in attack rounds the attacker takes
/// one of the n slots.
RoundParticipants sample_round_users(std::size_t round_idx, const FedConfig& cfg,
                                     const std::set<std::size_t>& attack_rounds, Rng& rng);

}  // namespace fedsim::fed
