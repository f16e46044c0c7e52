#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/data.hpp"
#include "fedsim/defenses.hpp"
#include "fedsim/fedavg.hpp"
#include "fedsim/model.hpp"

namespace fedsim::fed {

struct EvalSets {
  Batch main;      // clean held-out examples
  Batch backdoor;  // triggered held-out examples, true class != target
  int target_class = 0;
};

struct TrainingSetup {
  const Model* model = nullptr;
  const data::Dataset* train = nullptr;
  const data::Partition* partition = nullptr;
  const attack::AttackerData* attacker = nullptr;  // required when attack rounds exist
  EvalSets eval;
  ParamVector initial;
  std::size_t eval_every = 1;
};

/// Called after each round's aggregation with the new global model.
using RoundObserver = std::function<void(const RoundRecord&, const ParamVector& global)>;

/// Runs cfg.total_rounds rounds of FedAvg: sample users, local updates (the
/// attacker substitutes its crafted update), aggregate, evaluate. Rounds are
/// evaluated every `eval_every` rounds and always at the final round.
std::vector<RoundRecord> run_training(const FedConfig& cfg, const TrainingSetup& setup,
                                      const attack::AttackPlan& plan,
                                      const defense::DefenseConfig& defense,
                                      const RoundObserver& observer = {});

}  // namespace fedsim::fed
