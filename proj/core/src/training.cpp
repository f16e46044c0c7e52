#include "fedsim/training.hpp"

#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::fed {

std::vector<RoundRecord> run_training(const FedConfig& cfg, const TrainingSetup& setup,
                                      const attack::AttackPlan& plan,
                                      const defense::DefenseConfig& defense,
                                      const RoundObserver& observer) {
  cfg.validate();
  defense.validate(cfg.users_per_round);
  if (!setup.model || !setup.train || !setup.partition) {
    throw std::invalid_argument("run_training: incomplete setup");
  }
  if (setup.partition->num_users() != cfg.num_users) {
    throw std::invalid_argument("run_training: partition has " +
                                std::to_string(setup.partition->num_users()) + " shards, config " +
                                std::to_string(cfg.num_users) + " users");
  }
  if (!plan.attack_rounds.empty() && !setup.attacker) {
    throw std::invalid_argument("run_training: attack rounds scheduled without attacker data");
  }
  const Model& model = *setup.model;
  const std::size_t eval_every = std::max<std::size_t>(1, setup.eval_every);

  ParamVector global = setup.initial;
  std::vector<RoundRecord> records;
  for (std::size_t round = 0; round < cfg.total_rounds; ++round) {
    Rng sampling(derive_seed(cfg.seed, {kTagSampling, round}));
    const RoundParticipants who = sample_round_users(round, cfg, plan.attack_rounds, sampling);

    std::vector<ParamVector> updates;
    updates.reserve(who.size());
    for (std::size_t user : who.benign) {
      Rng local(derive_seed(cfg.seed, {kTagLocal, round, user}));
      updates.push_back(local_update(model, global, *setup.train, setup.partition->shards[user], cfg, local));
    }

    RoundRecord rec;
    rec.round = round;
    rec.attacker_present = who.attacker_present;
    if (who.attacker_present) {
      Rng arng(derive_seed(cfg.seed, {kTagAttack, round}));
      ParamVector crafted = attack::craft_update(model, global, *setup.attacker, plan, cfg, arng);
      rec.crafted_norm = (crafted - global).norm(cfg.norm_order);
      updates.push_back(std::move(crafted));
    }

    defense::Aggregate agg = defense::aggregate(defense, global, updates, cfg.clip_value, cfg.norm_order);
    global = std::move(agg.model);
    rec.update_norms = std::move(agg.accepted_norms);

    const bool evaluate = (round + 1) % eval_every == 0 || round + 1 == cfg.total_rounds;
    if (evaluate) {
      rec.main_acc = model.accuracy(global, setup.eval.main);
      rec.backdoor_acc = setup.eval.backdoor.size() == 0
                             ? 0.0
                             : model.target_rate(global, setup.eval.backdoor.features,
                                                 setup.eval.target_class);
    }
    if (observer) observer(rec, global);
    if (evaluate) records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace fedsim::fed
