#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/data.hpp"
#include "fedsim/fedavg.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::attack {

enum class Algorithm { baseline, anticipate, neurotoxin, anticipate_neurotoxin };

/// Which simulated rounds contribute to the anticipate loss.
///   full          - every round 1..k
///   last_step     - round k only                  (variant A)
///   random_prefix - rounds 1..k', k' ~ U{1..k}    (variant B)
///   random_step   - round k' only, k' ~ U{1..k}   (variant C)
enum class Variant { full, last_step, random_prefix, random_step };

enum class Optimizer { adam, sgd };

struct AttackPlan {
  std::set<std::size_t> attack_rounds;
  Algorithm algorithm = Algorithm::baseline;
  std::size_t k = 0;
  std::size_t n_prime = 4;
  std::size_t m_prime = 20;
  std::size_t sim_local_steps = 1;
  double attacker_lr = 0.01;
  Variant variant = Variant::full;
  double clean_loss_weight = 1.0;
  double mask_ratio = 0.0;
  bool noise_modeling = false;
  Optimizer optimizer = Optimizer::adam;
  /// Weight round 0 with the server's true n instead of the modeled n'+1.
  bool exact_n_weighting = false;

  bool uses_anticipation() const {
    return algorithm == Algorithm::anticipate || algorithm == Algorithm::anticipate_neurotoxin;
  }
  bool uses_mask() const {
    return algorithm == Algorithm::neurotoxin || algorithm == Algorithm::anticipate_neurotoxin;
  }
  void validate() const;
};

/// D_c and D_b. Every backdoored row is a triggered copy of a clean row.
struct AttackerData {
  data::Dataset clean;
  data::Dataset backdoored;
};

AttackerData make_attacker_data(const data::Dataset& clean, const data::TriggerSpec& trigger);

/// Raised when an attack optimization step hits NaN/Inf or another numeric
/// failure; the message names the step.
class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Greedy attack: minimize L_adv(D_b) + lambda L(D_c) over theta_mal, then
/// send the delta rescaled to norm exactly C.
ParamVector baseline_attack(const Model& model, const ParamVector& global, const AttackerData& data,
                            const AttackPlan& plan, const fed::FedConfig& cfg, Rng& rng);

/// Unrolled FedAvg simulation seeded by theta_mal. Returns theta_1 .. theta_rounds
/// as graph nodes differentiable with respect to `theta_mal`.
std::vector<ad::Var> simulate_rounds(const Model& model, ad::Var theta_mal,
                                     const ParamVector& global, const data::Dataset& clean,
                                     const AttackPlan& plan, const fed::FedConfig& cfg,
                                     std::size_t rounds, Rng& rng);

/// Scalar anticipate objective for one outer step; draws k' (variants B and
/// C) and fresh simulation batches from `rng`.
ad::Var anticipate_objective(const Model& model, ad::Var theta_mal, const ParamVector& global,
                             const AttackerData& data, const AttackPlan& plan,
                             const fed::FedConfig& cfg, Rng& rng);

/// Anticipate attack. With k = 0 this is exactly baseline_attack.
ParamVector anticipate_attack(const Model& model, const ParamVector& global,
                              const AttackerData& data, const AttackPlan& plan,
                              const fed::FedConfig& cfg, Rng& rng);

/// True marks a masked (frozen) coordinate: the floor(ratio * d) largest
/// |grad_estimate| entries, lower index first on ties.
std::vector<bool> neurotoxin_mask(std::span<const double> grad_estimate, double mask_ratio);

/// Gradient of L(D_c, global): the attacker's estimate of benign update magnitudes.
ParamVector clean_gradient(const Model& model, const ParamVector& global, const data::Dataset& clean);

/// Dispatches on plan.algorithm.
ParamVector craft_update(const Model& model, const ParamVector& global, const AttackerData& data,
                         const AttackPlan& plan, const fed::FedConfig& cfg, Rng& rng);

}  // namespace fedsim::attack
