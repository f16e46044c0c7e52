#include "fedsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedsim::attack {

void AttackPlan::validate() const {
  if (uses_anticipation() && k >= 1 && n_prime < 1) {
    throw std::invalid_argument("attack.n_prime must be >= 1 when k >= 1");
  }
  if (m_prime < 1) throw std::invalid_argument("attack.m_prime must be >= 1");
  if (!(attacker_lr > 0.0)) throw std::invalid_argument("attack.attacker_lr must be > 0");
  if (clean_loss_weight < 0.0) throw std::invalid_argument("attack.clean_loss_weight must be >= 0");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) {
    throw std::invalid_argument("attack.mask_ratio must lie in [0, 1)");
  }
}

AttackerData make_attacker_data(const data::Dataset& clean, const data::TriggerSpec& trigger) {
  return AttackerData{clean, data::make_backdoor_set(clean, trigger, /*exclude_target=*/false)};
}

namespace {

using Objective = std::function<ad::Var(ad::Var theta_mal, Rng& rng)>;

ad::Var greedy_loss(const Model& model, ad::Var theta, const Batch& backdoor, const Batch& clean,
                    double clean_weight) {
  ad::Var loss = model.loss_and_acc(theta, backdoor).loss;
  if (clean_weight > 0.0) {
    loss = ad::add(loss, ad::scalar_mul(model.loss_and_acc(theta, clean).loss, clean_weight));
  }
  return loss;
}

// Projected first-order optimization of the malicious delta inside the
// p-norm ball of radius C, followed by rescaling to norm exactly C.
ParamVector optimize_delta(const ParamVector& global, const AttackPlan& plan,
                           const fed::FedConfig& cfg, const std::vector<bool>* mask, Rng& rng,
                           const Objective& objective, const char* name) {
  const std::size_t d = global.size();
  std::vector<double> delta(d, 0.0);
  std::vector<double> m1(d, 0.0), m2(d, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t step = 0; step < plan.m_prime; ++step) {
    Tensor grad;
    try {
      ad::Graph g;
      std::vector<double> current(global.values().begin(), global.values().end());
      for (std::size_t i = 0; i < d; ++i) current[i] += delta[i];
      ad::Var theta = g.variable(Tensor::vector(std::move(current)));
      ad::Var loss = objective(theta, rng);
      grad = ad::gradients(loss, std::span<const ad::Var>(&theta, 1))[0];
      if (!grad.all_finite()) throw ad::NumericError("gradient is non-finite");
    } catch (const ad::NumericError& e) {
      throw AttackError(std::string(name) + ": optimization step " + std::to_string(step) +
                        " aborted: " + e.what());
    }
    if (mask) {
      for (std::size_t i = 0; i < d; ++i) {
        if ((*mask)[i]) grad[i] = 0.0;
      }
    }
    if (plan.optimizer == Optimizer::adam) {
      b1t *= beta1;
      b2t *= beta2;
      for (std::size_t i = 0; i < d; ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m1[i] / (1.0 - b1t);
        const double vhat = m2[i] / (1.0 - b2t);
        delta[i] -= plan.attacker_lr * mhat / (std::sqrt(vhat) + eps);
      }
    } else {
      for (std::size_t i = 0; i < d; ++i) delta[i] -= plan.attacker_lr * grad[i];
    }
    fed::clip_delta_in_place(delta, cfg.clip_value, cfg.norm_order);
  }

  const double n = norm(delta, cfg.norm_order);
  ParamVector out = global;
  if (n > 0.0) {
    const double scale = cfg.clip_value / n;
    for (std::size_t i = 0; i < d; ++i) out[i] += delta[i] * scale;
  }
  return out;
}

std::vector<bool> mask_for(const Model& model, const ParamVector& global, const AttackerData& data,
                           const AttackPlan& plan) {
  if (!plan.uses_mask()) return {};
  return neurotoxin_mask(clean_gradient(model, global, data.clean).values(), plan.mask_ratio);
}

// Random subset of min(b, n) rows without replacement.
Batch draw_batch(const data::Dataset& ds, std::size_t b, Rng& rng) {
  const std::size_t n = ds.size();
  const std::size_t take = std::min(b, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  return ds.batch(idx);
}

Batch draw_noise_batch(std::size_t b, std::size_t dim, std::size_t classes, Rng& rng) {
  std::uniform_real_distribution<double> feature(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  Tensor x(Shape{b, dim});
  for (double& v : x.data()) v = feature(rng);
  auto labels = std::make_shared<std::vector<int>>(b);
  for (int& y : *labels) y = label(rng);
  return Batch{std::move(x), std::move(labels)};
}

Batch draw_simulated_batch(const data::Dataset& clean, const AttackPlan& plan,
                           const fed::FedConfig& cfg, Rng& rng) {
  if (plan.noise_modeling) {
    return draw_noise_batch(std::min(cfg.batch_size, std::max<std::size_t>(clean.size(), 1)),
                            clean.dim(), clean.num_classes(), rng);
  }
  return draw_batch(clean, cfg.batch_size, rng);
}

}  // namespace

ParamVector clean_gradient(const Model& model, const ParamVector& global, const data::Dataset& clean) {
  ad::Graph g;
  ad::Var theta = g.variable(global.as_tensor());
  ad::Var loss = model.loss_and_acc(theta, clean.all()).loss;
  Tensor grad = ad::gradients(loss, std::span<const ad::Var>(&theta, 1))[0];
  return ParamVector(global.layout(), grad.values());
}

std::vector<bool> neurotoxin_mask(std::span<const double> grad_estimate, double mask_ratio) {
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) {
    throw std::invalid_argument("neurotoxin_mask: mask_ratio must lie in [0, 1)");
  }
  const std::size_t d = grad_estimate.size();
  const auto count = static_cast<std::size_t>(std::floor(mask_ratio * static_cast<double>(d)));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(grad_estimate[a]) > std::abs(grad_estimate[b]);
  });
  std::vector<bool> mask(d, false);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = true;
  return mask;
}

ParamVector baseline_attack(const Model& model, const ParamVector& global, const AttackerData& data,
                            const AttackPlan& plan, const fed::FedConfig& cfg, Rng& rng) {
  const Batch backdoor = data.backdoored.all();
  const Batch clean = data.clean.all();
  const auto mask = mask_for(model, global, data, plan);
  const Objective objective = [&](ad::Var theta, Rng&) {
    return greedy_loss(model, theta, backdoor, clean, plan.clean_loss_weight);
  };
  return optimize_delta(global, plan, cfg, mask.empty() ? nullptr : &mask, rng, objective,
                        "baseline_attack");
}

std::vector<ad::Var> simulate_rounds(const Model& model, ad::Var theta_mal,
                                     const ParamVector& global, const data::Dataset& clean,
                                     const AttackPlan& plan, const fed::FedConfig& cfg,
                                     std::size_t rounds, Rng& rng) {
  if (rounds == 0) return {};
  if (plan.n_prime < 1) throw std::invalid_argument("simulate_rounds: n_prime must be >= 1");
  ad::Graph& g = theta_mal.graph();
  const double lr = cfg.local_lr;
  const double n_prime = static_cast<double>(plan.n_prime);
  std::vector<ad::Var> thetas;
  thetas.reserve(rounds);

  // Round 0: modeled users start from the global model and do not depend on
  // theta_mal, so their updates are plain values.
  {
    ParamVector benign_sum(global.layout());
    for (std::size_t u = 0; u < plan.n_prime; ++u) {
      ParamVector local = global;
      for (std::size_t s = 0; s < plan.sim_local_steps; ++s) {
        const Batch batch = draw_simulated_batch(clean, plan, cfg, rng);
        ad::Graph step_graph;
        ad::Var p = step_graph.variable(local.as_tensor());
        const Tensor grad =
            ad::gradients(model.loss_and_acc(p, batch).loss, std::span<const ad::Var>(&p, 1))[0];
        for (std::size_t i = 0; i < local.size(); ++i) local[i] -= lr * grad[i];
      }
      benign_sum += local;
    }
    ad::Var benign = g.constant(benign_sum.as_tensor());
    ad::Var theta1;
    if (plan.exact_n_weighting) {
      const double n = static_cast<double>(cfg.users_per_round);
      theta1 = ad::add(ad::scalar_mul(theta_mal, 1.0 / n),
                       ad::scalar_mul(benign, (n - 1.0) / (n * n_prime)));
    } else {
      theta1 = ad::scalar_mul(ad::add(theta_mal, benign), 1.0 / (n_prime + 1.0));
    }
    thetas.push_back(theta1);
  }

  for (std::size_t i = 1; i < rounds; ++i) {
    const ad::Var start = thetas.back();
    ad::Var sum;
    for (std::size_t u = 0; u < plan.n_prime; ++u) {
      ad::Var local = start;
      for (std::size_t s = 0; s < plan.sim_local_steps; ++s) {
        local = fed::sgd_step_on_graph(model, local, draw_simulated_batch(clean, plan, cfg, rng), lr);
      }
      sum = sum.valid() ? ad::add(sum, local) : local;
    }
    thetas.push_back(ad::scalar_mul(sum, 1.0 / n_prime));
  }
  return thetas;
}

ad::Var anticipate_objective(const Model& model, ad::Var theta_mal, const ParamVector& global,
                             const AttackerData& data, const AttackPlan& plan,
                             const fed::FedConfig& cfg, Rng& rng) {
  const Batch backdoor = data.backdoored.all();
  const Batch clean = data.clean.all();
  if (plan.k == 0) return greedy_loss(model, theta_mal, backdoor, clean, plan.clean_loss_weight);

  std::size_t horizon = plan.k;
  std::size_t first = 1;
  if (plan.variant == Variant::random_prefix || plan.variant == Variant::random_step) {
    std::uniform_int_distribution<std::size_t> pick(1, plan.k);
    horizon = pick(rng);
  }
  if (plan.variant == Variant::last_step || plan.variant == Variant::random_step) first = horizon;

  const auto thetas = simulate_rounds(model, theta_mal, global, data.clean, plan, cfg, horizon, rng);
  ad::Var total;
  for (std::size_t i = first; i <= horizon; ++i) {
    const ad::Var term = greedy_loss(model, thetas[i - 1], backdoor, clean, plan.clean_loss_weight);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

ParamVector anticipate_attack(const Model& model, const ParamVector& global,
                              const AttackerData& data, const AttackPlan& plan,
                              const fed::FedConfig& cfg, Rng& rng) {
  if (plan.k == 0) return baseline_attack(model, global, data, plan, cfg, rng);
  const auto mask = mask_for(model, global, data, plan);
  const Objective objective = [&](ad::Var theta, Rng& r) {
    return anticipate_objective(model, theta, global, data, plan, cfg, r);
  };
  return optimize_delta(global, plan, cfg, mask.empty() ? nullptr : &mask, rng, objective,
                        "anticipate_attack");
}

ParamVector craft_update(const Model& model, const ParamVector& global, const AttackerData& data,
                         const AttackPlan& plan, const fed::FedConfig& cfg, Rng& rng) {
  if (plan.uses_anticipation()) return anticipate_attack(model, global, data, plan, cfg, rng);
  return baseline_attack(model, global, data, plan, cfg, rng);
}

}  // namespace fedsim::attack
