#include "fedsim/fedavg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsim::fed {

void FedConfig::validate() const {
  if (num_users < 1) throw std::invalid_argument("fed.num_users must be >= 1");
  if (users_per_round < 1 || users_per_round > num_users) {
    throw std::invalid_argument("fed.users_per_round must lie in [1, num_users]");
  }
  if (local_steps < 1) throw std::invalid_argument("fed.local_steps must be >= 1");
  if (!(local_lr > 0.0)) throw std::invalid_argument("fed.local_lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("fed.batch_size must be >= 1");
  if (!(clip_value > 0.0)) throw std::invalid_argument("fed.clip_value must be > 0");
  if (total_rounds < 1) throw std::invalid_argument("fed.total_rounds must be >= 1");
}

double RoundRecord::mean_update_norm() const {
  if (update_norms.empty()) return 0.0;
  return std::accumulate(update_norms.begin(), update_norms.end(), 0.0) /
         static_cast<double>(update_norms.size());
}

BatchSampler::BatchSampler(std::span<const std::size_t> shard, std::size_t batch_size, Rng& rng)
    : order_(shard.begin(), shard.end()), batch_(std::min(batch_size, shard.size())), rng_(rng) {
  if (order_.empty()) throw std::invalid_argument("BatchSampler: empty shard");
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  if (pos_ + batch_ > order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
  pos_ += batch_;
  return out;
}

ParamVector local_update(const Model& model, const ParamVector& global, const data::Dataset& train,
                         std::span<const std::size_t> shard, const FedConfig& cfg, Rng& rng) {
  if (shard.empty()) throw std::invalid_argument("local_update: empty shard");
  BatchSampler sampler(shard, cfg.batch_size, rng);
  ParamVector theta = global;
  for (std::size_t step = 0; step < cfg.local_steps; ++step) {
    const auto idx = sampler.next();
    const Batch batch = train.batch(idx);
    ad::Graph g;
    ad::Var params = g.variable(theta.as_tensor());
    const LossAndAcc la = model.loss_and_acc(params, batch);
    const Tensor grad = ad::gradients(la.loss, std::span<const ad::Var>(&params, 1))[0];
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.local_lr * grad[i];
  }
  return theta;
}

ad::Var sgd_step_on_graph(const Model& model, ad::Var params, const Batch& batch, double lr) {
  const LossAndAcc la = model.loss_and_acc(params, batch);
  const ad::Var grad = ad::backward(la.loss, std::span<const ad::Var>(&params, 1), true)[0];
  return ad::sub(params, ad::scalar_mul(grad, lr));
}

void clip_delta_in_place(std::span<double> delta, double clip, NormOrder p) {
  if (p == NormOrder::linf) {
    for (double& v : delta) v = std::clamp(v, -clip, clip);
    return;
  }
  const double n = norm(delta, p);
  if (n <= clip) return;
  const double scale = clip / n;
  for (double& v : delta) v *= scale;
}

ParamVector clip_update(const ParamVector& update, const ParamVector& global, double clip,
                        NormOrder p) {
  ParamVector delta = update - global;
  clip_delta_in_place(delta.values(), clip, p);
  return global + delta;
}

ParamVector fed_avg_round(const ParamVector& global, std::span<const ParamVector> updates,
                          double clip, NormOrder p) {
  if (updates.empty()) throw std::invalid_argument("fed_avg_round: empty update list");
  ParamVector sum(global.layout());
  for (const ParamVector& u : updates) {
    ParamVector delta = u - global;
    clip_delta_in_place(delta.values(), clip, p);
    sum += delta;
  }
  sum *= 1.0 / static_cast<double>(updates.size());
  return global + sum;
}

RoundParticipants sample_round_users(std::size_t round_idx, const FedConfig& cfg,
                                     const std::set<std::size_t>& attack_rounds, Rng& rng) {
  RoundParticipants out;
  out.attacker_present = attack_rounds.contains(round_idx);
  const std::size_t benign = cfg.users_per_round - (out.attacker_present ? 1 : 0);
  std::vector<std::size_t> ids(cfg.num_users);
  std::iota(ids.begin(), ids.end(), 0);
  // Partial Fisher-Yates: the first `benign` entries are a uniform sample.
  for (std::size_t i = 0; i < benign; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  out.benign.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(benign));
  std::sort(out.benign.begin(), out.benign.end());
  return out;
}

}  // namespace fedsim::fed
