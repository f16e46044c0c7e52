#include <benchmark/benchmark.h>

#include <random>

#include "fedsim/attacks.hpp"
#include "fedsim/autodiff.hpp"
#include "fedsim/data.hpp"
#include "fedsim/defenses.hpp"
#include "fedsim/fedavg.hpp"
#include "fedsim/model.hpp"

using namespace fedsim;

namespace {

// Desk-scale shapes: 7x7 inputs, one hidden layer of 32, 10 classes.
constexpr data::Geometry kGeom{7, 7, 1};

data::Dataset desk_data(std::size_t per_class, std::uint64_t seed) {
  const auto raw = data::generate_synthetic(10, 49, per_class, 6.0, seed);
  return data::Dataset(raw.features(), raw.labels(), 10, kGeom);
}

const Model& desk_model() {
  static const Model m(ModelSpec{49, {32}, 10, Activation::tanh});
  return m;
}

fed::FedConfig desk_fed() {
  fed::FedConfig cfg;
  cfg.local_steps = 1;
  cfg.local_lr = 0.3;
  cfg.batch_size = 32;
  return cfg;
}

}  // namespace

static void BM_LossBackward(benchmark::State& state) {
  const Model& m = desk_model();
  const auto ds = desk_data(static_cast<std::size_t>(state.range(0)) / 10, 1);
  const Batch b = ds.all();
  const ParamVector p = m.init_params(1);
  for (auto _ : state) {
    ad::Graph g;
    ad::Var v = g.variable(p.as_tensor());
    benchmark::DoNotOptimize(ad::gradients(m.loss_and_acc(v, b).loss, std::span<const ad::Var>(&v, 1)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossBackward)->Arg(32)->Arg(320);

static void BM_LocalUpdate(benchmark::State& state) {
  const Model& m = desk_model();
  const auto ds = desk_data(30, 2);
  std::vector<std::size_t> shard(ds.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;
  fed::FedConfig cfg = desk_fed();
  cfg.local_steps = 5;
  const ParamVector g = m.init_params(2);
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(fed::local_update(m, g, ds, shard, cfg, rng));
}
BENCHMARK(BM_LocalUpdate);

// One outer step of the anticipate attack: objective plus its gradient
// through k simulated rounds.
static void BM_AnticipateObjectiveGrad(benchmark::State& state) {
  const Model& m = desk_model();
  const auto d = attack::make_attacker_data(desk_data(20, 3), data::TriggerSpec{5, 5, 2, 1.0, 0});
  attack::AttackPlan plan;
  plan.algorithm = attack::Algorithm::anticipate;
  plan.k = static_cast<std::size_t>(state.range(0));
  plan.n_prime = 4;
  const fed::FedConfig cfg = desk_fed();
  const ParamVector g = m.init_params(4);
  Rng rng(5);
  for (auto _ : state) {
    ad::Graph graph;
    ad::Var theta = graph.variable(g.as_tensor());
    ad::Var loss = attack::anticipate_objective(m, theta, g, d, plan, cfg, rng);
    benchmark::DoNotOptimize(ad::gradients(loss, std::span<const ad::Var>(&theta, 1)));
  }
}
BENCHMARK(BM_AnticipateObjectiveGrad)->Arg(0)->Arg(3)->Arg(9)->Unit(benchmark::kMillisecond);

static void BM_Krum(benchmark::State& state) {
  const Model& m = desk_model();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<ParamVector> updates;
  for (int i = 0; i < state.range(0); ++i) {
    ParamVector p = m.zeros();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = noise(rng);
    updates.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(defense::krum(updates, 1));
}
BENCHMARK(BM_Krum)->Arg(10)->Arg(30);

static void BM_CoordinateMedian(benchmark::State& state) {
  const Model& m = desk_model();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<ParamVector> updates;
  for (int i = 0; i < 10; ++i) {
    ParamVector p = m.zeros();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = noise(rng);
    updates.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(defense::coordinate_median(updates));
}
BENCHMARK(BM_CoordinateMedian);

BENCHMARK_MAIN();
