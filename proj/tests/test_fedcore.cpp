#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "fedsim/config.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/fedavg.hpp"
#include "fedsim/training.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedsim;
using fed::FedConfig;

namespace {

// Plain vectors wrapped in a linear-model layout; pads with zeros to an
// even length of at least 4.
ParamVector vec_params(std::vector<double> v) {
  v.resize(std::max<std::size_t>(4, v.size() + v.size() % 2), 0.0);
  auto layout = std::make_shared<const ParamLayout>(ModelSpec{(v.size() - 2) / 2, {}, 2});
  return ParamVector(layout, std::move(v));
}

harness::ExperimentConfig small_config(std::size_t rounds) {
  return harness::parse_config_text(R"({
    "seeds": [0],
    "dataset": {"num_classes": 5, "input_dim": 16, "train_per_class": 100, "test_per_class": 40,
                "attacker_size": 50, "trigger": {"size": 1}},
    "model": {"hidden": [8]},
    "fed": {"num_users": 20, "users_per_round": 5, "total_rounds": )" + std::to_string(rounds) + "}}");
}

std::vector<fed::RoundRecord> train(const harness::ExperimentConfig& cfg, std::uint64_t seed) {
  const harness::SeedWorld w = harness::build_world(cfg, seed);
  fed::TrainingSetup setup{&w.model, &w.train, &w.partition, &w.attacker, w.eval, w.initial, 1};
  FedConfig fc = cfg.fed;
  fc.seed = seed;
  return fed::run_training(fc, setup, cfg.attack, cfg.defense);
}

}  // namespace

TEST_CASE("zero learning rate leaves the model unchanged") {
  const data::Dataset ds = data::generate_synthetic(3, 4, 10, 2.0, 1);
  const Model m(ModelSpec{4, {3}, 3});
  const ParamVector g = m.init_params(1);
  std::vector<std::size_t> shard(ds.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;
  FedConfig cfg;
  cfg.local_lr = 0.0;
  Rng rng(1);
  CHECK(fed::local_update(m, g, ds, shard, cfg, rng) == g);
}

TEST_CASE("one local step on a full-shard batch is a gradient step") {
  const data::Dataset ds = data::generate_synthetic(3, 4, 6, 2.0, 2);
  const ModelSpec spec{4, {3}, 3};
  const Model m(spec);
  const ParamVector g = m.init_params(3);
  std::vector<std::size_t> shard(ds.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = i;
  FedConfig cfg;
  cfg.local_steps = 1;
  cfg.local_lr = 0.5;
  cfg.batch_size = 1000;
  Rng rng(4);
  const ParamVector got = fed::local_update(m, g, ds, shard, cfg, rng);

  const auto rows = fixture::rows_of(ds.features());
  const std::vector<double> g0(g.values().begin(), g.values().end());
  const auto fd = oracle::central_diff(
      [&](const oracle::Vec& q) { return oracle::mean_cross_entropy(oracle::mlp_logits(spec, q, rows), ds.labels()); },
      g0);
  for (std::size_t i = 0; i < g0.size(); ++i) CHECK(got[i] == doctest::Approx(g0[i] - 0.5 * fd[i]).epsilon(1e-7));
}

TEST_CASE("local update is deterministic in its stream") {
  const data::Dataset ds = data::generate_synthetic(3, 4, 40, 2.0, 2);
  const Model m(ModelSpec{4, {3}, 3});
  const ParamVector g = m.init_params(3);
  std::vector<std::size_t> shard{0, 3, 5, 9, 11, 20, 33, 41, 60, 77, 90, 100};
  FedConfig cfg;
  cfg.batch_size = 5;
  Rng a(8), b(8);
  CHECK(fed::local_update(m, g, ds, shard, cfg, a) == fed::local_update(m, g, ds, shard, cfg, b));
}

TEST_CASE("batch sampler draws without replacement within an epoch") {
  const std::vector<std::size_t> shard{10, 11, 12, 13, 14, 15, 16};
  Rng rng(2);
  fed::BatchSampler s(shard, 3, rng);
  std::vector<std::size_t> first = s.next();
  std::vector<std::size_t> second = s.next();
  CHECK(first.size() == 3);
  first.insert(first.end(), second.begin(), second.end());
  std::sort(first.begin(), first.end());
  CHECK(std::adjacent_find(first.begin(), first.end()) == first.end());
  fed::BatchSampler small(shard, 100, rng);
  CHECK(small.next().size() == shard.size());
}

TEST_CASE("clip examples") {
  const ParamVector g = vec_params({1.0, 1.0});
  const ParamVector u = vec_params({4.0, 5.0});  // delta (3, 4)
  auto delta = [&](const ParamVector& c) { return std::vector<double>{c[0] - 1.0, c[1] - 1.0, c[2], c[3]}; };

  auto l2 = delta(fed::clip_update(u, g, 1.0, NormOrder::l2));
  CHECK(l2[0] == doctest::Approx(0.6));
  CHECK(l2[1] == doctest::Approx(0.8));
  auto l1 = delta(fed::clip_update(u, g, 1.0, NormOrder::l1));
  CHECK(l1[0] == doctest::Approx(3.0 / 7.0));
  CHECK(l1[1] == doctest::Approx(4.0 / 7.0));
  auto li = delta(fed::clip_update(u, g, 3.5, NormOrder::linf));
  CHECK(li[0] == doctest::Approx(3.0));
  CHECK(li[1] == doctest::Approx(3.5));

  CHECK(fed::clip_update(u, g, 5.0, NormOrder::l2) == u);
  CHECK(fed::clip_update(u, g, 10.0, NormOrder::l2) == u);
}

TEST_CASE("clipped norms never exceed the bound") {
  std::mt19937_64 rng(3);
  for (NormOrder p : {NormOrder::l1, NormOrder::l2, NormOrder::linf}) {
    for (int t = 0; t < 100; ++t) {
      std::vector<double> d = fixture::random_vec(20, rng, -3, 3);
      const double c = std::uniform_real_distribution<double>(0.01, 5.0)(rng);
      fed::clip_delta_in_place(d, c, p);
      CHECK(norm(d, p) <= c * (1 + 1e-12));
    }
  }
}

TEST_CASE("fed_avg examples") {
  const ParamVector g = vec_params({0.0, 0.0});
  const std::vector<ParamVector> ups{vec_params({2.0, 0.0}), vec_params({0.0, 2.0})};
  const ParamVector avg = fed::fed_avg_round(g, ups, 10.0, NormOrder::l2);
  CHECK(avg[0] == 1.0);
  CHECK(avg[1] == 1.0);
  const ParamVector clipped = fed::fed_avg_round(g, ups, 1.0, NormOrder::l2);
  CHECK(clipped[0] == doctest::Approx(0.5));
  CHECK_THROWS(fed::fed_avg_round(g, std::span<const ParamVector>{}, 1.0, NormOrder::l2));
}

TEST_CASE("one participant moves the global model by at most C/n") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const ParamVector g = vec_params(fixture::random_vec(6, rng));
    std::vector<ParamVector> ups(n, g);
    ups[0] = vec_params(fixture::random_vec(6, rng, -100, 100));
    const ParamVector avg = fed::fed_avg_round(g, ups, 0.7, NormOrder::l2);
    CHECK((avg - g).norm(NormOrder::l2) <= 0.7 / static_cast<double>(n) + 1e-12);
  }
}

TEST_CASE("fed_avg is invariant to update order") {
  std::mt19937_64 rng(6);
  const ParamVector g = vec_params(fixture::random_vec(6, rng));
  std::vector<ParamVector> ups;
  for (int i = 0; i < 6; ++i) ups.push_back(vec_params(fixture::random_vec(6, rng, -2, 2)));
  const ParamVector a = fed::fed_avg_round(g, ups, 1.0, NormOrder::l2);
  std::shuffle(ups.begin(), ups.end(), rng);
  const ParamVector b = fed::fed_avg_round(g, ups, 1.0, NormOrder::l2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("round sampling") {
  FedConfig cfg;
  cfg.num_users = 500;
  cfg.users_per_round = 100;
  Rng rng(7);
  const auto none = fed::sample_round_users(0, cfg, {}, rng);
  CHECK(none.benign.size() == 100);
  CHECK_FALSE(none.attacker_present);
  CHECK(std::is_sorted(none.benign.begin(), none.benign.end()));
  CHECK(std::adjacent_find(none.benign.begin(), none.benign.end()) == none.benign.end());
  CHECK(none.benign.back() < 500);

  const auto att = fed::sample_round_users(3, cfg, {3}, rng);
  CHECK(att.attacker_present);
  CHECK(att.benign.size() == 99);
  CHECK(att.size() == 100);

  cfg.num_users = 10;
  cfg.users_per_round = 10;
  const auto all = fed::sample_round_users(0, cfg, {}, rng);
  CHECK(all.benign == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("users are sampled uniformly") {
  FedConfig cfg;
  cfg.num_users = 50;
  cfg.users_per_round = 10;
  Rng rng(9);
  std::vector<int> hits(50, 0);
  const int rounds = 2000;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t u : fed::sample_round_users(static_cast<std::size_t>(r), cfg, {}, rng).benign) ++hits[u];
  }
  // Each count is Binomial(2000, 0.2): mean 400, sd about 17.9.
  for (int h : hits) CHECK(std::abs(h - 400) < 90);
}

TEST_CASE("benign training learns, stays clean of the backdoor, and is reproducible") {
  const harness::ExperimentConfig cfg = small_config(150);
  const auto a = train(cfg, 0);
  const auto b = train(cfg, 0);
  REQUIRE(a.size() == 150);
  for (std::size_t r = 0; r < a.size(); ++r) {
    CHECK(a[r].round == r);
    CHECK(a[r].main_acc == b[r].main_acc);
    CHECK(a[r].backdoor_acc == b[r].backdoor_acc);
    CHECK(a[r].update_norms == b[r].update_norms);
    CHECK_FALSE(a[r].attacker_present);
    for (double n : a[r].update_norms) CHECK(n <= cfg.fed.clip_value * (1 + 1e-12));
  }
  CHECK(a.back().main_acc >= 0.9);
  // No attack: the backdoor rate stays near chance among 5 classes.
  CHECK(a.back().backdoor_acc <= 0.2 + 0.1);

  auto window_mean = [&](std::size_t start) {
    double s = 0.0;
    for (std::size_t r = start; r < start + 50; ++r) s += a[r].main_acc;
    return s / 50.0;
  };
  CHECK(window_mean(50) >= window_mean(0) - 0.02);
  CHECK(window_mean(100) >= window_mean(50) - 0.02);
}

TEST_CASE("fed config validation") {
  FedConfig cfg;
  cfg.users_per_round = cfg.num_users + 1;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.clip_value = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  CHECK_NOTHROW(cfg.validate());
}
