#include <cmath>
#include <random>

#include "doctest.h"
#include "fedsim/model.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedsim;

TEST_CASE("init_params is deterministic, fan-in scaled, biases zero") {
  const Model m(ModelSpec{5, {4, 3}, 2, Activation::tanh});
  const ParamVector a = m.init_params(9);
  CHECK(a == m.init_params(9));
  CHECK_FALSE(a == m.init_params(10));
  const auto blocks = m.unflatten(a);
  REQUIRE(blocks.size() == 6);
  const std::size_t fan_in[] = {5, 4, 3};
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[l]));
    for (double w : blocks[2 * l].data()) CHECK(std::abs(w) <= bound);
    for (double b : blocks[2 * l + 1].data()) CHECK(b == 0.0);
  }
}

TEST_CASE("parameter counts") {
  CHECK(Model(ModelSpec{7, {}, 3}).num_params() == 7 * 3 + 3);
  CHECK(Model(ModelSpec{2, {4}, 2}).num_params() == 2 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS(Model(ModelSpec{0, {}, 2}));
  CHECK_THROWS(Model(ModelSpec{3, {}, 1}));
  CHECK_THROWS(Model(ModelSpec{3, {0}, 2}));
}

TEST_CASE("zero params give zero logits") {
  std::mt19937_64 rng(1);
  const Model m(ModelSpec{3, {4}, 5});
  const Tensor logits = m.logits(m.zeros(), fixture::random_tensor({6, 3}, rng));
  CHECK(logits.shape() == Shape{6, 5});
  for (double v : logits.data()) CHECK(v == 0.0);
}

TEST_CASE("linear model with an identity slice reproduces features") {
  const Model m(ModelSpec{3, {}, 3});
  ParamVector p = m.zeros();
  for (std::size_t i = 0; i < 3; ++i) p[i * 3 + i] = 1.0;
  const Tensor x({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  CHECK(m.logits(p, x) == x);
}

TEST_CASE("2-2-2 forward matches the straight-line oracle") {
  std::mt19937_64 rng(2);
  for (Activation act : {Activation::tanh, Activation::relu}) {
    const ModelSpec spec{2, {2}, 2, act};
    const Model m(spec);
    const ParamVector p(m.layout(), fixture::random_vec(m.num_params(), rng));
    const Tensor x = fixture::random_tensor({4, 2}, rng);
    const Tensor got = m.logits(p, x);
    const auto want = oracle::mlp_logits(spec, std::vector<double>(p.values().begin(), p.values().end()),
                                         fixture::rows_of(x));
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(got.at(r, c) - want[r][c]) <= 1e-12);
    }
  }
}

TEST_CASE("loss and accuracy") {
  const Model m(ModelSpec{10, {}, 10});
  // Zero weights: uniform logits.
  Tensor x({3, 10}, 0.5);
  ad::Graph g;
  auto out = m.loss_and_acc(g.constant(m.zeros().as_tensor()), fixture::make_batch(x, {1, 2, 3}));
  CHECK(out.loss.value().item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // Identity weights on one-hot inputs: perfectly separated.
  const Model id(ModelSpec{3, {}, 3});
  ParamVector p = id.zeros();
  for (std::size_t i = 0; i < 3; ++i) p[i * 3 + i] = 20.0;
  const Tensor onehot({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  ad::Graph h;
  auto sep = id.loss_and_acc(h.constant(p.as_tensor()), fixture::make_batch(onehot, {0, 1, 2}));
  CHECK(sep.accuracy == 1.0);
  CHECK(sep.loss.value().item() > 0.0);

  ad::Graph k;
  CHECK_THROWS(id.loss_and_acc(k.constant(p.as_tensor()), fixture::make_batch(onehot, {0, 1, 3})));
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(3);
  const ModelSpec spec{3, {4}, 3, Activation::tanh};
  const Model m(spec);
  const Tensor x = fixture::random_tensor({5, 3}, rng);
  const std::vector<int> y = fixture::random_labels(5, 3, rng);
  const Batch batch = fixture::make_batch(x, y);
  const ParamVector p(m.layout(), fixture::random_vec(m.num_params(), rng));

  ad::Graph g;
  ad::Var v = g.variable(p.as_tensor());
  const Tensor grad = ad::gradients(m.loss_and_acc(v, batch).loss, std::span<const ad::Var>(&v, 1))[0];
  const auto fd = oracle::central_diff(
      [&](const oracle::Vec& q) { return oracle::mean_cross_entropy(oracle::mlp_logits(spec, q, fixture::rows_of(x)), y); },
      std::vector<double>(p.values().begin(), p.values().end()));
  CHECK(oracle::max_rel_err(grad.values(), fd) <= 1e-4);
}

TEST_CASE("flatten and unflatten round-trip exactly") {
  std::mt19937_64 rng(4);
  const Model m(ModelSpec{4, {3, 2}, 3});
  const ParamVector p(m.layout(), fixture::random_vec(m.num_params(), rng));
  const auto blocks = m.unflatten(p);
  CHECK(m.flatten(blocks) == p);
}

TEST_CASE("forward is pure") {
  std::mt19937_64 rng(5);
  const Model m(ModelSpec{4, {3}, 3});
  const ParamVector p = m.init_params(1);
  const Tensor x = fixture::random_tensor({7, 4}, rng);
  CHECK(m.logits(p, x) == m.logits(p, x));
}

TEST_CASE("loss is positive for finite logits") {
  std::mt19937_64 rng(6);
  const Model m(ModelSpec{3, {}, 4});
  for (int t = 0; t < 20; ++t) {
    const ParamVector p(m.layout(), fixture::random_vec(m.num_params(), rng, -5, 5));
    ad::Graph g;
    auto out = m.loss_and_acc(g.constant(p.as_tensor()),
                              fixture::make_batch(fixture::random_tensor({6, 3}, rng), fixture::random_labels(6, 4, rng)));
    CHECK(out.loss.value().item() > 0.0);
  }
}

TEST_CASE("param vector arithmetic requires identical layouts") {
  const Model a(ModelSpec{4, {}, 2});
  const Model b(ModelSpec{1, {2}, 2});
  const ParamVector pa = a.init_params(0);
  const ParamVector pb = b.init_params(0);
  CHECK(pa.size() == pb.size());
  CHECK_FALSE(pa.compatible(pb));
  CHECK_THROWS_AS(pa + pb, std::invalid_argument);
  CHECK((pa - pa).norm(NormOrder::l2) == 0.0);
}

TEST_CASE("norms") {
  const std::vector<double> v{3, -4};
  CHECK(norm(v, NormOrder::l1) == 7.0);
  CHECK(norm(v, NormOrder::l2) == 5.0);
  CHECK(norm(v, NormOrder::linf) == 4.0);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax_accuracy(Tensor({1, 3}, {1, 1, 0}), {0}) == 1.0);
  CHECK(argmax_accuracy(Tensor({1, 3}, {1, 1, 0}), {1}) == 0.0);
}
