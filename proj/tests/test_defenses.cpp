#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fedsim/defenses.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedsim;
using defense::DefenseConfig;
using defense::Rule;

namespace {

std::shared_ptr<const ParamLayout> layout_of(std::size_t in) {
  return std::make_shared<const ParamLayout>(ModelSpec{in, {}, 2});
}

// Linear-model parameter layout with 2*in + 2 coordinates.
std::vector<ParamVector> random_updates(std::size_t n, std::size_t in, std::mt19937_64& rng, double scale = 1.0) {
  const auto layout = layout_of(in);
  std::vector<ParamVector> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(layout, fixture::random_vec(layout->size(), rng, -scale, scale));
  return out;
}

ParamVector filled(const std::shared_ptr<const ParamLayout>& layout, double v) {
  return ParamVector(layout, std::vector<double>(layout->size(), v));
}

std::vector<double> as_vec(const ParamVector& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace

TEST_CASE("krum picks the member of the tight cluster") {
  const auto l = layout_of(1);
  std::vector<ParamVector> u{filled(l, 0.0), filled(l, 0.1), filled(l, 0.2), filled(l, 0.15), filled(l, 9.0)};
  const auto scores = defense::krum_scores(u, 1);
  // n - f - 2 = 2 nearest neighbours, 4 coordinates each.
  CHECK(scores[1] == doctest::Approx(4 * (0.05 * 0.05 + 0.1 * 0.1)));
  CHECK(defense::krum(u, 1) == u[3]);
  CHECK_THROWS(defense::krum(std::span<const ParamVector>(u.data(), 4), 1));
}

TEST_CASE("krum scores agree with exhaustive search") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 40; ++t) {
    const std::size_t f = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2 * f + 3, 12)(rng);
    const auto u = random_updates(n, 2, rng);
    const auto got = defense::krum_scores(u, f);
    const auto want = oracle::krum_scores_bruteforce(u, f);
    for (std::size_t i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    CHECK(defense::krum(u, f) == u[oracle::lowest_scores(want, 1)[0]]);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, n - f)(rng);
    auto sel = defense::multi_krum_selection(u, f, m);
    auto ref = oracle::lowest_scores(want, m);
    CHECK(sel == ref);
  }
}

TEST_CASE("multi-krum edge cases") {
  std::mt19937_64 rng(2);
  const auto u = random_updates(7, 2, rng);
  CHECK(defense::multi_krum(u, 2, 1) == defense::krum(u, 2));
  ParamVector mean(u[0].layout());
  for (const auto& p : u) mean += p;
  mean *= 1.0 / 7.0;
  const ParamVector all = defense::multi_krum(u, 0, 7);
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(all[i] == doctest::Approx(mean[i]).epsilon(1e-12));
  CHECK_THROWS(defense::multi_krum(u, 2, 6));
  CHECK_THROWS(defense::multi_krum(u, 2, 0));
}

TEST_CASE("median and trimmed mean examples") {
  const auto l = layout_of(1);
  std::vector<ParamVector> u{filled(l, 1.0), filled(l, 5.0), filled(l, 2.0), filled(l, 100.0)};
  CHECK(defense::coordinate_median(u) == filled(l, 3.5));
  CHECK(defense::trimmed_mean(u, 1) == filled(l, 3.5));
  CHECK(defense::trimmed_mean(u, 0) == filled(l, 27.0));
  u.pop_back();
  CHECK(defense::coordinate_median(u) == filled(l, 2.0));
  CHECK_THROWS(defense::trimmed_mean(u, 2));
  CHECK_THROWS(defense::coordinate_median(std::span<const ParamVector>{}));
}

TEST_CASE("coordinate rules agree with the sorting oracle") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 11)(rng);
    const auto u = random_updates(n, 3, rng);
    const auto med = as_vec(defense::coordinate_median(u));
    const auto want = oracle::median(u);
    for (std::size_t i = 0; i < med.size(); ++i) CHECK(med[i] == want[i]);
    const std::size_t beta = std::uniform_int_distribution<std::size_t>(0, (n - 1) / 2)(rng);
    const auto tm = as_vec(defense::trimmed_mean(u, beta));
    const auto tw = oracle::trimmed_mean(u, beta);
    for (std::size_t i = 0; i < tm.size(); ++i) CHECK(tm[i] == doctest::Approx(tw[i]).epsilon(1e-12));

    for (std::size_t i = 0; i < med.size(); ++i) {
      const auto col = oracle::column(u, i);
      CHECK(med[i] >= col.front());
      CHECK(med[i] <= col.back());
      CHECK(tm[i] >= col.front());
      CHECK(tm[i] <= col.back());
    }
  }
}

TEST_CASE("rules are invariant to update order") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    auto u = random_updates(9, 2, rng);
    const ParamVector k = defense::krum(u, 2);
    const ParamVector mk = defense::multi_krum(u, 2, 4);
    const ParamVector md = defense::coordinate_median(u);
    const ParamVector tm = defense::trimmed_mean(u, 2);
    std::shuffle(u.begin(), u.end(), rng);
    CHECK(defense::krum(u, 2) == k);
    CHECK(defense::coordinate_median(u) == md);
    const ParamVector mk2 = defense::multi_krum(u, 2, 4), tm2 = defense::trimmed_mean(u, 2);
    for (std::size_t i = 0; i < k.size(); ++i) {
      CHECK(mk2[i] == doctest::Approx(mk[i]).epsilon(1e-12));
      CHECK(tm2[i] == doctest::Approx(tm[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("median and trimmed mean are monotone in each input") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    auto u = random_updates(6, 2, rng);
    const auto med = as_vec(defense::coordinate_median(u));
    const auto tm = as_vec(defense::trimmed_mean(u, 1));
    const std::size_t who = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    for (std::size_t i = 0; i < u[who].size(); ++i) u[who][i] += 0.5;
    const auto med2 = as_vec(defense::coordinate_median(u));
    const auto tm2 = as_vec(defense::trimmed_mean(u, 1));
    for (std::size_t i = 0; i < med.size(); ++i) {
      CHECK(med2[i] >= med[i]);
      CHECK(tm2[i] >= tm[i] - 1e-15);
    }
  }
}

TEST_CASE("robust rules resist a minority of outliers") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const std::size_t f = 2;
    auto honest = random_updates(8, 2, rng, 0.1);
    auto bad = random_updates(f, 2, rng, 1.0);
    for (auto& b : bad) b *= 1000.0;
    std::vector<ParamVector> all = honest;
    all.insert(all.end(), bad.begin(), bad.end());

    double hi = 0.0;
    for (const auto& h : honest) hi = std::max(hi, h.norm(NormOrder::linf));
    CHECK(defense::krum(all, f).norm(NormOrder::linf) <= hi);
    CHECK(defense::multi_krum(all, f, 6).norm(NormOrder::linf) <= hi);
    for (std::size_t i = 0; i < all[0].size(); ++i) {
      const auto col = oracle::column(honest, i);
      const double med = defense::coordinate_median(all)[i];
      const double tm = defense::trimmed_mean(all, f)[i];
      CHECK(med >= col.front());
      CHECK(med <= col.back());
      CHECK(tm >= col.front() - 1e-12);
      CHECK(tm <= col.back() + 1e-12);
    }
  }
}

TEST_CASE("aggregate acts on deltas and reports accepted norms") {
  const auto l = layout_of(1);
  const ParamVector g = filled(l, 10.0);
  std::vector<ParamVector> ups{filled(l, 10.5), filled(l, 11.0), filled(l, 40.0)};

  const auto nb = defense::aggregate(DefenseConfig{}, g, ups, 1.0, NormOrder::l2);
  // Deltas clipped to norm 1: the last two are (0.5, ...) each in 4 coordinates.
  REQUIRE(nb.accepted_norms.size() == 3);
  CHECK(nb.accepted_norms[0] == doctest::Approx(1.0));
  CHECK(nb.accepted_norms[2] == doctest::Approx(1.0));
  CHECK(nb.model[0] == doctest::Approx(10.0 + 0.5));

  DefenseConfig med;
  med.rule = Rule::median;
  const auto m = defense::aggregate(med, g, ups, 1.0, NormOrder::l2);
  CHECK(m.model == filled(l, 11.0));
  CHECK(m.accepted_norms[2] == doctest::Approx(60.0));
  med.stack_norm_bound = true;
  const auto ms = defense::aggregate(med, g, ups, 1.0, NormOrder::l2);
  CHECK(ms.model[0] == doctest::Approx(10.5));
}

TEST_CASE("defense validation") {
  DefenseConfig k;
  k.rule = Rule::krum;
  k.f = 2;
  CHECK_THROWS(k.validate(6));
  CHECK_NOTHROW(k.validate(7));
  k.rule = Rule::multi_krum;
  k.select_count = 6;
  CHECK_THROWS(k.validate(7));
  k.select_count = 5;
  CHECK_NOTHROW(k.validate(7));
  DefenseConfig t;
  t.rule = Rule::trimmed_mean;
  t.trim_count = 2;
  CHECK_THROWS(t.validate(4));
  CHECK_NOTHROW(t.validate(5));
  CHECK_NOTHROW(DefenseConfig{}.validate(1));
}
