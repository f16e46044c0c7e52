#include <cmath>
#include <cstdlib>
#include <string>

#include "doctest.h"
#include "fedsim/config.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/metrics.hpp"
#include "support/fixtures.hpp"

using namespace fedsim;
using namespace fedsim::harness;

namespace {

fed::RoundRecord rec(std::size_t round, double backdoor, bool attacker = false, double main = 0.5) {
  fed::RoundRecord r;
  r.round = round;
  r.backdoor_acc = backdoor;
  r.main_acc = main;
  r.attacker_present = attacker;
  r.update_norms = {0.25, 0.75};
  return r;
}

std::string config_error(const std::string& text, const std::vector<Override>& overrides = {}) {
  try {
    parse_config_text(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

constexpr const char* kMinimal = R"({"seeds": [0], "dataset": {}})";

// Small data and a baseline attack; runs in well under a second.
std::string small_run(const std::string& seeds, const std::filesystem::path& out) {
  return R"({
    "tag": "small", "seeds": )" + seeds + R"(, "output_dir": ")" + out.string() + R"(",
    "dataset": {"num_classes": 4, "input_dim": 16, "train_per_class": 60, "test_per_class": 20,
                "attacker_size": 20, "trigger": {"size": 1}},
    "model": {"hidden": [6]},
    "fed": {"num_users": 12, "users_per_round": 4, "local_steps": 2, "total_rounds": 12},
    "attack": {"algorithm": "baseline", "m_prime": 5,
               "schedule": {"type": "random", "start": 2, "count": 3, "window": 8}}
  })";
}

}  // namespace

TEST_CASE("attack windows start at the first and last attack rounds") {
  const std::vector<fed::RoundRecord> r{rec(0, 0.0), rec(1, 0.5, true), rec(2, 1.0)};
  const SeedMetrics m = compute_metrics(r, {1});
  CHECK(*m.a_first == doctest::Approx(0.75));
  CHECK(*m.a_last == doctest::Approx(0.75));
  CHECK(m.peak_backdoor == 1.0);
  CHECK(m.final_backdoor == 1.0);
  CHECK(m.final_main == 0.5);

  const SeedMetrics end = compute_metrics(r, {2});
  CHECK(*end.a_first == 1.0);
  CHECK(*end.a_last == 1.0);

  const SeedMetrics two = compute_metrics(r, {0, 2});
  CHECK(*two.a_first == doctest::Approx(0.5));
  CHECK(*two.a_last == 1.0);

  const SeedMetrics none = compute_metrics(r, {});
  CHECK_FALSE(none.a_first.has_value());
  CHECK_FALSE(none.a_last.has_value());
  CHECK_THROWS(compute_metrics(std::span<const fed::RoundRecord>{}, {}));
}

TEST_CASE("summaries average present values") {
  SeedMetrics a, b;
  a.a_first = 0.2;
  a.final_main = 0.4;
  b.final_main = 0.6;
  const MetricsSummary s = summarize({a, b});
  CHECK(*s.mean.a_first == 0.2);
  CHECK_FALSE(s.mean.a_last.has_value());
  CHECK(s.mean.final_main == doctest::Approx(0.5));
}

TEST_CASE("fixed6 formatting") {
  CHECK(format_fixed6(0.1234567) == "0.123457");
  CHECK(format_fixed6(-0.0000001) == "0.000000");
  CHECK(format_fixed6(1.0) == "1.000000");
  CHECK(quantize6(quantize6(0.7777777)) == quantize6(0.7777777));
}

TEST_CASE("round CSV round-trips exactly") {
  const auto dir = fixture::scratch_dir("round_csv");
  std::vector<fed::RoundRecord> r{rec(0, quantize6(1.0 / 3.0)), rec(1, 0.5, true, quantize6(2.0 / 3.0))};
  write_round_csv(dir / "r.csv", r, 42);
  const RoundCsv back = read_round_csv(dir / "r.csv");
  CHECK(back.seed == 42);
  REQUIRE(back.records.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.records[i].round == r[i].round);
    CHECK(back.records[i].main_acc == r[i].main_acc);
    CHECK(back.records[i].backdoor_acc == r[i].backdoor_acc);
    CHECK(back.records[i].attacker_present == r[i].attacker_present);
    CHECK(back.records[i].mean_update_norm() == 0.5);
  }
  CHECK(fixture::read_text(dir / "r.csv").rfind(std::string(kRoundCsvHeader) + "\n", 0) == 0);

  fixture::write_text(dir / "bad.csv", "round,main\n");
  CHECK_THROWS_AS(read_round_csv(dir / "bad.csv"), CsvError);
  fixture::write_text(dir / "bad2.csv", std::string(kRoundCsvHeader) + "\n0,x,0,0,0,1\n");
  CHECK_THROWS_AS(read_round_csv(dir / "bad2.csv"), CsvError);
}

TEST_CASE("minimal config takes the documented defaults") {
  const ExperimentConfig c = parse_config_text(kMinimal);
  CHECK(c.seeds == std::vector<std::uint64_t>{0});
  CHECK(c.dataset.num_classes == 10);
  CHECK(c.dataset.input_dim == 49);
  CHECK(c.dataset.geometry == data::Geometry{7, 7, 1});
  CHECK(c.dataset.trigger.row == 5);
  CHECK(c.dataset.trigger.col == 5);
  CHECK(c.model.hidden_dims == std::vector<std::size_t>{32});
  CHECK(c.fed.num_users == 100);
  CHECK(c.fed.users_per_round == 10);
  CHECK(c.attack.k == 0);
  CHECK(c.schedule.type == ScheduleConfig::Type::none);
  CHECK(c.defense.rule == defense::Rule::norm_bound);
  CHECK(c.eval_every == 1);
  CHECK(c.attack.sim_local_steps == c.fed.local_steps);
}

TEST_CASE("config errors name the offending key") {
  const std::string base = R"({"seeds": [0], "dataset": {}, "attack": {"algorithm": "anticipate", "k": -1,
                                "schedule": {"type": "sequential", "start": 0, "count": 1}}})";
  CHECK(config_error(base).find("attack.k") != std::string::npos);
  CHECK(config_error(R"({"seeds": [0], "dataset": {}, "foo": 1})").find("foo") != std::string::npos);
  CHECK(config_error(R"({"seeds": [0], "dataset": {"alpha": "x"}})").find("dataset.alpha") != std::string::npos);
  CHECK(config_error(R"({"seeds": [0], "dataset": {}, "fed": {"num_users": 1.5}})").find("fed.num_users") !=
        std::string::npos);
  CHECK(config_error(R"({"dataset": {}})").find("seeds") != std::string::npos);
  CHECK(config_error(R"({"seeds": [1, 1], "dataset": {}})").find("seeds") != std::string::npos);
  CHECK(config_error("{not json").find("no error") == std::string::npos);
  CHECK(config_error(R"({"seeds": [0], "dataset": {}, "defense": {"rule": "krum", "f": 4}})").find("defense") !=
        std::string::npos);
  CHECK(config_error(R"({"seeds": [0], "dataset": {}, "fed": {"total_rounds": 10},
      "attack": {"algorithm": "baseline", "schedule": {"type": "sequential", "start": 5, "count": 6}}})")
            .find("attack.schedule") != std::string::npos);
  CHECK_THROWS_AS(parse_config("/nonexistent/fedsim.json"), ConfigError);
}

TEST_CASE("overrides") {
  const ExperimentConfig c = parse_config_text(kMinimal, {{"fed.local_lr", "0.5"}, {"k", "3"}, {"tag", "x"}});
  CHECK(c.fed.local_lr == 0.5);
  CHECK(c.attack.k == 3);
  CHECK(c.tag == "x");
  CHECK(resolve_key("k") == "attack.k");
  CHECK(resolve_key("fed.clip_value") == "fed.clip_value");
  CHECK_THROWS_AS(resolve_key("nope"), ConfigError);
  CHECK(config_error(kMinimal, {{"k", "-2"}}).find("attack.k") != std::string::npos);
}

TEST_CASE("schedules resolve inside their window") {
  ScheduleConfig s;
  s.type = ScheduleConfig::Type::sequential;
  s.start = 3;
  s.count = 4;
  CHECK(s.resolve(0, 20) == std::set<std::size_t>{3, 4, 5, 6});
  s.type = ScheduleConfig::Type::random;
  s.start = 10;
  s.window = 50;
  s.count = 20;
  const auto a = s.resolve(1, 100);
  CHECK(a.size() == 20);
  CHECK(*a.begin() >= 10);
  CHECK(*a.rbegin() < 60);
  CHECK(s.resolve(1, 100) == a);
  CHECK(s.resolve(2, 100) != a);
  s.type = ScheduleConfig::Type::fixed;
  s.rounds = {7, 2};
  CHECK(s.resolve(0, 10) == std::set<std::size_t>{2, 7});
}

TEST_CASE("runs are reproducible, seed-isolated and consistent with their CSVs") {
  const auto dir = fixture::scratch_dir("harness_runs");
  RunOptions sequential;
  sequential.threads = 0;
  const RunResult a = run_experiment(parse_config_text(small_run("[0, 1]", dir / "a")), sequential);
  RunOptions parallel;
  parallel.threads = 2;
  const RunResult b = run_experiment(parse_config_text(small_run("[0, 1]", dir / "b")), parallel);
  const RunResult solo = run_experiment(parse_config_text(small_run("[1]", dir / "c")), sequential);

  REQUIRE(a.seed_csvs.size() == 2);
  CHECK(a.seed_csvs[0].filename() == "small_seed0.csv");
  CHECK(a.summary_csv.filename() == "small_summary.csv");
  for (std::size_t i = 0; i < 2; ++i) CHECK(fixture::read_text(a.seed_csvs[i]) == fixture::read_text(b.seed_csvs[i]));
  CHECK(fixture::read_text(a.summary_csv) == fixture::read_text(b.summary_csv));
  CHECK(fixture::read_text(a.seed_csvs[1]) == fixture::read_text(solo.seed_csvs[0]));

  // Every seed actually attacked, with the configured count.
  for (const auto& s : a.seeds) CHECK(s.attack_rounds.size() == 3);
  CHECK(a.seeds[0].attack_rounds != a.seeds[1].attack_rounds);

  // Recomputing from the CSVs reproduces the summary file exactly.
  std::vector<SeedMetrics> again;
  for (const auto& path : a.seed_csvs) {
    const RoundCsv csv = read_round_csv(path);
    SeedMetrics m = compute_metrics(csv.records, attack_rounds_of(csv.records));
    m.config_tag = "small";
    m.seed = csv.seed;
    again.push_back(m);
  }
  const auto from_file = read_summary_csv(a.summary_csv, true);
  const MetricsSummary recomputed = summarize(again);
  REQUIRE(from_file.size() == 3);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(summary_row(from_file[i], std::to_string(from_file[i].seed)) ==
          summary_row(recomputed.per_seed[i], std::to_string(recomputed.per_seed[i].seed)));
  }
  CHECK(summary_row(from_file[2], kMeanSeedLabel) == summary_row(recomputed.mean, kMeanSeedLabel));
}

TEST_CASE("sweeps write one summary row group per value") {
  const auto dir = fixture::scratch_dir("harness_sweep");
  const auto cfg = dir / "small.json";
  fixture::write_text(cfg, small_run("[0]", dir / "out"));
  const SweepResult s = run_sweep(cfg, {}, "m_prime", {"2", "4"}, 0);
  REQUIRE(s.runs.size() == 2);
  CHECK(s.summary_csv.filename() == "small_sweep-m_prime_summary.csv");
  const auto rows = read_summary_csv(s.summary_csv, true);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].param_value == "2");
  CHECK(rows[2].param_value == "4");
  CHECK(s.runs[0].seed_csvs[0].filename() == "small_m_prime-2_seed0.csv");
}

TEST_CASE("thread count from the environment") {
  ::setenv("FEDSIM_THREADS", "0", 1);
  CHECK(threads_from_env() == 0);
  ::setenv("FEDSIM_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  ::setenv("FEDSIM_THREADS", "lots", 1);
  CHECK_THROWS(threads_from_env());
  ::unsetenv("FEDSIM_THREADS");
  CHECK(threads_from_env() >= 1);
}

TEST_CASE("seed failures are labeled with the seed") {
  ExperimentConfig c = parse_config_text(small_run("[5]", fixture::scratch_dir("harness_fail")));
  c.dataset.source = DatasetConfig::Source::csv;
  c.dataset.path = "/nonexistent/data.csv";
  c.dataset.geometry = data::Geometry{4, 4, 1};
  try {
    run_seed(c, 5);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).rfind("seed 5: ", 0) == 0);
  }
}
