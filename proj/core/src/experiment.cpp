#include "fedsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedsim/rng.hpp"

namespace fedsim::harness {

namespace {

data::Dataset with_geometry(const data::Dataset& ds, const std::optional<data::Geometry>& g) {
  return data::Dataset(ds.features(), ds.labels(), ds.num_classes(), g);
}

struct Splits {
  data::Dataset train, test, attacker;
};

Splits load_splits(const DatasetConfig& d) {
  if (d.source == DatasetConfig::Source::synthetic) {
    const auto train = data::generate_synthetic(d.num_classes, d.input_dim, d.train_per_class, d.separation,
                                                derive_seed(d.seed, {kTagTrainData}));
    const auto test = data::generate_synthetic(d.num_classes, d.input_dim, d.test_per_class, d.separation,
                                               derive_seed(d.seed, {kTagTestData}));
    const std::size_t per_class = std::max<std::size_t>(1, (d.attacker_size + d.num_classes - 1) / d.num_classes);
    auto attacker = data::generate_synthetic(d.num_classes, d.input_dim, per_class, d.separation,
                                             derive_seed(d.seed, {kTagAttackerData}));
    if (attacker.size() > d.attacker_size) {
      // Keep a class-balanced prefix: interleave classes before truncating.
      std::vector<std::size_t> idx;
      for (std::size_t s = 0; s < per_class; ++s) {
        for (std::size_t c = 0; c < d.num_classes; ++c) idx.push_back(c * per_class + s);
      }
      idx.resize(d.attacker_size);
      std::sort(idx.begin(), idx.end());
      attacker = attacker.subset(idx);
    }
    return {with_geometry(train, d.geometry), with_geometry(test, d.geometry),
            with_geometry(attacker, d.geometry)};
  }

  const auto full = data::load_csv(d.path, d.geometry);
  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(d.seed, {kTagTestData}));
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t cursor = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + n));
    cursor += n;
    std::sort(idx.begin(), idx.end());
    return full.subset(idx);
  };

  data::Dataset test;
  if (!d.test_path.empty()) {
    test = data::load_csv(d.test_path, d.geometry, full.num_classes());
  } else {
    const auto n = static_cast<std::size_t>(d.test_fraction * static_cast<double>(full.size()));
    if (n == 0) throw ConfigError("dataset.test_fraction: leaves no test rows");
    test = take(n);
  }
  if (cursor + d.attacker_size >= full.size()) {
    throw ConfigError("dataset.attacker_size: exceeds the rows left after the test split");
  }
  data::Dataset attacker = take(d.attacker_size);
  data::Dataset train = take(full.size() - cursor);
  return {std::move(train), std::move(test), std::move(attacker)};
}

fed::RoundRecord quantized(fed::RoundRecord r) {
  r.main_acc = quantize6(r.main_acc);
  r.backdoor_acc = quantize6(r.backdoor_acc);
  r.update_norms = {quantize6(r.mean_update_norm())};
  return r;
}

}  // namespace

SeedWorld build_world(const ExperimentConfig& cfg, std::uint64_t seed) {
  Splits s = load_splits(cfg.dataset);
  ModelSpec spec = cfg.model;
  spec.input_dim = s.train.dim();
  spec.num_classes = s.train.num_classes();
  data::validate_trigger(*s.train.geometry(), cfg.dataset.trigger, spec.num_classes);

  Model model(spec);
  const std::uint64_t pseed = derive_seed(seed, {kTagPartition});
  data::Partition partition = cfg.dataset.split == DatasetConfig::Split::iid
                                  ? data::partition_iid(s.train, cfg.fed.num_users, pseed)
                                  : data::partition_dirichlet(s.train, cfg.fed.num_users, cfg.dataset.alpha, pseed);
  attack::AttackerData attacker = attack::make_attacker_data(s.attacker, cfg.dataset.trigger);
  const data::Dataset backdoor_test = data::make_backdoor_set(s.test, cfg.dataset.trigger, /*exclude_target=*/true);
  fed::EvalSets eval{s.test.all(), backdoor_test.all(), cfg.dataset.trigger.target_class};
  ParamVector initial = model.init_params(derive_seed(seed, {kTagInit}));
  return SeedWorld{std::move(model),     std::move(s.train), std::move(s.test),    std::move(partition),
                   std::move(attacker), std::move(eval),    std::move(initial)};
}

std::string file_stem(const std::string& tag, const std::string& param_name, const std::string& param_value) {
  if (param_name.empty()) return tag;
  std::string key = param_name;
  std::replace(key.begin(), key.end(), '.', '-');
  return tag + "_" + key + "-" + param_value;
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& options) {
  try {
    const SeedWorld world = build_world(cfg, seed);
    fed::FedConfig fc = cfg.fed;
    fc.seed = seed;
    attack::AttackPlan plan = cfg.attack;
    SeedRun run;
    run.seed = seed;
    run.attack_rounds = cfg.schedule.resolve(seed, fc.total_rounds);
    plan.attack_rounds = run.attack_rounds;

    fed::TrainingSetup setup;
    setup.model = &world.model;
    setup.train = &world.train;
    setup.partition = &world.partition;
    setup.attacker = &world.attacker;
    setup.eval = world.eval;
    setup.initial = world.initial;
    setup.eval_every = cfg.eval_every;

    if (cfg.pretrain_rounds > 0) {
      fed::FedConfig pc = fc;
      pc.seed = derive_seed(seed, {kTagPretrain});
      pc.total_rounds = cfg.pretrain_rounds;
      fed::TrainingSetup warm = setup;
      warm.eval_every = cfg.pretrain_rounds;
      ParamVector last = setup.initial;
      fed::run_training(pc, warm, attack::AttackPlan{}, defense::DefenseConfig{},
                        [&](const fed::RoundRecord&, const ParamVector& g) { last = g; });
      setup.initial = std::move(last);
    }

    for (auto& r : fed::run_training(fc, setup, plan, cfg.defense, options.observer)) run.records.push_back(quantized(std::move(r)));
    run.metrics = compute_metrics(run.records, run.attack_rounds);
    run.metrics.config_tag = cfg.tag;
    run.metrics.param_value = options.param_value;
    run.metrics.seed = seed;
    return run;
  } catch (const std::exception& e) {
    throw std::runtime_error("seed " + std::to_string(seed) + ": " + e.what());
  }
}

std::size_t threads_from_env() {
  const char* v = std::getenv("FEDSIM_THREADS");
  if (v == nullptr || *v == '\0') return std::max(1u, std::thread::hardware_concurrency());
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("FEDSIM_THREADS: not a non-negative integer: ") + v);
  return n;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  const std::size_t cap = options.threads.value_or(threads_from_env());
  const std::size_t workers = std::min(cfg.seeds.size(), std::max<std::size_t>(1, cap));

  RunResult result;
  result.seeds.resize(cfg.seeds.size());
  if (workers <= 1 || cap == 0) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) result.seeds[i] = run_seed(cfg, cfg.seeds[i], options);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
          try {
            result.seeds[i] = run_seed(cfg, cfg.seeds[i], options);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  std::vector<SeedMetrics> per_seed;
  for (const auto& s : result.seeds) per_seed.push_back(s.metrics);
  result.summary = summarize(std::move(per_seed));

  if (options.write_files) {
    std::filesystem::create_directories(cfg.output_dir);
    const std::string stem = file_stem(cfg.tag, options.param_name, options.param_value);
    for (const auto& s : result.seeds) {
      const auto path = cfg.output_dir / (stem + "_seed" + std::to_string(s.seed) + ".csv");
      write_round_csv(path, s.records, s.seed);
      result.seed_csvs.push_back(path);
    }
    result.summary_csv = cfg.output_dir / (stem + "_summary.csv");
    write_summary_csv(result.summary_csv, std::span(&result.summary, 1));
  }
  return result;
}

SweepResult run_sweep(const std::filesystem::path& config_path, const std::vector<Override>& overrides,
                      const std::string& key, const std::vector<std::string>& values,
                      std::optional<std::size_t> threads) {
  if (values.empty()) throw ConfigError(key + ": sweep needs at least one value");
  const std::string path = resolve_key(key);
  SweepResult sweep;
  ExperimentConfig last;
  for (const std::string& v : values) {
    std::vector<Override> ov = overrides;
    ov.emplace_back(path, v);
    last = parse_config(config_path, ov);
    RunOptions opt;
    opt.param_name = key;
    opt.param_value = v;
    opt.threads = threads;
    sweep.runs.push_back(run_experiment(last, opt));
  }
  std::vector<MetricsSummary> groups;
  for (const auto& r : sweep.runs) groups.push_back(r.summary);
  std::string k = key;
  std::replace(k.begin(), k.end(), '.', '-');
  sweep.summary_csv = last.output_dir / (last.tag + "_sweep-" + k + "_summary.csv");
  write_summary_csv(sweep.summary_csv, groups);
  return sweep;
}

}  // namespace fedsim::harness
