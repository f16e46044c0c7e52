#include "fedsim/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fedsim/rng.hpp"
#include "json.hpp"

namespace fedsim::harness {

using nlohmann::json;

namespace {

// Known keys per block. Nested objects are listed as leaves of their parent.
const std::map<std::string, std::vector<std::string>>& schema() {
  static const std::map<std::string, std::vector<std::string>> s = {
      {"", {"tag", "seeds", "output_dir", "eval_every", "dataset", "model", "fed", "attack", "defense"}},
      {"dataset",
       {"source", "num_classes", "input_dim", "train_per_class", "test_per_class", "separation", "seed",
        "path", "test_path", "test_fraction", "geometry", "split", "alpha", "attacker_size", "trigger"}},
      {"dataset.trigger", {"row", "col", "size", "value", "target_class"}},
      {"model", {"hidden", "activation"}},
      {"fed",
       {"num_users", "users_per_round", "local_steps", "local_lr", "batch_size", "clip_value",
        "norm_order", "total_rounds", "pretrain_rounds"}},
      {"attack",
       {"algorithm", "schedule", "k", "n_prime", "m_prime", "sim_local_steps", "attacker_lr", "variant",
        "clean_loss_weight", "mask_ratio", "noise_modeling", "optimizer", "exact_n_weighting"}},
      {"attack.schedule", {"type", "start", "count", "window", "rounds"}},
      {"defense", {"rule", "f", "select_count", "trim_count", "stack_norm_bound"}},
  };
  return s;
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Typed access to one JSON object; tracks which keys were read so leftovers
// can be reported as unknown.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
    const auto& known = schema().at(path_);
    for (const auto& [key, _] : j_.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) fail(key, "unknown key");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  std::string key_path(const std::string& key) const { return join(path_, key); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string where = key.empty() ? (path_.empty() ? std::string("<root>") : path_) : key_path(key);
    throw ConfigError(where + ": " + what);
  }

  std::size_t count(const std::string& key, std::size_t def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      fail(key, "must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) const { return count(key, def); }

  double real(const std::string& key, double def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }

  template <typename Enum>
  Enum choice(const std::string& key, Enum def, const std::vector<std::pair<std::string, Enum>>& opts) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    std::string s;
    if (v.is_string()) {
      s = v.get<std::string>();
    } else if (v.is_number()) {
      s = v.dump();
    } else {
      fail(key, "must be a string");
    }
    for (const auto& [name, value] : opts) {
      if (name == s) return value;
    }
    std::string allowed;
    for (const auto& [name, _] : opts) allowed += (allowed.empty() ? "" : ", ") + name;
    fail(key, "unknown value '" + s + "' (expected one of: " + allowed + ")");
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    if (!has(key)) return out;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "must be an array of non-negative integers");
    for (const json& e : v) {
      if (!e.is_number_unsigned()) fail(key, "must be an array of non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::optional<Block> child(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return Block(j_.at(key), key_path(key));
  }

  const json& raw(const std::string& key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string path_;
};

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply_override(json& root, const Override& ov) {
  const std::string path = resolve_key(ov.first);
  json* node = &root;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || (*node)[parts[i]].is_null()) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError(path + ": override target is not an object");
  }
  (*node)[parts.back()] = parse_value(ov.second);
}

DatasetConfig parse_dataset(const Block& b) {
  DatasetConfig d;
  d.source = b.choice<DatasetConfig::Source>("source", d.source,
                                             {{"synthetic", DatasetConfig::Source::synthetic},
                                              {"csv", DatasetConfig::Source::csv}});
  d.num_classes = b.count("num_classes", d.num_classes);
  d.input_dim = b.count("input_dim", d.input_dim);
  d.train_per_class = b.count("train_per_class", d.train_per_class);
  d.test_per_class = b.count("test_per_class", d.test_per_class);
  d.separation = b.real("separation", d.separation);
  d.seed = b.u64("seed", d.seed);
  d.path = b.text("path", "");
  d.test_path = b.text("test_path", "");
  d.test_fraction = b.real("test_fraction", d.test_fraction);
  d.split = b.choice<DatasetConfig::Split>("split", d.split,
                                           {{"iid", DatasetConfig::Split::iid},
                                            {"dirichlet", DatasetConfig::Split::dirichlet}});
  d.alpha = b.real("alpha", d.alpha);
  d.attacker_size = b.count("attacker_size", d.attacker_size);
  if (b.has("geometry")) {
    const auto g = b.counts("geometry");
    if (g.size() != 3) b.fail("geometry", "must be [height, width, channels]");
    d.geometry = data::Geometry{g[0], g[1], g[2]};
  }
  // Trigger defaults: 2x2 patch in the bottom-right corner, full intensity, class 0.
  std::optional<std::size_t> trigger_row, trigger_col;
  if (auto t = b.child("trigger")) {
    if (t->has("row")) trigger_row = t->count("row", 0);
    if (t->has("col")) trigger_col = t->count("col", 0);
    d.trigger.size = t->count("size", d.trigger.size);
    d.trigger.value = t->real("value", d.trigger.value);
    const std::size_t target = t->count("target_class", 0);
    d.trigger.target_class = static_cast<int>(target);
  }

  const std::string p = "dataset";
  if (d.source == DatasetConfig::Source::synthetic) {
    check(d.num_classes >= 2, p + ".num_classes", "must be >= 2");
    check(d.input_dim >= 1, p + ".input_dim", "must be >= 1");
    check(d.train_per_class >= 1, p + ".train_per_class", "must be >= 1");
    check(d.test_per_class >= 1, p + ".test_per_class", "must be >= 1");
    check(d.separation >= 0.0, p + ".separation", "must be >= 0");
    if (!d.geometry) {
      const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d.input_dim))));
      d.geometry = side * side == d.input_dim ? data::Geometry{side, side, 1}
                                              : data::Geometry{1, d.input_dim, 1};
    }
    check(d.geometry->size() == d.input_dim, p + ".geometry", "does not match input_dim");
  } else {
    check(!d.path.empty(), p + ".path", "required for csv source");
    check(d.test_fraction > 0.0 && d.test_fraction < 1.0, p + ".test_fraction", "must lie in (0, 1)");
    check(d.geometry.has_value(), p + ".geometry", "required for csv source (trigger stamping)");
  }
  const data::Geometry& g = *d.geometry;
  d.trigger.row = trigger_row.value_or(g.height >= d.trigger.size ? g.height - d.trigger.size : 0);
  d.trigger.col = trigger_col.value_or(g.width >= d.trigger.size ? g.width - d.trigger.size : 0);
  check(d.alpha > 0.0, p + ".alpha", "must be > 0");
  check(d.attacker_size >= 1, p + ".attacker_size", "must be >= 1");
  check(d.trigger.size >= 1, p + ".trigger.size", "must be >= 1");
  check(d.trigger.value >= 0.0 && d.trigger.value <= 1.0, p + ".trigger.value", "must lie in [0, 1]");
  check(d.trigger.row + d.trigger.size <= d.geometry->height &&
            d.trigger.col + d.trigger.size <= d.geometry->width,
        p + ".trigger", "patch does not fit the geometry");
  if (d.source == DatasetConfig::Source::synthetic) {
    check(static_cast<std::size_t>(d.trigger.target_class) < d.num_classes, p + ".trigger.target_class",
          "out of range");
  }
  return d;
}

ModelSpec parse_model(const std::optional<Block>& b, std::size_t input_dim, std::size_t classes) {
  ModelSpec m;
  m.input_dim = input_dim;
  m.num_classes = classes;
  m.hidden_dims = {32};
  if (b) {
    if (b->has("hidden")) {
      m.hidden_dims = b->counts("hidden");
      for (std::size_t h : m.hidden_dims) check(h >= 1, "model.hidden", "dims must be >= 1");
    }
    m.activation = b->choice<Activation>("activation", m.activation,
                                         {{"tanh", Activation::tanh}, {"relu", Activation::relu}});
  }
  return m;
}

fed::FedConfig parse_fed(const std::optional<Block>& b) {
  fed::FedConfig f;
  if (!b) return f;
  f.num_users = b->count("num_users", f.num_users);
  f.users_per_round = b->count("users_per_round", f.users_per_round);
  f.local_steps = b->count("local_steps", f.local_steps);
  f.local_lr = b->real("local_lr", f.local_lr);
  f.batch_size = b->count("batch_size", f.batch_size);
  f.clip_value = b->real("clip_value", f.clip_value);
  f.norm_order = b->choice<NormOrder>("norm_order", f.norm_order,
                                      {{"l1", NormOrder::l1}, {"1", NormOrder::l1},
                                       {"l2", NormOrder::l2}, {"2", NormOrder::l2},
                                       {"linf", NormOrder::linf}, {"inf", NormOrder::linf}});
  f.total_rounds = b->count("total_rounds", f.total_rounds);
  return f;
}

void validate_fed(const fed::FedConfig& f) {
  check(f.num_users >= 1, "fed.num_users", "must be >= 1");
  check(f.users_per_round >= 1 && f.users_per_round <= f.num_users, "fed.users_per_round",
        "must lie in [1, num_users]");
  check(f.local_steps >= 1, "fed.local_steps", "must be >= 1");
  check(f.local_lr > 0.0, "fed.local_lr", "must be > 0");
  check(f.batch_size >= 1, "fed.batch_size", "must be >= 1");
  check(f.clip_value > 0.0, "fed.clip_value", "must be > 0");
  check(f.total_rounds >= 1, "fed.total_rounds", "must be >= 1");
}

}  // namespace

std::set<std::size_t> ScheduleConfig::resolve(std::uint64_t seed, std::size_t total_rounds) const {
  std::set<std::size_t> out;
  switch (type) {
    case Type::none:
      break;
    case Type::sequential:
      for (std::size_t r = start; r < start + count && r < total_rounds; ++r) out.insert(r);
      break;
    case Type::random: {
      std::vector<std::size_t> pool(window);
      std::iota(pool.begin(), pool.end(), start);
      Rng rng(derive_seed(seed, {kTagSchedule}));
      for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        out.insert(pool[i]);
      }
      break;
    }
    case Type::fixed:
      out.insert(rounds.begin(), rounds.end());
      break;
  }
  return out;
}

std::string resolve_key(std::string_view key) {
  const std::string k(key);
  if (k.find('.') != std::string::npos) {
    const auto dot = k.rfind('.');
    const std::string block = k.substr(0, dot);
    const std::string leaf = k.substr(dot + 1);
    const auto it = schema().find(block);
    if (it == schema().end() || std::find(it->second.begin(), it->second.end(), leaf) == it->second.end()) {
      throw ConfigError(k + ": unknown key");
    }
    return k;
  }
  std::vector<std::string> hits;
  for (const auto& [block, keys] : schema()) {
    if (std::find(keys.begin(), keys.end(), k) != keys.end()) hits.push_back(join(block, k));
  }
  if (hits.empty()) throw ConfigError(k + ": unknown key");
  if (hits.size() > 1) throw ConfigError(k + ": ambiguous key, use a dotted path");
  return hits.front();
}

ExperimentConfig parse_config_text(std::string_view text, const std::vector<Override>& overrides,
                                   const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: parse error: ") + e.what());
  }
  for (const auto& ov : overrides) apply_override(root, ov);

  const Block top(root, "");
  ExperimentConfig cfg;
  cfg.tag = top.text("tag", cfg.tag);
  check(!cfg.tag.empty() && cfg.tag.find_first_of(",/\\ ") == std::string::npos, "tag",
        "must be non-empty without commas, slashes or spaces");
  cfg.eval_every = top.count("eval_every", cfg.eval_every);
  check(cfg.eval_every >= 1, "eval_every", "must be >= 1");
  cfg.output_dir = top.text("output_dir", cfg.output_dir.string());
  if (cfg.output_dir.is_relative()) cfg.output_dir = base_dir / cfg.output_dir;

  if (!top.has("seeds")) top.fail("seeds", "required");
  for (std::size_t s : top.counts("seeds")) cfg.seeds.push_back(s);
  check(!cfg.seeds.empty(), "seeds", "must be non-empty");
  {
    auto sorted = cfg.seeds;
    std::sort(sorted.begin(), sorted.end());
    check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "seeds", "must be distinct");
  }

  if (!top.has("dataset")) top.fail("dataset", "required");
  cfg.dataset = parse_dataset(*top.child("dataset"));
  if (cfg.dataset.source == DatasetConfig::Source::csv) {
    if (cfg.dataset.path.is_relative()) cfg.dataset.path = base_dir / cfg.dataset.path;
    if (!cfg.dataset.test_path.empty() && cfg.dataset.test_path.is_relative()) {
      cfg.dataset.test_path = base_dir / cfg.dataset.test_path;
    }
  }
  const std::size_t dim = cfg.dataset.source == DatasetConfig::Source::synthetic
                              ? cfg.dataset.input_dim
                              : cfg.dataset.geometry->size();
  // For csv sources num_classes is the declared class count (labels are checked on load).
  cfg.model = parse_model(top.child("model"), dim, cfg.dataset.num_classes);
  cfg.fed = parse_fed(top.child("fed"));
  if (auto f = top.child("fed")) cfg.pretrain_rounds = f->count("pretrain_rounds", 0);
  validate_fed(cfg.fed);

  attack::AttackPlan& plan = cfg.attack;
  bool attacking = false;
  plan.sim_local_steps = cfg.fed.local_steps;
  if (auto a = top.child("attack")) {
    const std::string algo = a->text("algorithm", "none");
    const std::vector<std::pair<std::string, attack::Algorithm>> algos = {
        {"baseline", attack::Algorithm::baseline},
        {"anticipate", attack::Algorithm::anticipate},
        {"neurotoxin", attack::Algorithm::neurotoxin},
        {"anticipate_neurotoxin", attack::Algorithm::anticipate_neurotoxin}};
    if (algo != "none") {
      attacking = true;
      plan.algorithm = a->choice<attack::Algorithm>("algorithm", plan.algorithm, algos);
    }
    plan.k = a->count("k", plan.k);
    plan.n_prime = a->count("n_prime", plan.n_prime);
    plan.m_prime = a->count("m_prime", plan.m_prime);
    plan.sim_local_steps = a->count("sim_local_steps", plan.sim_local_steps);
    plan.attacker_lr = a->real("attacker_lr", plan.attacker_lr);
    plan.variant = a->choice<attack::Variant>("variant", plan.variant,
                                              {{"full", attack::Variant::full},
                                               {"A", attack::Variant::last_step},
                                               {"B", attack::Variant::random_prefix},
                                               {"C", attack::Variant::random_step}});
    plan.clean_loss_weight = a->real("clean_loss_weight", plan.clean_loss_weight);
    plan.mask_ratio = a->real("mask_ratio", plan.mask_ratio);
    plan.noise_modeling = a->flag("noise_modeling", plan.noise_modeling);
    plan.optimizer = a->choice<attack::Optimizer>("optimizer", plan.optimizer,
                                                  {{"adam", attack::Optimizer::adam},
                                                   {"sgd", attack::Optimizer::sgd}});
    plan.exact_n_weighting = a->flag("exact_n_weighting", plan.exact_n_weighting);

    if (auto s = a->child("schedule")) {
      ScheduleConfig& sc = cfg.schedule;
      sc.type = s->choice<ScheduleConfig::Type>("type", sc.type,
                                                {{"none", ScheduleConfig::Type::none},
                                                 {"sequential", ScheduleConfig::Type::sequential},
                                                 {"random", ScheduleConfig::Type::random},
                                                 {"fixed", ScheduleConfig::Type::fixed}});
      sc.start = s->count("start", sc.start);
      sc.count = s->count("count", sc.count);
      sc.window = s->count("window", sc.window);
      sc.rounds = s->counts("rounds");
      const std::size_t T = cfg.fed.total_rounds;
      switch (sc.type) {
        case ScheduleConfig::Type::none:
          break;
        case ScheduleConfig::Type::sequential:
          check(sc.count >= 1, "attack.schedule.count", "must be >= 1");
          check(sc.start + sc.count <= T, "attack.schedule", "extends past fed.total_rounds");
          break;
        case ScheduleConfig::Type::random:
          check(sc.count >= 1, "attack.schedule.count", "must be >= 1");
          check(sc.count <= sc.window, "attack.schedule.count", "must not exceed window");
          check(sc.start + sc.window <= T, "attack.schedule.window", "extends past fed.total_rounds");
          break;
        case ScheduleConfig::Type::fixed:
          check(!sc.rounds.empty(), "attack.schedule.rounds", "must be non-empty");
          for (std::size_t r : sc.rounds) check(r < T, "attack.schedule.rounds", "round out of range");
          break;
      }
    }
    if (attacking) {
      check(plan.m_prime >= 1, a->key_path("m_prime"), "must be >= 1");
      check(!(plan.uses_anticipation() && plan.k >= 1 && plan.n_prime < 1), a->key_path("n_prime"),
            "must be >= 1 when k >= 1");
      check(plan.attacker_lr > 0.0, a->key_path("attacker_lr"), "must be > 0");
      check(plan.clean_loss_weight >= 0.0, a->key_path("clean_loss_weight"), "must be >= 0");
      check(plan.mask_ratio >= 0.0 && plan.mask_ratio < 1.0, a->key_path("mask_ratio"),
            "must lie in [0, 1)");
      check(cfg.schedule.type != ScheduleConfig::Type::none, "attack.schedule",
            "required when an attack algorithm is set");
    } else {
      check(cfg.schedule.type == ScheduleConfig::Type::none, "attack.algorithm",
            "required when a schedule is set");
    }
  }
  if (!attacking) cfg.schedule = ScheduleConfig{};

  if (auto d = top.child("defense")) {
    defense::DefenseConfig& dc = cfg.defense;
    dc.rule = d->choice<defense::Rule>("rule", dc.rule,
                                       {{"norm_bound", defense::Rule::norm_bound},
                                        {"krum", defense::Rule::krum},
                                        {"multi_krum", defense::Rule::multi_krum},
                                        {"median", defense::Rule::median},
                                        {"trimmed_mean", defense::Rule::trimmed_mean}});
    dc.f = d->count("f", dc.f);
    if (d->has("select_count")) dc.select_count = d->count("select_count", 0);
    dc.trim_count = d->count("trim_count", dc.trim_count);
    dc.stack_norm_bound = d->flag("stack_norm_bound", dc.stack_norm_bound);
  }
  try {
    cfg.defense.validate(cfg.fed.users_per_round);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("defense: ") + e.what());
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides, path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace fedsim::harness
