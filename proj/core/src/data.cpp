#include "fedsim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "fedsim/rng.hpp"

namespace fedsim::data {

Dataset::Dataset(Tensor features, std::vector<int> labels, std::size_t num_classes,
                 std::optional<Geometry> geometry)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      geometry_(geometry) {
  if (features_.rank() != 2 || features_.rows() != labels_.size()) {
    throw DataError("Dataset: " + std::to_string(labels_.size()) + " labels for features of shape " +
                    shape_str(features_.shape()));
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes_) {
      throw DataError("Dataset: label " + std::to_string(labels_[i]) + " at row " +
                      std::to_string(i) + " out of range [0," + std::to_string(num_classes_) + ")");
    }
  }
  if (geometry_ && geometry_->size() != features_.cols()) {
    throw DataError("Dataset: geometry " + std::to_string(geometry_->height) + "x" +
                    std::to_string(geometry_->width) + "x" + std::to_string(geometry_->channels) +
                    " does not match feature dim " + std::to_string(features_.cols()));
  }
}

std::span<const double> Dataset::row(std::size_t i) const {
  return features_.data().subspan(i * dim(), dim());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Batch b = batch(indices);
  return Dataset(std::move(b.features), *b.labels, num_classes_, geometry_);
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  Tensor x(Shape{indices.size(), d});
  auto labels = std::make_shared<std::vector<int>>(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw DataError("Dataset::batch: index out of range");
    auto r = row(src);
    std::copy(r.begin(), r.end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    (*labels)[i] = labels_[src];
  }
  return Batch{std::move(x), std::move(labels)};
}

Batch Dataset::all() const {
  return Batch{features_, std::make_shared<const std::vector<int>>(labels_)};
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(num_classes_, 0);
  for (int y : labels_) ++h[static_cast<std::size_t>(y)];
  return h;
}

void Partition::validate(std::size_t rows) const {
  std::vector<char> seen(rows, 0);
  std::size_t total = 0;
  for (std::size_t u = 0; u < shards.size(); ++u) {
    if (shards[u].empty()) throw DataError("Partition: shard " + std::to_string(u) + " is empty");
    for (std::size_t i : shards[u]) {
      if (i >= rows) throw DataError("Partition: index out of range");
      if (seen[i]) throw DataError("Partition: index " + std::to_string(i) + " assigned twice");
      seen[i] = 1;
      ++total;
    }
  }
  if (total != rows) throw DataError("Partition: shards do not cover the dataset");
}

Dataset generate_synthetic(std::size_t num_classes, std::size_t input_dim,
                           std::size_t samples_per_class, double class_separation,
                           std::uint64_t seed) {
  if (num_classes < 2 || input_dim < 1 || samples_per_class < 1 || class_separation < 0.0) {
    throw std::invalid_argument("generate_synthetic: invalid arguments");
  }
  const std::size_t block = std::max<std::size_t>(1, input_dim / num_classes);
  const double amplitude =
      class_separation * kSyntheticNoiseStd / std::sqrt(2.0 * static_cast<double>(block));

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, kSyntheticNoiseStd);
  const std::size_t rows = num_classes * samples_per_class;
  Tensor x(Shape{rows, input_dim});
  std::vector<int> labels(rows);
  std::vector<double> mean(input_dim);
  std::size_t r = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::fill(mean.begin(), mean.end(), 0.5);
    for (std::size_t t = 0; t < block; ++t) mean[(c * block + t) % input_dim] += amplitude;
    for (std::size_t s = 0; s < samples_per_class; ++s, ++r) {
      for (std::size_t j = 0; j < input_dim; ++j) {
        x.at(r, j) = std::clamp(mean[j] + noise(rng), 0.0, 1.0);
      }
      labels[r] = static_cast<int>(c);
    }
  }
  return Dataset(std::move(x), std::move(labels), num_classes);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::optional<Geometry> geometry,
                 std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path.string());

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = path.string() + ": row " + std::to_string(line_no);
    if (cells.size() < 2) throw DataError(where + ": expected features and a label");
    if (width == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw DataError(where + ": has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(width));
    }
    for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
      const std::string_view cell = trim(cells[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw DataError(where + ": non-numeric cell " + std::to_string(c + 1) + " '" +
                        std::string(cell) + "'");
      }
      values.push_back(v);
    }
    const std::string_view cell = trim(cells.back());
    int y = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
      throw DataError(where + ": label '" + std::string(cell) + "' is not an integer");
    }
    if (y < 0 || (num_classes && static_cast<std::size_t>(y) >= *num_classes)) {
      throw DataError(where + ": label " + std::to_string(y) + " out of range");
    }
    labels.push_back(y);
  }
  if (labels.empty()) throw DataError("load_csv: " + path.string() + ": empty dataset");

  const std::size_t classes =
      num_classes ? *num_classes
                  : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  Tensor x(Shape{labels.size(), width - 1}, std::move(values));
  return Dataset(std::move(x), std::move(labels), std::max<std::size_t>(classes, 2), geometry);
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_csv: cannot open " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) out << v << ',';
    out << ds.labels()[i] << '\n';
  }
}

Partition partition_iid(const Dataset& ds, std::size_t num_users, std::uint64_t seed) {
  if (num_users == 0 || num_users > ds.size()) {
    throw DataError("partition_iid: need 1 <= num_users <= rows");
  }
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Partition p;
  p.shards.resize(num_users);
  const std::size_t base = ds.size() / num_users;
  const std::size_t extra = ds.size() % num_users;
  std::size_t pos = 0;
  for (std::size_t u = 0; u < num_users; ++u) {
    const std::size_t n = base + (u < extra ? 1 : 0);
    p.shards[u].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                       perm.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  return p;
}

namespace {

// Integer counts summing to `total`, proportional to `weights`.
std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t u = 0; u < weights.size(); ++u) {
    const double exact = weights[u] * static_cast<double>(total);
    const double fl = std::floor(exact);
    counts[u] = static_cast<std::size_t>(fl);
    assigned += counts[u];
    rema.emplace_back(exact - fl, u);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[rema[i % rema.size()].second];
  return counts;
}

}  // namespace

Partition partition_dirichlet(const Dataset& ds, std::size_t num_users, double alpha,
                              std::uint64_t seed) {
  if (!(alpha > 0.0)) throw DataError("partition_dirichlet: alpha must be > 0");
  if (num_users == 0 || num_users > ds.size()) {
    throw DataError("partition_dirichlet: num_users (" + std::to_string(num_users) +
                    ") exceeds rows (" + std::to_string(ds.size()) + ")");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels()[i])].push_back(i);
  }

  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Partition p;
  p.shards.resize(num_users);
  std::vector<double> w(num_users);
  for (auto& members : by_class) {
    double total = 0.0;
    for (double& x : w) {
      x = gamma(rng);
      total += x;
    }
    if (total > 0.0) {
      for (double& x : w) x /= total;
    } else {
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(num_users));
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = largest_remainder(w, members.size());
    std::size_t pos = 0;
    for (std::size_t u = 0; u < num_users; ++u) {
      for (std::size_t t = 0; t < counts[u]; ++t) p.shards[u].push_back(members[pos++]);
    }
  }

  for (std::size_t u = 0; u < num_users; ++u) {
    if (!p.shards[u].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t v = 1; v < num_users; ++v) {
      if (p.shards[v].size() > p.shards[largest].size()) largest = v;
    }
    p.shards[u].push_back(p.shards[largest].back());
    p.shards[largest].pop_back();
  }
  return p;
}

void validate_trigger(const Geometry& geometry, const TriggerSpec& trigger, std::size_t num_classes) {
  if (trigger.size == 0 || trigger.row + trigger.size > geometry.height ||
      trigger.col + trigger.size > geometry.width) {
    throw DataError("trigger: patch (" + std::to_string(trigger.row) + "," +
                    std::to_string(trigger.col) + "," + std::to_string(trigger.size) +
                    ") does not fit geometry " + std::to_string(geometry.height) + "x" +
                    std::to_string(geometry.width));
  }
  if (trigger.target_class < 0 || static_cast<std::size_t>(trigger.target_class) >= num_classes) {
    throw DataError("trigger: target class " + std::to_string(trigger.target_class) + " out of range");
  }
  if (trigger.value < 0.0 || trigger.value > 1.0) {
    throw DataError("trigger: patch value must lie in [0,1]");
  }
}

std::pair<std::vector<double>, int> apply_trigger(std::span<const double> x, const Geometry& geometry,
                                                  const TriggerSpec& trigger) {
  if (x.size() != geometry.size()) throw DataError("apply_trigger: row does not match geometry");
  if (trigger.row + trigger.size > geometry.height || trigger.col + trigger.size > geometry.width ||
      trigger.size == 0) {
    throw DataError("apply_trigger: patch out of bounds");
  }
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t r = trigger.row; r < trigger.row + trigger.size; ++r) {
    for (std::size_t c = trigger.col; c < trigger.col + trigger.size; ++c) {
      for (std::size_t ch = 0; ch < geometry.channels; ++ch) {
        out[(r * geometry.width + c) * geometry.channels + ch] = trigger.value;
      }
    }
  }
  return {std::move(out), trigger.target_class};
}

Dataset make_backdoor_set(const Dataset& ds, const TriggerSpec& trigger, bool exclude_target) {
  if (!ds.geometry()) throw DataError("make_backdoor_set: dataset has no geometry");
  validate_trigger(*ds.geometry(), trigger, ds.num_classes());
  std::vector<double> values;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (exclude_target && ds.labels()[i] == trigger.target_class) continue;
    auto [row, y] = apply_trigger(ds.row(i), *ds.geometry(), trigger);
    values.insert(values.end(), row.begin(), row.end());
    labels.push_back(y);
  }
  Tensor x(Shape{labels.size(), ds.dim()}, std::move(values));
  return Dataset(std::move(x), std::move(labels), ds.num_classes(), ds.geometry());
}

double mean_chi2_heterogeneity(const Dataset& ds, const Partition& partition) {
  const auto global = ds.class_histogram();
  const double n = static_cast<double>(ds.size());
  double acc = 0.0;
  for (const auto& shard : partition.shards) {
    std::vector<double> local(ds.num_classes(), 0.0);
    for (std::size_t i : shard) local[static_cast<std::size_t>(ds.labels()[i])] += 1.0;
    const double m = static_cast<double>(shard.size());
    double chi = 0.0;
    for (std::size_t c = 0; c < local.size(); ++c) {
      const double q = static_cast<double>(global[c]) / n;
      if (q == 0.0) continue;
      const double diff = local[c] / m - q;
      chi += diff * diff / q;
    }
    acc += chi;
  }
  return acc / static_cast<double>(partition.num_users());
}

}  // namespace fedsim::data
