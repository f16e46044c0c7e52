#include "fedsim/defenses.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedsim/fedavg.hpp"

namespace fedsim::defense {

namespace {

void require_nonempty(std::span<const ParamVector> updates, const char* what) {
  if (updates.empty()) throw std::invalid_argument(std::string(what) + ": empty update list");
  for (const auto& u : updates) {
    if (!u.compatible(updates[0])) {
      throw std::invalid_argument(std::string(what) + ": incompatible layouts");
    }
  }
}

void require_krum(std::size_t n, std::size_t f) {
  if (n < 2 * f + 3) {
    throw std::invalid_argument("krum: needs n >= 2f + 3 updates (n=" + std::to_string(n) +
                                ", f=" + std::to_string(f) + ")");
  }
}

double squared_distance(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<std::size_t> ranked_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

template <typename Reduce>
ParamVector per_coordinate(std::span<const ParamVector> updates, Reduce reduce) {
  ParamVector out(updates[0].layout());
  std::vector<double> column(updates.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t u = 0; u < updates.size(); ++u) column[u] = updates[u][i];
    std::sort(column.begin(), column.end());
    out[i] = reduce(column);
  }
  return out;
}

}  // namespace

void DefenseConfig::validate(std::size_t n) const {
  switch (rule) {
    case Rule::norm_bound:
    case Rule::median:
      break;
    case Rule::krum:
      require_krum(n, f);
      break;
    case Rule::multi_krum: {
      require_krum(n, f);
      const std::size_t m = select_count.value_or(n - f - 2);
      if (m < 1 || m > n - f) {
        throw std::invalid_argument("defense.select_count must lie in [1, n - f]");
      }
      break;
    }
    case Rule::trimmed_mean:
      if (2 * trim_count >= n) {
        throw std::invalid_argument("defense.trim_count: need 2 * trim_count < n (n=" +
                                    std::to_string(n) + ")");
      }
      break;
  }
}

std::vector<double> krum_scores(std::span<const ParamVector> updates, std::size_t f) {
  require_nonempty(updates, "krum");
  const std::size_t n = updates.size();
  require_krum(n, f);
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i * n + j] = dist[j * n + i] = squared_distance(updates[i], updates[j]);
    }
  }
  const std::size_t neighbours = n - f - 2;
  std::vector<double> scores(n, 0.0);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(dist[i * n + j]);
    }
    std::sort(row.begin(), row.end());
    scores[i] = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  return scores;
}

ParamVector krum(std::span<const ParamVector> updates, std::size_t f) {
  const auto scores = krum_scores(updates, f);
  return updates[ranked_by_score(scores).front()];
}

std::vector<std::size_t> multi_krum_selection(std::span<const ParamVector> updates, std::size_t f,
                                              std::size_t select_count) {
  const auto scores = krum_scores(updates, f);
  if (select_count < 1 || select_count > updates.size() - f) {
    throw std::invalid_argument("multi_krum: select_count must lie in [1, n - f]");
  }
  auto order = ranked_by_score(scores);
  order.resize(select_count);
  return order;
}

ParamVector multi_krum(std::span<const ParamVector> updates, std::size_t f, std::size_t select_count) {
  const auto chosen = multi_krum_selection(updates, f, select_count);
  ParamVector out(updates[0].layout());
  for (std::size_t i : chosen) out += updates[i];
  out *= 1.0 / static_cast<double>(chosen.size());
  return out;
}

ParamVector coordinate_median(std::span<const ParamVector> updates) {
  require_nonempty(updates, "coordinate_median");
  return per_coordinate(updates, [](const std::vector<double>& col) {
    const std::size_t n = col.size();
    return n % 2 == 1 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
  });
}

ParamVector trimmed_mean(std::span<const ParamVector> updates, std::size_t trim_count) {
  require_nonempty(updates, "trimmed_mean");
  if (2 * trim_count >= updates.size()) {
    throw std::invalid_argument("trimmed_mean: need 2 * trim_count < n");
  }
  return per_coordinate(updates, [trim_count](const std::vector<double>& col) {
    double s = 0.0;
    for (std::size_t i = trim_count; i < col.size() - trim_count; ++i) s += col[i];
    return s / static_cast<double>(col.size() - 2 * trim_count);
  });
}

Aggregate aggregate(const DefenseConfig& cfg, const ParamVector& global,
                    std::span<const ParamVector> updates, double clip, NormOrder p) {
  require_nonempty(updates, "aggregate");
  const bool clip_first = cfg.rule == Rule::norm_bound || cfg.stack_norm_bound;
  std::vector<ParamVector> deltas;
  deltas.reserve(updates.size());
  Aggregate out;
  for (const auto& u : updates) {
    ParamVector d = u - global;
    if (clip_first) fed::clip_delta_in_place(d.values(), clip, p);
    out.accepted_norms.push_back(d.norm(p));
    deltas.push_back(std::move(d));
  }

  ParamVector combined;
  switch (cfg.rule) {
    case Rule::norm_bound: {
      combined = ParamVector(global.layout());
      for (const auto& d : deltas) combined += d;
      combined *= 1.0 / static_cast<double>(deltas.size());
      break;
    }
    case Rule::krum:
      combined = krum(deltas, cfg.f);
      break;
    case Rule::multi_krum:
      combined = multi_krum(deltas, cfg.f, cfg.select_count.value_or(deltas.size() - cfg.f - 2));
      break;
    case Rule::median:
      combined = coordinate_median(deltas);
      break;
    case Rule::trimmed_mean:
      combined = trimmed_mean(deltas, cfg.trim_count);
      break;
  }
  out.model = global + combined;
  return out;
}

}  // namespace fedsim::defense
