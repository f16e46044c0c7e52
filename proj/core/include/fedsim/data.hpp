#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim::data {

/// Interpretation of a feature row as an image, stored height-major then
/// width then channel: index = (row * width + col) * channels + channel.
struct Geometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable labeled dataset; rows are examples.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor features, std::vector<int> labels, std::size_t num_classes,
          std::optional<Geometry> geometry = std::nullopt);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return features_.cols(); }
  std::size_t num_classes() const { return num_classes_; }
  const Tensor& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::optional<Geometry>& geometry() const { return geometry_; }
  std::span<const double> row(std::size_t i) const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
  std::vector<std::size_t> class_histogram() const;

 private:
  Tensor features_{Shape{0, 0}};
  std::vector<int> labels_;
  std::size_t num_classes_ = 0;
  std::optional<Geometry> geometry_;
};

/// One index list per user.
struct Partition {
  std::vector<std::vector<std::size_t>> shards;

  std::size_t num_users() const { return shards.size(); }
  /// Throws DataError unless shards are disjoint, non-empty, and cover [0, rows).
  void validate(std::size_t rows) const;
};

/// Square patch stamped onto a feature row (BadNets-style trigger).
struct TriggerSpec {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 2;
  double value = 1.0;
  int target_class = 0;
};

/// Gaussian class clusters; class c is offset on its own block of
/// coordinates so that the distance between any two class means is
/// `class_separation` noise standard deviations. Features are clipped to [0,1].
Dataset generate_synthetic(std::size_t num_classes, std::size_t input_dim,
                           std::size_t samples_per_class, double class_separation,
                           std::uint64_t seed);

/// Per-feature noise standard deviation used by generate_synthetic.
inline constexpr double kSyntheticNoiseStd = 0.1;

/// Rows of comma-separated floats followed by an integer label. When
/// `num_classes` is absent it is inferred as max label + 1.
Dataset load_csv(const std::filesystem::path& path, std::optional<Geometry> geometry = std::nullopt,
                 std::optional<std::size_t> num_classes = std::nullopt);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

Partition partition_iid(const Dataset& ds, std::size_t num_users, std::uint64_t seed);

/// For each class (ascending): draw user proportions from Dirichlet(alpha),
/// shuffle that class's examples, and deal them out by largest-remainder
/// rounding of the proportions. Empty shards then take one example from the
/// largest shard (lowest user id on ties).
Partition partition_dirichlet(const Dataset& ds, std::size_t num_users, double alpha,
                              std::uint64_t seed);

/// Stamps the trigger patch and returns the backdoor label.
std::pair<std::vector<double>, int> apply_trigger(std::span<const double> x, const Geometry& geometry,
                                                  const TriggerSpec& trigger);

void validate_trigger(const Geometry& geometry, const TriggerSpec& trigger, std::size_t num_classes);

/// Triggered copies of `ds`, all labeled trigger.target_class. With
/// `exclude_target`, examples whose true class is already the target are dropped.
Dataset make_backdoor_set(const Dataset& ds, const TriggerSpec& trigger, bool exclude_target);

/// Mean over users of the chi-square distance between each shard's class
/// distribution and the global one.
double mean_chi2_heterogeneity(const Dataset& ds, const Partition& partition);

}  // namespace fedsim::data
