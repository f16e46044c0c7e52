#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/tensor.hpp"

namespace fixture {

inline fedsim::Tensor random_tensor(fedsim::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  fedsim::Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (int& v : y) v = u(rng);
  return y;
}

inline fedsim::Batch make_batch(fedsim::Tensor x, std::vector<int> y) {
  return fedsim::Batch{std::move(x), std::make_shared<const std::vector<int>>(std::move(y))};
}

inline std::vector<std::vector<double>> rows_of(const fedsim::Tensor& x) {
  std::vector<std::vector<double>> out(x.rows(), std::vector<double>(x.cols()));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out[r][c] = x.at(r, c);
  }
  return out;
}

/// Random dataset with uniform features in [0,1] and a square-ish geometry.
inline fedsim::data::Dataset random_dataset(std::size_t rows, std::size_t h, std::size_t w, std::size_t classes,
                                            std::mt19937_64& rng) {
  fedsim::Tensor x = random_tensor({rows, h * w}, rng, 0.0, 1.0);
  return fedsim::data::Dataset(std::move(x), random_labels(rows, classes, rng), classes,
                               fedsim::data::Geometry{h, w, 1});
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fedsim_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixture
