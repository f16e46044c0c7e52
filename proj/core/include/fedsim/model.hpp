#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class Activation { tanh, relu };

struct ModelSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;  // empty -> softmax-linear model
  std::size_t num_classes = 2;
  Activation activation = Activation::tanh;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class NormOrder { l1, l2, linf };

double norm(std::span<const double> v, NormOrder p);

/// One weight or bias block inside a flat parameter vector.
struct ParamSegment {
  std::size_t offset = 0;
  Shape shape;
  std::shared_ptr<const std::vector<std::size_t>> indices;  // offset .. offset+numel
};

/// Maps flat parameter offsets onto layer shapes: W0, b0, W1, b1, ...
/// Weights are (fan_in, fan_out) so logits = x W + b.
class ParamLayout {
 public:
  explicit ParamLayout(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return size_; }
  std::span<const ParamSegment> segments() const { return segments_; }
  std::size_t num_layers() const { return segments_.size() / 2; }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) { return a.spec_ == b.spec_; }

 private:
  ModelSpec spec_;
  std::vector<ParamSegment> segments_;
  std::size_t size_ = 0;
};

/// Flat model parameters. Arithmetic requires identical layouts.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout);
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values);

  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool compatible(const ParamVector& other) const;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double c);

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(ParamVector a, double c) { return a *= c; }
  friend ParamVector operator*(double c, ParamVector a) { return a *= c; }
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.compatible(b) && a.values_ == b.values_;
  }

  double norm(NormOrder p) const { return fedsim::norm(values_, p); }
  Tensor as_tensor() const { return Tensor::vector(values_); }

 private:
  void require_compatible(const ParamVector& other, const char* what) const;

  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

/// Labeled minibatch; labels are shared so graph nodes can reference them.
struct Batch {
  Tensor features;  // (rows, input_dim)
  std::shared_ptr<const std::vector<int>> labels;

  std::size_t size() const { return features.rows(); }
};

struct LossAndAcc {
  ad::Var loss;
  double accuracy = 0.0;
};

/// An MLP (or softmax-linear model) evaluated on the autodiff graph.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return layout_->spec(); }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  std::size_t num_params() const { return layout_->size(); }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
  ParamVector init_params(std::uint64_t seed) const;
  ParamVector zeros() const { return ParamVector(layout_); }

  /// Logits (rows, num_classes), differentiable with respect to `params`.
  ad::Var forward(ad::Var params, const Tensor& batch) const;
  LossAndAcc loss_and_acc(ad::Var params, const Batch& batch) const;

  /// Graph-free evaluation helpers.
  Tensor logits(const ParamVector& params, const Tensor& batch) const;
  double accuracy(const ParamVector& params, const Batch& batch) const;
  /// Fraction of rows predicted as `target`.
  double target_rate(const ParamVector& params, const Tensor& batch, int target) const;

  std::vector<Tensor> unflatten(const ParamVector& params) const;
  ParamVector flatten(std::span<const Tensor> blocks) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double argmax_accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace fedsim
