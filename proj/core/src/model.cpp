#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace fedsim {

void ModelSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("ModelSpec: input_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("ModelSpec: num_classes must be >= 2");
  for (std::size_t h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("ModelSpec: hidden dims must be >= 1");
  }
}

double norm(std::span<const double> v, NormOrder p) {
  switch (p) {
    case NormOrder::l1: {
      double s = 0.0;
      for (double x : v) s += std::abs(x);
      return s;
    }
    case NormOrder::l2: {
      double s = 0.0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    }
    case NormOrder::linf: {
      double s = 0.0;
      for (double x : v) s = std::max(s, std::abs(x));
      return s;
    }
  }
  return 0.0;
}

ParamLayout::ParamLayout(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::vector<std::size_t> dims;
  dims.push_back(spec_.input_dim);
  dims.insert(dims.end(), spec_.hidden_dims.begin(), spec_.hidden_dims.end());
  dims.push_back(spec_.num_classes);

  auto add_segment = [this](Shape shape) {
    ParamSegment seg;
    seg.offset = size_;
    const std::size_t n = shape_numel(shape);
    seg.shape = std::move(shape);
    auto idx = std::make_shared<std::vector<std::size_t>>(n);
    for (std::size_t i = 0; i < n; ++i) (*idx)[i] = size_ + i;
    seg.indices = std::move(idx);
    size_ += n;
    segments_.push_back(std::move(seg));
  };
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    add_segment(Shape{dims[l], dims[l + 1]});
    add_segment(Shape{1, dims[l + 1]});
  }
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(layout_ ? layout_->size() : 0, 0.0) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_ || values_.size() != layout_->size()) {
    throw std::invalid_argument("ParamVector: value count does not match layout");
  }
}

bool ParamVector::compatible(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  return layout_ && other.layout_ && *layout_ == *other.layout_;
}

void ParamVector::require_compatible(const ParamVector& other, const char* what) const {
  if (!compatible(other)) {
    throw std::invalid_argument(std::string("ParamVector ") + what + ": incompatible layouts");
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_compatible(other, "+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_compatible(other, "-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double c) {
  for (double& v : values_) v *= c;
  return *this;
}

Model::Model(ModelSpec spec) : layout_(std::make_shared<const ParamLayout>(std::move(spec))) {}

ParamVector Model::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamVector p(layout_);
  auto segs = layout_->segments();
  for (std::size_t s = 0; s < segs.size(); s += 2) {
    const ParamSegment& w = segs[s];
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.shape[0]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < shape_numel(w.shape); ++i) p[w.offset + i] = dist(rng);
  }
  return p;
}

ad::Var Model::forward(ad::Var params, const Tensor& batch) const {
  if (params.value().size() != layout_->size()) {
    throw ad::ShapeError("forward: expected " + std::to_string(layout_->size()) +
                         " parameters, got " + shape_str(params.shape()));
  }
  if (batch.rank() != 2 || batch.cols() != spec().input_dim) {
    throw ad::ShapeError("forward: batch shape " + shape_str(batch.shape()) +
                         " does not match input_dim " + std::to_string(spec().input_dim));
  }
  ad::Graph& g = params.graph();
  const std::size_t rows = batch.rows();
  ad::Var h = g.constant(batch);
  auto segs = layout_->segments();
  const std::size_t layers = layout_->num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const ParamSegment& ws = segs[2 * l];
    const ParamSegment& bs = segs[2 * l + 1];
    ad::Var w = ad::reshape(ad::index_select(params, ws.indices), ws.shape);
    ad::Var b = ad::reshape(ad::index_select(params, bs.indices), bs.shape);
    h = ad::add(ad::matmul(h, w), ad::broadcast_to(b, Shape{rows, ws.shape[1]}));
    if (l + 1 < layers) {
      h = spec().activation == Activation::tanh ? ad::tanh(h) : ad::relu(h);
    }
  }
  return h;
}

LossAndAcc Model::loss_and_acc(ad::Var params, const Batch& batch) const {
  if (!batch.labels || batch.labels->size() != batch.size()) {
    throw std::invalid_argument("loss_and_acc: label count does not match batch rows");
  }
  for (int y : *batch.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec().num_classes) {
      throw std::invalid_argument("loss_and_acc: label " + std::to_string(y) + " out of range");
    }
  }
  ad::Var logits = forward(params, batch.features);
  LossAndAcc out;
  out.accuracy = argmax_accuracy(logits.value(), *batch.labels);
  out.loss = ad::softmax_cross_entropy(logits, batch.labels);
  return out;
}

Tensor Model::logits(const ParamVector& params, const Tensor& batch) const {
  if (!params.layout() || !(*params.layout() == *layout_)) {
    throw std::invalid_argument("logits: parameter layout does not match model");
  }
  if (batch.rank() != 2 || batch.cols() != spec().input_dim) {
    throw ad::ShapeError("logits: batch shape " + shape_str(batch.shape()) +
                         " does not match input_dim " + std::to_string(spec().input_dim));
  }
  const std::size_t rows = batch.rows();
  Tensor h = batch;
  auto segs = layout_->segments();
  const std::size_t layers = layout_->num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const ParamSegment& ws = segs[2 * l];
    const ParamSegment& bs = segs[2 * l + 1];
    const std::size_t fan_in = ws.shape[0], fan_out = ws.shape[1];
    Tensor next(Shape{rows, fan_out});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < fan_out; ++j) next.at(r, j) = params[bs.offset + j];
      for (std::size_t i = 0; i < fan_in; ++i) {
        const double x = h.at(r, i);
        if (x == 0.0) continue;
        const std::size_t wrow = ws.offset + i * fan_out;
        for (std::size_t j = 0; j < fan_out; ++j) next.at(r, j) += x * params[wrow + j];
      }
    }
    if (l + 1 < layers) {
      for (double& v : next.data()) {
        v = spec().activation == Activation::tanh ? std::tanh(v) : std::max(v, 0.0);
      }
    }
    h = std::move(next);
  }
  return h;
}

double Model::accuracy(const ParamVector& params, const Batch& batch) const {
  if (batch.size() == 0) return 0.0;
  return argmax_accuracy(logits(params, batch.features), *batch.labels);
}

double Model::target_rate(const ParamVector& params, const Tensor& batch, int target) const {
  if (batch.rows() == 0) return 0.0;
  const Tensor z = logits(params, batch);
  return argmax_accuracy(z, std::vector<int>(batch.rows(), target));
}

std::vector<Tensor> Model::unflatten(const ParamVector& params) const {
  if (params.size() != layout_->size()) {
    throw std::invalid_argument("unflatten: parameter count does not match layout");
  }
  std::vector<Tensor> blocks;
  for (const ParamSegment& seg : layout_->segments()) {
    const auto n = static_cast<std::ptrdiff_t>(shape_numel(seg.shape));
    auto first = params.values().begin() + static_cast<std::ptrdiff_t>(seg.offset);
    blocks.emplace_back(seg.shape, std::vector<double>(first, first + n));
  }
  return blocks;
}

ParamVector Model::flatten(std::span<const Tensor> blocks) const {
  auto segs = layout_->segments();
  if (blocks.size() != segs.size()) {
    throw std::invalid_argument("flatten: expected " + std::to_string(segs.size()) + " blocks");
  }
  ParamVector p(layout_);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (blocks[s].shape() != segs[s].shape) {
      throw ad::ShapeError("flatten: block " + std::to_string(s) + " has shape " +
                           shape_str(blocks[s].shape()) + ", expected " + shape_str(segs[s].shape));
    }
    std::copy(blocks[s].data().begin(), blocks[s].data().end(),
              p.values().begin() + static_cast<std::ptrdiff_t>(segs[s].offset));
  }
  return p;
}

double argmax_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (rows == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (static_cast<int>(best) == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

}  // namespace fedsim
